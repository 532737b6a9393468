"""Stability classification and Lyapunov / invariance checks on spectral models.

All certificates here are sample-based: they report what holds on the
supplied witness points and never claim a formal proof.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import linalg
from .exceptions import InstabilityError, ValidationError
from .koopfit import CONTINUOUS, DISCRETE, SpectralModel

__all__ = [
    "StabilityReport",
    "LyapunovCertificate",
    "InvarianceReport",
    "ConservedReport",
    "classify_stability",
    "synthesize_lyapunov",
    "pnorm_candidate",
    "check_zero_levelset_invariance",
    "find_conserved",
]

STABLE, MARGINAL, UNSTABLE = "stable", "marginal", "unstable"


@dataclass(frozen=True)
class StabilityReport:
    """Per-eigenvalue verdicts.

    ``margin`` is the smallest distance of an eigenvalue to the stability
    boundary (unit circle or imaginary axis), signed so that it is positive
    exactly when every eigenvalue is stable.
    """

    eigenvalues: np.ndarray
    verdicts: tuple
    overall: str
    margin: float
    time_kind: str

    def to_dict(self):
        return {
            "eigenvalues": [[float(v.real), float(v.imag)] for v in self.eigenvalues],
            "verdicts": list(self.verdicts),
            "overall": self.overall,
            "margin": self.margin,
            "time_kind": self.time_kind,
        }


def _eigenvalues_and_kind(spec):
    if isinstance(spec, SpectralModel):
        return spec.eigenvalues, spec.time_kind
    return np.atleast_1d(np.asarray(spec, dtype=complex)), DISCRETE


def classify_stability(spec, tol=1e-9, time_kind=None):
    """Classify each eigenvalue as stable, marginal or unstable.

    Discrete: ``|lambda| < 1 - tol`` stable, ``||lambda| - 1| <= tol``
    marginal. Continuous: ``Re s < -tol`` stable, ``|Re s| <= tol`` marginal.
    ``spec`` may also be a bare eigenvalue array (``time_kind`` then selects
    the interpretation, default discrete).
    """
    lam, kind = _eigenvalues_and_kind(spec)
    if time_kind is not None:
        kind = time_kind
    if kind == CONTINUOUS:
        dist = -lam.real
    else:
        dist = 1.0 - np.abs(lam)
    verdicts = tuple(STABLE if d > tol else (MARGINAL if d >= -tol else UNSTABLE) for d in dist)
    if all(v == STABLE for v in verdicts):
        overall = STABLE
    elif any(v == UNSTABLE for v in verdicts):
        overall = UNSTABLE
    else:
        overall = MARGINAL
    margin = float(np.min(dist)) if dist.size else np.inf
    if overall != STABLE:
        margin = min(margin, 0.0)
    return StabilityReport(lam, verdicts, overall, margin, kind)


@dataclass
class LyapunovCertificate:
    """Quadratic Lyapunov function ``V(x) = phi(x)^H P phi(x)``.

    ``witness`` holds the sample points and the worst deviation from the
    decrement identity ``V(F(x)) - V(x) = -||phi(x)||^2`` observed on them
    (filled by :meth:`verify`).
    """

    P: np.ndarray
    spectral: SpectralModel
    witness: dict = field(default_factory=dict)

    def phi(self, X):
        return self.spectral.eigenfunctions(np.atleast_2d(X))

    def value(self, x):
        x = np.asarray(x, dtype=float)
        Phi = self.phi(x)
        V = np.einsum("ni,ij,nj->n", Phi.conj(), self.P, Phi).real
        return V[0] if x.ndim == 1 else V

    __call__ = value

    def decrement_defect(self, X, step):
        """``V(F(x)) - V(x) + ||phi(x)||^2`` at row samples ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        FX = np.array([step(x) for x in X])
        Phi = self.phi(X)
        return self.value(FX) - self.value(X) + np.sum(np.abs(Phi) ** 2, axis=1)

    def verify(self, X, step):
        defect = self.decrement_defect(X, step)
        self.witness = {
            "n_samples": int(len(defect)),
            "max_abs_defect": float(np.max(np.abs(defect))) if defect.size else 0.0,
        }
        return self.witness


def synthesize_lyapunov(spec, samples=None, step=None):
    """Solve ``Lambda^H P Lambda - P + I = 0`` and build ``V = phi^H P phi``.

    If ``samples`` and the map ``step`` are supplied, the decrement identity
    is evaluated on them and recorded as the certificate's witness.

    Raises
    ------
    InstabilityError
        If any eigenvalue has modulus at least one.
    """
    if spec.time_kind != DISCRETE:
        raise ValidationError("synthesize_lyapunov needs a discrete-time spectral model")
    lam = spec.eigenvalues
    if lam.size and np.max(np.abs(lam)) >= 1.0:
        worst = lam[np.argmax(np.abs(lam))]
        raise InstabilityError(
            f"eigenvalue {worst:.6g} has modulus {abs(worst):.6g} >= 1; no certificate exists",
            eigenvalue=complex(worst),
        )
    L = spec.transition
    P = linalg.solve_discrete_lyapunov(L, np.eye(L.shape[0]))
    cert = LyapunovCertificate(P, spec)
    if samples is not None and step is not None:
        cert.verify(samples, step)
    return cert


def pnorm_candidate(eigenfunctions, p=2):
    """Candidate Lyapunov function ``(sum_i |phi_i(x)|^p)^(1/p)``.

    ``eigenfunctions`` may be a :class:`SpectralModel`, an object with an
    ``evaluate`` method (e.g. :class:`~koopkit.koopfit.EigenpairSet`), a
    single callable returning the vector ``phi(x)`` or a sequence of scalar
    callables.
    """
    if p < 1:
        raise ValidationError("p must be at least 1")
    if isinstance(eigenfunctions, SpectralModel):
        evaluate = eigenfunctions.eigenfunctions
    elif hasattr(eigenfunctions, "evaluate"):
        evaluate = eigenfunctions.evaluate
    elif callable(eigenfunctions):
        evaluate = lambda X: np.array([np.atleast_1d(eigenfunctions(x)) for x in X])
    else:
        fns = list(eigenfunctions)
        evaluate = lambda X: np.array([[f(x) for f in fns] for x in X])

    def V(x):
        x = np.asarray(x, dtype=float)
        Phi = np.abs(np.asarray(evaluate(np.atleast_2d(x))))
        out = np.sum(Phi**p, axis=1) ** (1.0 / p)
        return float(out[0]) if x.ndim == 1 else out

    return V


@dataclass(frozen=True)
class InvarianceReport:
    passed: bool
    max_violation: float
    n_on_set: int
    n_samples: int
    boundary_exits: Optional[int] = None

    def to_dict(self):
        return dict(self.__dict__)


def check_zero_levelset_invariance(eigenfunction, system, samples, tol=1e-12, box=None):
    """Check that ``{phi = 0}`` is mapped into itself on sample points.

    Samples with ``|phi(x)| <= tol`` are pushed through ``system`` (a map
    ``x -> F(x)``); the report carries the largest ``|phi(F(x))|`` among
    them. With ``box=(lower, upper)`` the number of images leaving the
    declared box is also reported.
    """
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    phi = eigenfunction.function if hasattr(eigenfunction, "function") else eigenfunction
    vals = np.abs(np.array([np.asarray(phi(x)).item() for x in X]))
    on_set = X[vals <= tol]
    images = np.array([system(x) for x in on_set]).reshape(len(on_set), -1)
    after = np.abs(np.array([np.asarray(phi(y)).item() for y in images])) if len(on_set) else np.zeros(0)
    worst = float(after.max()) if after.size else 0.0
    exits = None
    if box is not None:
        lo, hi = (np.broadcast_to(np.asarray(b, dtype=float), (X.shape[1],)) for b in box)
        outside = np.any((images < lo) | (images > hi), axis=1) if len(images) else np.zeros(0, bool)
        exits = int(np.sum(outside))
    return InvarianceReport(bool(worst <= tol), worst, int(len(on_set)), int(len(X)), exits)


@dataclass(frozen=True)
class ConservedReport:
    conserved: tuple
    trivial: tuple
    eigenvalues: np.ndarray


def find_conserved(spec, tol=1e-9, n_probe=16, random_state=0):
    """Eigenfunctions with eigenvalue 1 (discrete) or 0 (continuous).

    Constant eigenfunctions are reported under ``trivial`` rather than
    ``conserved``. Constancy is judged by evaluating on ``n_probe``
    deterministic random points in ``[-1, 1]^n``.
    """
    lam = spec.eigenvalues
    if spec.time_kind == CONTINUOUS:
        hits = np.flatnonzero(np.abs(lam) <= tol)
    else:
        hits = np.flatnonzero(np.abs(lam - 1.0) <= tol)
    rng = np.random.default_rng(random_state)
    probe = rng.uniform(-1.0, 1.0, size=(n_probe, spec.dictionary.input_dim))
    Phi = spec.eigenfunctions(probe)
    conserved, trivial = [], []
    for j in hits:
        col = Phi[:, j]
        spread = np.max(np.abs(col - col[0]))
        if spread <= 1e-10 * max(1.0, np.max(np.abs(col))):
            trivial.append(int(j))
        else:
            conserved.append(int(j))
    return ConservedReport(tuple(conserved), tuple(trivial), lam[hits])
