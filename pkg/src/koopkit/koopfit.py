"""Fit lifted linear (Koopman) models, extract spectra and predict.

A :class:`KoopmanModel` holds a dictionary ``psi``, a transition matrix ``A``
acting on lifted coordinates and a linear output map ``C``:

    z_0 = psi(x_0),   z_{k+1} = A z_k,   y_k = C z_k

For continuous-time (generator) models ``A`` is the generator ``G`` and
``z(t) = expm(G t) z_0``. A :class:`SpectralModel` is the same system in
eigenfunction coordinates ``phi = W psi`` with (block-)diagonal transition.
"""

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import linalg
from .embed import (
    Dictionary,
    PolynomialDictionary,
    SnapshotPair,
    hankel,
    identity_dictionary,
    monomial_exponents,
    snapshot_pairs,
)
from .exceptions import (
    InsufficientDataError,
    InsufficientDataWarning,
    PoorConjugacyWarning,
    ShapeError,
    ValidationError,
)
from .systems import DiscreteMap, VectorField

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())

__all__ = [
    "KoopmanModel",
    "SpectralModel",
    "Eigenpair",
    "EigenpairSet",
    "ConjugacyMap",
    "fit_dmd",
    "fit_edmd",
    "fit_generator_edmd",
    "extract_spectrum",
    "spectral_model_from_eigenfunctions",
    "predict",
    "fit_conjugacy",
    "eigenpair_products",
    "hankel_dmd",
]

DISCRETE = "discrete"
CONTINUOUS = "continuous"


@dataclass
class KoopmanModel:
    """Lifted linear model ``(A, C, psi)``.

    Attributes
    ----------
    dictionary : Dictionary
        Lifting ``psi``.
    A : ndarray, shape (D, D)
        Transition matrix (discrete kind) or generator (continuous kind).
    C : ndarray, shape (m, D)
        Output matrix.
    kind : {"discrete", "continuous"}
    ts : float or None
        Sampling time of a discrete model, or the default prediction step of
        a continuous one.
    status : list of str
        Non-fatal diagnostics recorded during fitting.
    info : dict
        Fit residuals and other metadata.
    """

    dictionary: Dictionary
    A: np.ndarray
    C: np.ndarray
    kind: str = DISCRETE
    ts: Optional[float] = None
    status: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.A = linalg.as_matrix(self.A, "A", square=True)
        self.C = linalg.as_matrix(self.C, "C")
        D = self.dictionary.output_dim
        if self.A.shape != (D, D):
            raise ShapeError(f"A has shape {self.A.shape}, dictionary has {D} outputs")
        if self.C.shape[1] != D:
            raise ShapeError(f"C has shape {self.C.shape}, expected {D} columns")
        if self.kind not in (DISCRETE, CONTINUOUS):
            raise ValidationError(f"unknown model kind {self.kind!r}")

    @property
    def n_outputs(self):
        return self.C.shape[0]

    def lift(self, X):
        return self.dictionary.transform(X)


@dataclass
class SpectralModel:
    """Koopman model in (generalized) eigenfunction coordinates.

    ``phi(x) = W @ psi(x)``, ``phi_{k+1} = Lambda phi_k`` (or
    ``d phi / dt = Lambda phi``) and ``y = V phi``. ``Lambda`` is diagonal
    unless ``block_sizes`` contains Jordan blocks larger than one.
    """

    transition: np.ndarray
    eigenfunction_coeffs: np.ndarray
    modes: np.ndarray
    dictionary: Dictionary
    time_kind: str = DISCRETE
    ts: Optional[float] = None
    block_sizes: Optional[Sequence[int]] = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.transition = np.atleast_2d(np.asarray(self.transition, dtype=complex))
        self.eigenfunction_coeffs = np.atleast_2d(np.asarray(self.eigenfunction_coeffs, dtype=complex))
        self.modes = np.atleast_2d(np.asarray(self.modes, dtype=complex))
        D = self.transition.shape[0]
        if self.eigenfunction_coeffs.shape != (D, self.dictionary.output_dim):
            raise ShapeError("eigenfunction_coeffs must be (D, dictionary outputs)")
        if self.modes.shape[1] != D:
            raise ShapeError("modes must have one column per eigenfunction")
        if self.block_sizes is None:
            self.block_sizes = tuple([1] * D)
        else:
            self.block_sizes = tuple(int(b) for b in self.block_sizes)

    @property
    def eigenvalues(self):
        return np.diag(self.transition).copy()

    @property
    def is_diagonal(self):
        return all(b == 1 for b in self.block_sizes)

    def eigenfunctions(self, X):
        """Evaluate all eigenfunctions at row samples, shape ``(N, D)``."""
        return self.dictionary.transform(X) @ self.eigenfunction_coeffs.T

    def eigenfunction(self, j):
        """Callable evaluating the ``j``-th eigenfunction."""
        w = self.eigenfunction_coeffs[j]
        dictionary = self.dictionary

        def phi(x):
            x = np.asarray(x, dtype=float)
            vals = dictionary.transform(np.atleast_2d(x)) @ w
            return vals[0] if x.ndim == 1 else vals

        return phi


@dataclass(frozen=True)
class Eigenpair:
    eigenvalue: complex
    function: Callable
    provenance: str = "fitted"
    multi_index: Optional[tuple] = None

    def __call__(self, x):
        return self.function(x)


@dataclass(frozen=True)
class EigenpairSet:
    """Ordered collection of eigenvalue / eigenfunction pairs."""

    pairs: tuple

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(self.pairs))

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]

    @property
    def eigenvalues(self):
        return np.array([p.eigenvalue for p in self.pairs])

    def evaluate(self, X):
        """Eigenfunction values at row samples, shape ``(N, len(self))``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.column_stack([np.asarray(p.function(X)).reshape(-1) for p in self.pairs])


class _DictionaryFunctional:
    """``x -> u^H psi(x)`` for a fixed coefficient vector."""

    def __init__(self, coeffs, dictionary):
        self.coeffs = np.asarray(coeffs)
        self.dictionary = dictionary

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        vals = self.dictionary.transform(np.atleast_2d(x)) @ self.coeffs
        if np.all(np.isreal(vals)):
            vals = vals.real
        return vals[0] if x.ndim == 1 else vals


class _ProductFunction:
    def __init__(self, factors, powers):
        self.factors = factors
        self.powers = powers

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = 1.0
        for f, p in zip(self.factors, self.powers):
            if p:
                out = out * np.asarray(f(x)) ** p
        if np.ndim(out) == 0 and x.ndim == 2:
            out = np.full(len(x), out)
        return out


@dataclass
class ConjugacyMap:
    """Near-identity change of coordinates ``d(x) = x + w(x)``.

    ``w(x) = coefficients @ basis(x)`` with a basis of degree-two-and-higher
    terms, so ``w(0) = 0`` and ``Dw(0) = 0``.
    """

    basis: Dictionary
    coefficients: np.ndarray
    linear_part: np.ndarray
    kind: str = DISCRETE
    residual: float = 0.0

    def residual_map(self, x):
        x = np.asarray(x, dtype=float)
        vals = self.basis.transform(np.atleast_2d(x)) @ self.coefficients.T
        return vals[0] if x.ndim == 1 else vals

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return x + self.residual_map(x)

    def as_dictionary(self):
        """``d`` as a :class:`PolynomialDictionary` (polynomial bases only)."""
        if not isinstance(self.basis, PolynomialDictionary):
            raise ValidationError("as_dictionary needs a polynomial basis")
        n = self.basis.input_dim
        E = np.vstack([np.eye(n, dtype=int), self.basis.exponent_table])
        C = np.hstack([np.eye(n), self.coefficients @ self.basis.coefficient_table])
        return PolynomialDictionary(E, C)


def _check_nonempty(pairs):
    if pairs.n_snapshots < 1 or pairs.X.size == 0:
        raise InsufficientDataError("at least one snapshot pair is required")


def fit_dmd(pairs, rank=None):
    """Vanilla DMD: ``A = Xplus @ pinv(X)``, optionally rank-truncated.

    Parameters
    ----------
    pairs : SnapshotPair or trajectories
    rank : int, optional
        Keep only the leading ``rank`` singular directions of ``X``.
    """
    if not isinstance(pairs, SnapshotPair):
        pairs = snapshot_pairs(pairs)
    _check_nonempty(pairs)
    X, Xp = pairs.X, pairs.Xplus
    n = X.shape[0]
    if rank is None:
        A = linalg.lstsq(X.T, Xp.T).T
    else:
        if rank < 1:
            raise ValidationError("rank must be at least 1")
        U, s, Vt = linalg.svd(X)
        cutoff = max(X.shape) * np.finfo(float).eps * s[0]
        r = int(np.sum(s[:rank] > cutoff))
        A = Xp @ (Vt[:r].T / s[:r]) @ U[:, :r].T
    dictionary = identity_dictionary(n)
    model = KoopmanModel(dictionary, A, np.eye(n), DISCRETE)
    model.info["method"] = "dmd"
    model.info["residuals"] = {
        "lifting": float(np.linalg.norm(Xp - A @ X)),
        "reconstruction": 0.0,
    }
    return model


def _lifted_pairs(data, dictionary, outputs):
    """Lifted snapshot matrices (row samples) and outputs for each X sample."""
    if isinstance(data, SnapshotPair):
        Xs, Xps = data.X.T, data.Xplus.T
    else:
        pairs = snapshot_pairs(data)
        Xs, Xps = pairs.X.T, pairs.Xplus.T
    if len(Xs) == 0:
        raise InsufficientDataError("at least one snapshot pair is required")
    Psi = dictionary.transform(Xs)
    Psip = dictionary.transform(Xps)
    if outputs is None:
        Y = Xs
    elif callable(outputs):
        Y = np.array([np.atleast_1d(outputs(x)) for x in Xs], dtype=float)
    else:
        Y = np.atleast_2d(np.asarray(outputs, dtype=float))
        if len(Y) != len(Xs):
            raise ShapeError("outputs must have one row per snapshot")
    return Psi, Psip, Y


def _flag_rank(Psi, model):
    D = Psi.shape[1]
    rank = np.linalg.matrix_rank(Psi)
    if rank < D:
        msg = f"lifted data has rank {rank} < {D} dictionary outputs; fit is not unique"
        model.status.append("insufficient-data")
        warnings.warn(msg, InsufficientDataWarning, stacklevel=3)
    model.info["data_rank"] = int(rank)


def fit_edmd(data, dictionary, outputs=None, ts=None):
    """Extended DMD with linear output reconstruction.

    ``A`` minimizes ``||psi(Xplus) - A psi(X)||_F`` and ``C`` minimizes
    ``||Y - C psi(X)||_F``; both are closed-form least squares.

    Parameters
    ----------
    data : Trajectory, sequence of Trajectory or arrays, or SnapshotPair
    dictionary : Dictionary
    outputs : callable, array_like or None
        Output function ``x -> y``, an ``(N, m)`` array aligned with the
        snapshots, or ``None`` for the full state.
    ts : float, optional
        Sampling time stored on the model.
    """
    Psi, Psip, Y = _lifted_pairs(data, dictionary, outputs)
    A = linalg.lstsq(Psi, Psip).T
    C = linalg.lstsq(Psi, Y).T
    model = KoopmanModel(dictionary, A, C, DISCRETE, ts)
    model.info["method"] = "edmd"
    model.info["residuals"] = {
        "lifting": float(np.linalg.norm(Psip - Psi @ A.T)),
        "reconstruction": float(np.linalg.norm(Y - Psi @ C.T)),
    }
    _flag_rank(Psi, model)
    return model


def fit_generator_edmd(states, state_derivatives, dictionary, outputs=None, ts=None):
    """Generator EDMD: ``G`` minimizes ``||J_psi(x) xdot - G psi(x)||_F``.

    ``states`` and ``state_derivatives`` are row-sample arrays.
    """
    X = np.atleast_2d(np.asarray(states, dtype=float))
    Xdot = np.atleast_2d(np.asarray(state_derivatives, dtype=float))
    if X.shape != Xdot.shape:
        raise ShapeError(f"states {X.shape} and derivatives {Xdot.shape} differ")
    if len(X) == 0:
        raise InsufficientDataError("no samples")
    Psi = dictionary.transform(X)
    dPsi = np.array([dictionary.jacobian(x) @ xd for x, xd in zip(X, Xdot)])
    if outputs is None:
        Y = X
    elif callable(outputs):
        Y = np.array([np.atleast_1d(outputs(x)) for x in X], dtype=float)
    else:
        Y = np.atleast_2d(np.asarray(outputs, dtype=float))
    G = linalg.lstsq(Psi, dPsi).T
    C = linalg.lstsq(Psi, Y).T
    model = KoopmanModel(dictionary, G, C, CONTINUOUS, ts)
    model.info["method"] = "generator"
    model.info["residuals"] = {
        "lifting": float(np.linalg.norm(dPsi - Psi @ G.T)),
        "reconstruction": float(np.linalg.norm(Y - Psi @ C.T)),
    }
    _flag_rank(Psi, model)
    return model


def extract_spectrum(model, cond_threshold=1e8):
    """Eigenvalues, eigenfunctions and modes of a fitted model.

    Right eigenvectors are unit-norm with first nonzero entry real positive;
    eigenfunction coefficients are the left eigenvectors scaled to be
    biorthogonal, so ``modes @ Lambda @ W == C @ A``. When the eigenvector
    matrix has condition number above ``cond_threshold`` the transition is
    returned in Jordan form instead.
    """
    A, C = model.A, model.C
    dec = linalg.eig(A)
    cond = dec.condition
    if cond <= cond_threshold:
        Lam = np.diag(dec.eigenvalues)
        T = dec.right_vectors
        W = dec.left_vectors.conj().T
        blocks = None
    else:
        log.info("eigenvector condition %.3g above %.3g; using Jordan form", cond, cond_threshold)
        Lam, T, blocks, _ = linalg.jordan_decomposition(A)
        W = np.linalg.inv(T)
    return SpectralModel(
        Lam, W, C @ T, model.dictionary, model.kind, model.ts, blocks,
        info={"eigenvector_condition": cond, "residual_bound": dec.residual_bound},
    )


def spectral_model_from_eigenfunctions(eigenvalues, eigenfunctions, modes, kind=DISCRETE, ts=None):
    """Spectral model whose dictionary already consists of eigenfunctions.

    ``eigenfunctions`` is a :class:`Dictionary`; the coefficient matrix is the
    identity.
    """
    lam = np.asarray(eigenvalues, dtype=complex)
    D = lam.size
    return SpectralModel(np.diag(lam), np.eye(D), modes, eigenfunctions, kind, ts)


def _clean(Y):
    Y = np.asarray(Y)
    if np.iscomplexobj(Y):
        scale = 1.0 + np.abs(Y)
        if np.all(np.abs(Y.imag) <= 1e-8 * scale):
            return Y.real
    return Y


def predict(model, x0, k, dt=None):
    """Multi-step output prediction ``y_0 .. y_k`` from one initial state.

    Uses ``C A^j psi(x0)`` for :class:`KoopmanModel` and
    ``V Lambda^j phi(x0)`` for :class:`SpectralModel`; continuous-kind
    models propagate with ``expm(G dt)`` where ``dt`` defaults to the
    model's ``ts`` (or 1).

    Returns
    -------
    ndarray, shape (k + 1, m)
    """
    if k < 0:
        raise ValidationError("k must be non-negative")
    x0 = np.asarray(x0, dtype=float).ravel()
    if isinstance(model, SpectralModel):
        z = model.eigenfunction_coeffs @ model.dictionary(x0)
        M, out, kind = model.transition, model.modes, model.time_kind
    else:
        z = model.dictionary(x0)
        M, out, kind = model.A, model.C, model.kind
    if kind == CONTINUOUS:
        step = dt if dt is not None else (model.ts or 1.0)
        M = linalg.expm(M * step)
    Y = np.empty((k + 1, out.shape[0]), dtype=np.result_type(M, out, z))
    for j in range(k + 1):
        Y[j] = out @ z
        z = M @ z
    return _clean(Y)


def _basis_is_nonlinear(basis):
    n = basis.input_dim
    zero = np.zeros(n)
    return np.allclose(basis(zero), 0.0, atol=1e-14) and np.allclose(basis.jacobian(zero), 0.0, atol=1e-14)


def fit_conjugacy(system, linear_part=None, basis=None, samples=None, tol=1e-6):
    """Learn a conjugacy to the linear part and the principal eigenfunctions.

    Discrete maps ``F = A x + e(x)`` solve, in the basis coefficients,

        w(F(x)) = A w(x) - e(x)

    Vector fields ``f = T x + r(x)`` minimize ``||J_d(x) f(x) - T d(x)||``
    with ``d(x) = x + w(x)``. Both are linear least squares.

    Parameters
    ----------
    system : DiscreteMap or VectorField
    linear_part : array_like, optional
        ``A`` (or ``T``); defaults to the finite-difference Jacobian at 0.
    basis : Dictionary
        Terms of degree two and higher only.
    samples : array_like, shape (N, n)
    tol : float
        RMS residual above which a :class:`PoorConjugacyWarning` is issued.

    Returns
    -------
    conjugacy : ConjugacyMap
    principles : EigenpairSet
        ``(lambda_j, u_j^H d(x))`` with ``u_j`` the left eigenvectors of the
        linear part.
    """
    if basis is None or samples is None:
        raise ValidationError("basis and samples are required")
    if not _basis_is_nonlinear(basis):
        raise ValidationError("basis must vanish with zero Jacobian at the origin")
    n = basis.input_dim
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    if X.shape[1] != n:
        raise ShapeError(f"samples must have {n} columns")
    if linear_part is None:
        linear_part = system.jacobian(np.zeros(n))
    A = linalg.as_matrix(linear_part, "linear_part", square=True, allow_complex=False)
    discrete = isinstance(system, DiscreteMap)
    if not discrete and not isinstance(system, VectorField):
        raise ValidationError("system must be a DiscreteMap or VectorField")
    I = np.eye(n)
    rows, rhs = [], []
    for x in X:
        fx = system(x)
        b = basis(x)
        if discrete:
            M = basis(fx)
        else:
            M = basis.jacobian(x) @ fx
        # column-major vec: vec(W M) = (M^T kron I) vec(W), vec(A W b) = (b^T kron A) vec(W)
        rows.append(np.kron(M[None, :], I) - np.kron(b[None, :], A))
        rhs.append(-(fx - A @ x))
    K = np.vstack(rows)
    r = np.concatenate(rhs)
    vecW = linalg.lstsq(K, r)
    W = vecW.reshape(n, basis.output_dim, order="F")
    res = float(np.sqrt(np.mean((K @ vecW - r) ** 2)))
    cmap = ConjugacyMap(basis, W, A, DISCRETE if discrete else CONTINUOUS, res)
    if res > tol:
        warnings.warn(
            f"conjugacy residual {res:.3g} exceeds tolerance {tol:.3g}; "
            "linear part may be resonant or the basis too small",
            PoorConjugacyWarning, stacklevel=2,
        )
    dec = linalg.eig(A)
    pairs = []
    for j, lam in enumerate(dec.eigenvalues):
        u = dec.left_vectors[:, j]
        f = _ConjugacyEigenfunction(u, cmap)
        idx = tuple(int(i == j) for i in range(n))
        lam = lam.real if lam.imag == 0 else lam
        pairs.append(Eigenpair(lam, f, "principle", idx))
    return cmap, EigenpairSet(pairs)


class _ConjugacyEigenfunction:
    def __init__(self, u, cmap):
        self.u = u
        self.cmap = cmap

    def __call__(self, x):
        d = self.cmap(x)
        vals = np.asarray(d) @ self.u.conj()
        if np.all(np.isreal(vals)):
            vals = np.real(vals)
        return vals


def eigenpair_products(principles, max_total_degree):
    """All products ``(prod lambda_i^n_i, prod phi_i^n_i)`` up to a total degree.

    Multi-indices are enumerated in graded order, e.g. for two factors and
    degree two: (1,0), (0,1), (2,0), (1,1), (0,2).
    """
    if max_total_degree < 1:
        raise ValidationError("max_total_degree must be at least 1")
    factors = list(principles)
    p = len(factors)
    if p == 0:
        return EigenpairSet(())
    out = []
    for e in monomial_exponents(p, max_total_degree):
        e = tuple(int(v) for v in e)
        if sum(e) == 1:
            src = factors[e.index(1)]
            out.append(Eigenpair(src.eigenvalue, src.function, src.provenance, e))
            continue
        lam = 1.0
        for f, k in zip(factors, e):
            lam = lam * f.eigenvalue**k
        fn = _ProductFunction([f.function for f in factors], e)
        out.append(Eigenpair(lam, fn, "product", e))
    return EigenpairSet(out)


def hankel_dmd(series, L, rank=None):
    """DMD on consecutive columns of the depth-``L`` Hankel matrix."""
    H = hankel(series, L).values
    if H.shape[1] < 2:
        raise InsufficientDataError("series too short for the requested depth")
    model = fit_dmd(SnapshotPair(H[:, :-1], H[:, 1:]), rank)
    model.info["method"] = "hankel"
    model.info["depth"] = L
    return model
