"""Regression-ready views of trajectory data.

Snapshot pairs and Hankel matrices store samples as *columns*
(``dimension x time``); dictionaries follow the scikit-learn convention and
``transform`` row-sample arrays (``n_samples x n_features``).
"""

import itertools
from dataclasses import dataclass
from math import comb

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from .exceptions import InsufficientDataError, ShapeError, ValidationError
from .systems import Trajectory

__all__ = [
    "SnapshotPair",
    "HankelMatrix",
    "Dictionary",
    "PolynomialDictionary",
    "CallableDictionary",
    "snapshot_pairs",
    "hankel",
    "delay_embed",
    "monomial_exponents",
    "monomial_dictionary",
    "identity_dictionary",
    "custom_dictionary",
    "polynomial_dictionary",
    "example1_observables",
    "example1_eigenfunctions",
    "example4_lifting",
]


@dataclass(frozen=True)
class SnapshotPair:
    """Column-aligned data matrices: ``Xplus[:, j]`` follows ``X[:, j]``."""

    X: np.ndarray
    Xplus: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Xp = np.atleast_2d(np.asarray(self.Xplus, dtype=float))
        if X.shape != Xp.shape:
            raise ShapeError(f"X {X.shape} and Xplus {Xp.shape} differ in shape")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Xplus", Xp)

    @property
    def n_snapshots(self):
        return self.X.shape[1]


@dataclass(frozen=True)
class HankelMatrix:
    depth: int
    values: np.ndarray
    source_length: int


def _as_trajectories(data):
    if isinstance(data, Trajectory):
        return [data]
    if isinstance(data, np.ndarray):
        return [Trajectory(np.arange(len(data)), data)]
    return [d if isinstance(d, Trajectory) else Trajectory(np.arange(len(d)), d) for d in data]


def snapshot_pairs(trajectories):
    """Build ``(X, Xplus)`` from one or several uniformly sampled trajectories.

    Columns never straddle the boundary between two trajectories.
    """
    trajs = _as_trajectories(trajectories)
    X, Xp = [], []
    for traj in trajs:
        if len(traj) < 2:
            raise InsufficientDataError("a trajectory needs at least 2 samples")
        dt = np.diff(traj.times.astype(float))
        if not np.allclose(dt, dt[0], rtol=1e-9, atol=0):
            raise ValidationError("trajectory sampling must be uniform")
        X.append(traj.states[:-1].T)
        Xp.append(traj.states[1:].T)
    if not trajs:
        raise InsufficientDataError("no trajectories given")
    return SnapshotPair(np.hstack(X), np.hstack(Xp))


def hankel(series, L):
    """Depth-``L`` Hankel matrix ``H[i, j] = y[i + j]``."""
    y = np.asarray(series, dtype=float).ravel()
    T = y.size
    if L < 1:
        raise ShapeError("depth L must be at least 1")
    if L > T:
        raise ShapeError(f"depth L={L} exceeds series length {T}")
    values = np.lib.stride_tricks.sliding_window_view(y, L).T.copy()
    return HankelMatrix(L, values, T)


def delay_embed(series, N):
    """Delay vectors ``(y_k, ..., y_{k+N})`` as a trajectory."""
    y = np.asarray(series, dtype=float).ravel()
    if N < 1:
        raise ShapeError("number of delays N must be at least 1")
    if N >= y.size:
        raise ShapeError(f"N={N} requires more than {N} samples, got {y.size}")
    states = np.lib.stride_tricks.sliding_window_view(y, N + 1).copy()
    return Trajectory(np.arange(len(states)), states)


class Dictionary(BaseEstimator, TransformerMixin):
    """Vector of observables ``psi: R^n -> R^D`` with analytic Jacobian.

    Subclasses implement :meth:`transform` and :meth:`jacobian`. Calling the
    dictionary on a single state returns the lifted vector.
    """

    @property
    def input_dim(self):
        return self._input_dim

    @property
    def output_dim(self):
        return len(self._labels)

    @property
    def feature_labels(self):
        return self._labels

    def fit(self, X=None, y=None):
        if X is not None:
            X = check_array(X)
            if X.shape[1] != self.input_dim:
                raise ShapeError(f"expected {self.input_dim} features, got {X.shape[1]}")
        self.n_features_in_ = self.input_dim
        return self

    def __call__(self, x):
        x = np.asarray(x, dtype=float).reshape(1, -1)
        return self.transform(x)[0]

    def get_feature_names_out(self, input_features=None):
        return np.asarray(self._labels, dtype=object)

    def __sklearn_is_fitted__(self):
        return True

    def _check_X(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.input_dim:
            raise ShapeError(f"expected {self.input_dim} features, got {X.shape[1]}")
        return X


def monomial_exponents(n, max_degree, include_constant=False):
    """Exponent table of all monomials up to ``max_degree`` in graded-lex order.

    Within a degree, ``x1^2, x1*x2, x2^2`` ordering is used.
    """
    if max_degree < 1:
        raise ValidationError("max_degree must be at least 1")
    rows = [np.zeros(n, dtype=int)] if include_constant else []
    for d in range(1, max_degree + 1):
        for combo in itertools.combinations_with_replacement(range(n), d):
            e = np.zeros(n, dtype=int)
            for i in combo:
                e[i] += 1
            rows.append(e)
    return np.array(rows, dtype=int).reshape(-1, n)


def _monomial_label(e):
    parts = []
    for i, p in enumerate(e):
        if p == 1:
            parts.append(f"x{i + 1}")
        elif p > 1:
            parts.append(f"x{i + 1}^{p}")
    return "*".join(parts) if parts else "1"


def _poly_label(coeffs, exponents):
    terms = []
    for c, e in zip(coeffs, exponents):
        if c == 0:
            continue
        mono = _monomial_label(e)
        if mono == "1":
            body = f"{abs(c):g}"
        elif abs(c) == 1:
            body = mono
        else:
            body = f"{abs(c):g}*{mono}"
        sign = "-" if c < 0 else "+"
        terms.append((sign, body))
    if not terms:
        return "0"
    out = ("-" if terms[0][0] == "-" else "") + terms[0][1]
    for sign, body in terms[1:]:
        out += f" {sign} {body}"
    return out


class PolynomialDictionary(Dictionary):
    """Observables that are linear combinations of monomials.

    Parameters
    ----------
    exponents : array_like of int, shape (n_monomials, n_features)
        Monomial exponent table.
    coefficients : array_like, shape (n_outputs, n_monomials), optional
        Each lifted coordinate is ``coefficients @ monomials(x)``. Defaults
        to the identity (one coordinate per monomial).
    labels : sequence of str, optional
        Human-readable names; generated from the polynomials if omitted.
    name : str, optional
        Builtin name recorded when the dictionary is serialized.
    """

    def __init__(self, exponents, coefficients=None, labels=None, name="polynomial"):
        self.exponents = exponents
        self.coefficients = coefficients
        self.labels = labels
        self.name = name
        E = np.atleast_2d(np.asarray(exponents, dtype=int))
        if np.any(E < 0):
            raise ValidationError("exponents must be non-negative")
        C = np.eye(len(E)) if coefficients is None else np.atleast_2d(np.asarray(coefficients, dtype=float))
        if C.shape[1] != len(E):
            raise ShapeError(f"coefficients {C.shape} do not match {len(E)} monomials")
        self._E = E
        self._C = C
        self._input_dim = E.shape[1]
        if labels is None:
            self._labels = tuple(_poly_label(row, E) for row in C)
        else:
            self._labels = tuple(labels)
            if len(self._labels) != len(C):
                raise ShapeError("one label per lifted coordinate required")

    @property
    def exponent_table(self):
        return self._E.copy()

    @property
    def coefficient_table(self):
        return self._C.copy()

    def _monomials(self, X):
        return np.prod(X[:, None, :] ** self._E[None, :, :], axis=2)

    def transform(self, X):
        X = self._check_X(X)
        return self._monomials(X) @ self._C.T

    def jacobian(self, x):
        """Jacobian ``d psi / dx`` at one state, shape ``(n_outputs, n_features)``."""
        x = np.asarray(x, dtype=float).ravel()
        E = self._E
        dM = np.zeros((len(E), self.input_dim))
        for i in range(self.input_dim):
            Ei = E.copy()
            Ei[:, i] -= 1
            active = E[:, i] > 0
            Ei[~active, i] = 0
            dM[:, i] = np.where(active, E[:, i] * np.prod(x[None, :] ** Ei, axis=1), 0.0)
        return self._C @ dM

    def compose(self, coefficients, labels=None):
        """Dictionary of linear combinations ``coefficients @ psi``."""
        coefficients = np.atleast_2d(np.asarray(coefficients, dtype=float))
        return PolynomialDictionary(self._E, coefficients @ self._C, labels, name="polynomial")

    def has_constant(self):
        """Index of a coordinate identically equal to one, or ``None``."""
        const = np.all(self._E == 0, axis=1)
        for j, row in enumerate(self._C):
            if np.allclose(row[~const], 0) and np.isclose(row[const].sum(), 1.0):
                return j
        return None


class CallableDictionary(Dictionary):
    """Dictionary wrapping user functions and their gradients.

    The analytic gradients are compared with central finite differences at
    construction; a mismatch above ``check_tol`` raises
    :class:`~koopkit.exceptions.ValidationError`.
    """

    def __init__(self, functions, jacobians, labels=None, n_features=None,
                 check_tol=1e-4, random_state=0):
        self.functions = functions
        self.jacobians = jacobians
        self.labels = labels
        self.n_features = n_features
        self.check_tol = check_tol
        self.random_state = random_state
        if len(functions) != len(jacobians):
            raise ShapeError("one jacobian per function required")
        if n_features is None:
            # gradients have fixed length; probe with an oversized state
            probe = np.zeros(64)
            n_features = max(np.atleast_1d(j(probe)).size for j in jacobians)
        self._input_dim = int(n_features)
        if labels is None:
            self._labels = tuple(f"psi{i + 1}" for i in range(len(functions)))
        else:
            self._labels = tuple(labels)
            if len(self._labels) != len(functions):
                raise ShapeError("one label per function required")
        self._validate_jacobians()

    def _validate_jacobians(self):
        rng = np.random.default_rng(self.random_state)
        eps = 1e-6
        n = self.input_dim
        for x in rng.uniform(-1.0, 1.0, size=(5, n)):
            J = self.jacobian(x)
            fd = np.empty_like(J)
            for i in range(n):
                e = np.zeros(n)
                e[i] = eps
                fd[:, i] = (self(x + e) - self(x - e)) / (2 * eps)
            err = np.max(np.abs(J - fd))
            if err > self.check_tol:
                raise ValidationError(
                    f"supplied jacobian deviates from finite differences by {err:.3g} at x={x}"
                )

    def transform(self, X):
        X = self._check_X(X)
        return np.array([[float(f(x)) for f in self.functions] for x in X]).reshape(len(X), -1)

    def jacobian(self, x):
        x = np.asarray(x, dtype=float).ravel()
        return np.array([np.atleast_1d(j(x)).astype(float) for j in self.jacobians])


def monomial_dictionary(n, max_degree, include_constant=False):
    """All monomials of total degree ``1..max_degree`` (graded-lex order).

    The constant observable, when requested, comes first.
    """
    E = monomial_exponents(n, max_degree, include_constant)
    return PolynomialDictionary(E, name="monomials")


def identity_dictionary(n):
    return PolynomialDictionary(np.eye(n, dtype=int), name="identity")


def custom_dictionary(functions, jacobians, labels=None, n_features=None):
    return CallableDictionary(functions, jacobians, labels, n_features)


def polynomial_dictionary(terms, n_features, labels=None, name="polynomial"):
    """Build a :class:`PolynomialDictionary` from term lists.

    ``terms`` holds one list per lifted coordinate of
    ``(coefficient, exponent_tuple)`` pairs.
    """
    monos = []
    for row in terms:
        for _, e in row:
            e = tuple(int(v) for v in e)
            if len(e) != n_features:
                raise ShapeError(f"exponent {e} has wrong length")
            if e not in monos:
                monos.append(e)
    C = np.zeros((len(terms), len(monos)))
    for i, row in enumerate(terms):
        for c, e in row:
            C[i, monos.index(tuple(int(v) for v in e))] += c
    return PolynomialDictionary(np.array(monos, dtype=int).reshape(-1, n_features), C, labels, name)


def example1_observables():
    """``[x1, x2, x1^2]``: observables whose span is invariant for the example-1 map."""
    return polynomial_dictionary(
        [[(1.0, (1, 0))], [(1.0, (0, 1))], [(1.0, (2, 0))]], 2, ("x1", "x2", "x1^2"), "example1"
    )


def example1_eigenfunctions():
    """``[x1, x2 + x1^2, x1^2]``: exact eigenfunctions of the example-1 map."""
    return polynomial_dictionary(
        [[(1.0, (1, 0))], [(1.0, (0, 1)), (1.0, (2, 0))], [(1.0, (2, 0))]],
        2, ("x1", "x2 + x1^2", "x1^2"), "example1-eigen",
    )


def example4_lifting():
    """``[x1, x2 + x1^2, x1^2, 1]`` lifting of the bilinearizable control example."""
    return polynomial_dictionary(
        [[(1.0, (1, 0))], [(1.0, (0, 1)), (1.0, (2, 0))], [(1.0, (2, 0))], [(1.0, (0, 0))]],
        2, ("x1", "x2 + x1^2", "x1^2", "1"), "example4",
    )


def n_monomials(n, max_degree, include_constant=False):
    """Closed-form count ``C(n + d, d) - 1`` (+1 with the constant)."""
    return comb(n + max_degree, max_degree) - (0 if include_constant else 1)
