"""Benchmark dynamical systems, fixed-step integration and trajectories."""

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .exceptions import DivergenceError, ShapeError, ValidationError

__all__ = [
    "Trajectory",
    "DiscreteMap",
    "VectorField",
    "ControlAffineSystem",
    "example1_map",
    "example4_system",
    "cubic_decay",
    "integrate_rk4",
    "simulate_map",
]


@dataclass(frozen=True)
class Trajectory:
    """Time-indexed samples of a state (and optionally an input) signal.

    ``states`` has one row per sample. ``inputs``, when present, holds the
    input applied from each sample time until the next one.
    """

    times: np.ndarray
    states: np.ndarray
    inputs: Optional[np.ndarray] = None

    def __post_init__(self):
        times = np.asarray(self.times)
        if not np.issubdtype(times.dtype, np.integer):
            times = times.astype(float)
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states.reshape(-1, 1)
        if times.ndim != 1 or states.ndim != 2 or len(times) != len(states):
            raise ShapeError(
                f"times {times.shape} and states {states.shape} are inconsistent"
            )
        if len(times) > 1 and np.any(np.diff(times) <= 0):
            raise ValidationError("times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        if self.inputs is not None:
            inputs = np.asarray(self.inputs, dtype=float)
            if inputs.ndim == 1:
                inputs = inputs.reshape(-1, 1)
            if len(inputs) != len(times):
                raise ShapeError("inputs must have one row per sample")
            object.__setattr__(self, "inputs", inputs)

    def __len__(self):
        return len(self.times)

    @property
    def n_states(self):
        return self.states.shape[1]

    @property
    def n_inputs(self):
        return 0 if self.inputs is None else self.inputs.shape[1]


@dataclass(frozen=True)
class DiscreteMap:
    dimension: int
    step: Callable[[np.ndarray], np.ndarray]
    name: str = "map"
    params: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __call__(self, x):
        return np.asarray(self.step(np.asarray(x, dtype=float)), dtype=float)

    def jacobian(self, x, eps=1e-6):
        """Central finite-difference Jacobian."""
        x = np.asarray(x, dtype=float)
        cols = []
        for i in range(self.dimension):
            e = np.zeros(self.dimension)
            e[i] = eps
            cols.append((self(x + e) - self(x - e)) / (2 * eps))
        return np.column_stack(cols)


@dataclass(frozen=True)
class VectorField:
    dimension: int
    eval: Callable[[np.ndarray], np.ndarray]
    name: str = "field"
    params: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __call__(self, x):
        return np.asarray(self.eval(np.asarray(x, dtype=float)), dtype=float)

    def jacobian(self, x, eps=1e-6):
        x = np.asarray(x, dtype=float)
        cols = []
        for i in range(self.dimension):
            e = np.zeros(self.dimension)
            e[i] = eps
            cols.append((self(x + e) - self(x - e)) / (2 * eps))
        return np.column_stack(cols)


@dataclass(frozen=True)
class ControlAffineSystem:
    """``dx/dt = f(x) + sum_i g_i(x) u_i``, ``y = h(x)``."""

    drift: VectorField
    control_fields: Sequence[VectorField]
    output: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "control-affine"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "control_fields", tuple(self.control_fields))
        for g in self.control_fields:
            if g.dimension != self.drift.dimension:
                raise ShapeError("control fields must share the drift state dimension")

    @property
    def dimension(self):
        return self.drift.dimension

    @property
    def n_inputs(self):
        return len(self.control_fields)

    def __call__(self, x, u=None):
        dx = self.drift(x)
        if u is not None:
            u = np.atleast_1d(np.asarray(u, dtype=float))
            if len(u) != self.n_inputs:
                raise ShapeError(f"expected {self.n_inputs} inputs, got {len(u)}")
            for g, ui in zip(self.control_fields, u):
                if ui != 0.0:
                    dx = dx + g(x) * ui
        return dx

    def observe(self, x):
        x = np.asarray(x, dtype=float)
        return x.copy() if self.output is None else np.atleast_1d(self.output(x))


def example1_map(a, b):
    """Planar polynomial map with an exact three-dimensional eigenfunction lifting.

    ``x -> (a x1, b x2 + (b - a**2) x1**2)`` for ``a, b`` in ``[0, 1]``.
    ``metadata`` carries the known principal eigenpairs and the product pair
    ``(a**2, x1**2)``.
    """
    if not (0.0 <= a <= 1.0 and 0.0 <= b <= 1.0):
        raise ValidationError(f"a and b must lie in [0, 1], got a={a}, b={b}")
    k = b - a**2

    def step(x):
        return np.array([a * x[0], b * x[1] + k * x[0] ** 2])

    metadata = {
        "eigenpairs": [
            (a, lambda x: x[0]),
            (b, lambda x: x[1] + x[0] ** 2),
            (a**2, lambda x: x[0] ** 2),
        ],
        "eigenvalues": (a, b, a**2),
        "linearization": np.diag([a, b]),
        "conjugacy_residual": lambda x: np.array([0.0, x[0] ** 2]),
    }
    return DiscreteMap(2, step, "example1", {"a": a, "b": b}, metadata)


def example4_system(c, d):
    """Control-affine planar system that is bilinear in ``[x1, x2 + x1**2, x1**2, 1]``.

    Drift ``(c x1, d x2 + (d - c**2) x1**2)``, control fields
    ``g1 = (1, x1**2)`` and ``g2 = (0, 1)``, full-state output.
    """
    k = d - c**2

    drift = VectorField(
        2, lambda x: np.array([c * x[0], d * x[1] + k * x[0] ** 2]),
        "example4-drift", {"c": c, "d": d},
    )
    g1 = VectorField(2, lambda x: np.array([1.0, x[0] ** 2]), "g1")
    g2 = VectorField(2, lambda x: np.array([0.0, 1.0]), "g2")
    B1 = np.array([[0, 0, 0, 1], [2, 0, 1, 0], [2, 0, 0, 0], [0, 0, 0, 0]], dtype=float)
    B2 = np.zeros((4, 4))
    B2[1, 3] = 1.0
    metadata = {"lifting_labels": ("x1", "x2 + x1^2", "x1^2", "1"), "B": (B1, B2)}
    return ControlAffineSystem(drift, (g1, g2), None, "example4", metadata)


def cubic_decay():
    """Scalar non-hyperbolic field ``dx/dt = -x**3``.

    ``exp(-1 / (2 x**2))`` (continued by 0 at the origin) is an eigenfunction
    of its generator with eigenvalue -1.
    """

    def eigenfunction(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            out = np.where(x == 0.0, 0.0, np.exp(-0.5 / np.where(x == 0, 1.0, x) ** 2))
        return out if out.ndim else float(out)

    return VectorField(
        1, lambda x: -np.asarray(x, dtype=float) ** 3, "cubic_decay", {},
        {"eigenvalue": -1.0, "eigenfunction": eigenfunction},
    )


def _input_at(u, k, t, m):
    if u is None:
        return np.zeros(m)
    if callable(u):
        return np.atleast_1d(np.asarray(u(t), dtype=float))
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u.reshape(-1, 1) if m == 1 else u.reshape(1, -1)
    return u[min(k, len(u) - 1)]


def integrate_rk4(f, x0, t_end, dt, u=None, substeps=1):
    """Classical fixed-step fourth-order Runge-Kutta integration.

    Parameters
    ----------
    f : VectorField, ControlAffineSystem or callable
        Right-hand side. Plain callables are called as ``f(x)`` (or
        ``f(x, u)`` when ``u`` is given).
    x0 : array_like
        Initial state.
    t_end, dt : float
        Final time and sample spacing. ``round(t_end / dt)`` steps are taken.
    u : callable or array_like, optional
        Input signal, zero-order held over each sample interval. Either
        ``u(t) -> input`` evaluated at the start of each interval or an array
        with one row per interval.
    substeps : int
        RK4 steps per sample interval.

    Returns
    -------
    Trajectory
        Samples at ``0, dt, 2 dt, ...``; ``inputs`` is populated when ``u`` is.

    Raises
    ------
    DivergenceError
        If the state becomes non-finite.
    """
    if dt <= 0:
        raise ValidationError("dt must be positive")
    if t_end < 0:
        raise ValidationError("t_end must be non-negative")
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    n_steps = int(round(t_end / dt))
    controlled = isinstance(f, ControlAffineSystem)
    if controlled:
        m = f.n_inputs
    elif u is not None:
        m = np.atleast_1d(u(0.0) if callable(u) else np.asarray(u, dtype=float)[0]).size
    if controlled and u is None:
        rhs = lambda x, v: f(x)
    elif controlled or u is not None:
        rhs = lambda x, v: np.asarray(f(x, v), dtype=float)
    else:
        rhs = lambda x, v: np.asarray(f(x), dtype=float)
    h = dt / substeps
    states = np.empty((n_steps + 1, x.size))
    states[0] = x
    inputs = None if u is None else np.empty((n_steps + 1, m))
    for k in range(n_steps):
        t = k * dt
        v = None if u is None else _input_at(u, k, t, m)
        if inputs is not None:
            inputs[k] = v
        for _ in range(substeps):
            k1 = rhs(x, v)
            k2 = rhs(x + 0.5 * h * k1, v)
            k3 = rhs(x + 0.5 * h * k2, v)
            k4 = rhs(x + h * k3, v)
            x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"state became non-finite after t={t:g}", last_valid_time=t)
        states[k + 1] = x
    if inputs is not None:
        inputs[n_steps] = inputs[n_steps - 1] if n_steps else _input_at(u, 0, 0.0, m)
    times = dt * np.arange(n_steps + 1)
    return Trajectory(times, states, inputs)


def simulate_map(F, x0, k):
    """Iterate a map: ``x0, F(x0), ..., F^k(x0)`` with integer step times."""
    if k < 0:
        raise ValidationError("k must be non-negative")
    x = np.atleast_1d(np.asarray(x0, dtype=float))
    states = np.empty((k + 1, x.size))
    states[0] = x
    for i in range(k):
        x = F(x)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"iterate {i + 1} is non-finite", last_valid_time=i)
        states[i + 1] = x
    return Trajectory(np.arange(k + 1), states)
