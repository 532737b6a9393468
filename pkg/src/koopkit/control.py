"""Bilinear lifting of control-affine systems and lifted MPC.

A control-affine system ``dx/dt = f(x) + sum_i g_i(x) u_i`` lifted by
``z = phi(x)`` becomes ``dz/dt = A z + sum_i B_i z u_i`` whenever the Lie
derivatives ``J_phi f`` and ``J_phi g_i`` stay in the span of ``phi``.
"""

import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import linalg
from .exceptions import ConvergenceWarning, ShapeError, SpanDeficiencyWarning, ValidationError
from .systems import ControlAffineSystem, Trajectory, VectorField, integrate_rk4

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())

__all__ = [
    "BilinearLiftedModel",
    "MpcProblem",
    "QPResult",
    "MpcResult",
    "lift_control_fields",
    "simulate_bilinear",
    "local_linearize",
    "zoh_discretize",
    "state_inflate",
    "condensed_qp",
    "solve_box_qp",
    "solve_linear_mpc",
    "run_mpc",
]


@dataclass
class BilinearLiftedModel:
    """``dz/dt = A z + sum_i B[i] z u_i``, ``y = V z``, ``z = lifting(x)``."""

    A: np.ndarray
    B: Sequence[np.ndarray]
    V: np.ndarray
    lifting: object
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.A = linalg.as_matrix(self.A, "A", square=True)
        self.B = tuple(linalg.as_matrix(b, "B", square=True) for b in self.B)
        self.V = linalg.as_matrix(self.V, "V")
        D = self.A.shape[0]
        for b in self.B:
            if b.shape != (D, D):
                raise ShapeError(f"B matrices must be {D}x{D}, got {b.shape}")
        if self.V.shape[1] != D:
            raise ShapeError(f"V must have {D} columns")

    @property
    def n_inputs(self):
        return len(self.B)

    def lift(self, x):
        return self.lifting(np.asarray(x, dtype=float))

    def rhs(self, z, u):
        M = self.A.copy()
        for b, ui in zip(self.B, np.atleast_1d(u)):
            M = M + b * ui
        return M @ z

    def outputs(self, Z):
        return np.atleast_2d(Z) @ self.V.T


def lift_control_fields(sys, lifting, samples, tol=1e-10):
    """Fit the bilinear lifted model of a control-affine system.

    ``A`` and every ``B_i`` are least-squares fits of the Lie derivatives
    ``J_phi(x) f(x)`` and ``J_phi(x) g_i(x)`` on the lifting at ``samples``;
    ``V`` reconstructs the system output linearly from ``phi``. A
    :class:`~koopkit.exceptions.SpanDeficiencyWarning` is issued when any
    residual exceeds ``tol``.
    """
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    Psi = lifting.transform(X)
    Js = [lifting.jacobian(x) for x in X]

    def fit(field_):
        target = np.array([J @ field_(x) for J, x in zip(Js, X)])
        M = linalg.lstsq(Psi, target).T
        err = np.linalg.norm(target - Psi @ M.T, axis=1)
        return M, err

    A, err_f = fit(sys.drift)
    B, residuals = [], {"drift": float(err_f.max())}
    worst = None
    for i, g in enumerate(sys.control_fields):
        Bi, err = fit(g)
        B.append(Bi)
        residuals[f"g{i + 1}"] = float(err.max())
        if err.max() > tol and (worst is None or err.max() > worst[1]):
            worst = (f"g{i + 1}", float(err.max()), X[int(np.argmax(err))])
    Y = np.array([sys.observe(x) for x in X])
    V = linalg.lstsq(Psi, Y).T
    residuals["output"] = float(np.max(np.linalg.norm(Y - Psi @ V.T, axis=1)))
    if err_f.max() > tol and (worst is None or err_f.max() > worst[1]):
        worst = ("drift", float(err_f.max()), X[int(np.argmax(err_f))])
    model = BilinearLiftedModel(A, B, V, lifting, {"residuals": residuals})
    if worst is not None:
        name, val, x = worst
        model.info["span_deficient"] = True
        warnings.warn(
            f"Lie derivative of {name} leaves the lifting span: residual {val:.3g} at x={x}",
            SpanDeficiencyWarning, stacklevel=2,
        )
    return model


def _input_sequence(inputs, steps, m):
    if callable(inputs):
        return np.array([np.atleast_1d(inputs(k)) for k in range(steps)], dtype=float).reshape(steps, m)
    U = np.asarray(inputs, dtype=float)
    if U.ndim <= 1 and U.size == m:
        return np.tile(U.reshape(1, m), (steps, 1))
    U = U.reshape(-1, m)
    if len(U) < steps:
        raise ShapeError(f"need {steps} input rows, got {len(U)}")
    return U[:steps]


def simulate_bilinear(model, z0, inputs, ts, steps):
    """Exact sampled simulation under piecewise-constant inputs.

    Each interval applies ``expm((A + sum_i B_i u_i) ts)``. ``inputs`` is an
    array with one row per step, a constant input vector or a callable
    ``k -> u``. Returns the lifted :class:`Trajectory` (use
    :meth:`BilinearLiftedModel.outputs` for ``y = V z``).
    """
    m = model.n_inputs
    U = _input_sequence(inputs, steps, m) if m else np.zeros((steps, 0))
    z = np.asarray(z0, dtype=float).ravel().copy()
    Z = np.empty((steps + 1, z.size))
    Z[0] = z
    cache = {}
    for k in range(steps):
        key = tuple(U[k])
        Phi = cache.get(key)
        if Phi is None:
            M = model.A.copy()
            for b, ui in zip(model.B, U[k]):
                M = M + b * ui
            Phi = cache[key] = linalg.expm(M * ts)
        z = Phi @ z
        Z[k + 1] = z
    inputs_col = np.vstack([U, U[-1:]]) if steps and m else None
    return Trajectory(ts * np.arange(steps + 1), Z, inputs_col)


def local_linearize(model, zbar):
    """``(A, G)`` with ``G = [B_1 zbar | B_2 zbar | ...]``."""
    zbar = np.asarray(zbar, dtype=float).ravel()
    if model.n_inputs == 0:
        return model.A.copy(), np.zeros((model.A.shape[0], 0))
    G = np.column_stack([b @ zbar for b in model.B])
    return model.A.copy(), G


def zoh_discretize(A, G, ts):
    """Zero-order-hold discretization via the augmented matrix exponential."""
    if ts <= 0:
        raise ValidationError("ts must be positive")
    A = linalg.as_matrix(A, "A", square=True)
    G = np.asarray(G, dtype=float).reshape(A.shape[0], -1)
    n, m = G.shape
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = A
    aug[:n, n:] = G
    E = linalg.expm(aug * ts)
    return E[:n, :n], E[:n, n:]


def state_inflate(f_general, n, m):
    """Turn ``dzeta/dt = f(zeta, v)`` into a control-affine system in ``(zeta, v)``.

    The new input is the rate ``dv/dt = u``, so direct control acts on the
    rate of change of the original input.
    """

    def drift(x):
        zeta, v = x[:n], x[n:]
        return np.concatenate([np.asarray(f_general(zeta, v), dtype=float).ravel(), np.zeros(m)])

    fields = []
    for j in range(m):
        e = np.zeros(n + m)
        e[n + j] = 1.0
        fields.append(VectorField(n + m, lambda x, e=e: e.copy(), f"inflated-u{j + 1}"))
    return ControlAffineSystem(
        VectorField(n + m, drift, "inflated-drift", {"n": n, "m": m}),
        fields, lambda x: np.asarray(x[:n], dtype=float), "inflated",
    )


@dataclass
class MpcProblem:
    """Tracking MPC over a horizon of ``horizon`` steps.

    Cost ``sum_{k=1..N} ||y_k - y_ref||_Q^2 + sum_{k=0..N-1} ||u_k||_R^2``
    subject to ``u_lower <= u_k <= u_upper``.
    """

    horizon: int
    Q: np.ndarray
    R: np.ndarray
    u_lower: np.ndarray
    u_upper: np.ndarray
    y_ref: np.ndarray
    ts: float
    max_iter: int = 500
    tol: float = 1e-8

    def __post_init__(self):
        self.Q = linalg.as_matrix(self.Q, "Q", square=True, allow_complex=False)
        self.R = linalg.as_matrix(self.R, "R", square=True, allow_complex=False)
        m = self.R.shape[0]
        self.u_lower = np.broadcast_to(np.asarray(self.u_lower, dtype=float), (m,)).copy()
        self.u_upper = np.broadcast_to(np.asarray(self.u_upper, dtype=float), (m,)).copy()
        self.y_ref = np.atleast_1d(np.asarray(self.y_ref, dtype=float))
        if self.horizon < 1:
            raise ValidationError("horizon must be at least 1")
        if self.ts <= 0:
            raise ValidationError("ts must be positive")
        if np.any(self.u_lower > self.u_upper):
            raise ValidationError("u_lower must not exceed u_upper")
        for name, M, strict in (("Q", self.Q, False), ("R", self.R, True)):
            if not np.allclose(M, M.T):
                raise ValidationError(f"{name} must be symmetric")
            low = np.linalg.eigvalsh(M).min()
            if (strict and low <= 0) or low < -1e-12:
                raise ValidationError(
                    f"{name} must be positive {'definite' if strict else 'semidefinite'}"
                )

    @property
    def n_inputs(self):
        return self.R.shape[0]

    def reference(self, k, n_out):
        """Reference outputs for horizon steps ``k+1 .. k+N``, shape ``(N, n_out)``."""
        ref = self.y_ref
        if ref.ndim == 1:
            ref = np.broadcast_to(ref, (1, n_out)) if ref.size in (1, n_out) else ref.reshape(-1, n_out)
        idx = np.minimum(np.arange(k + 1, k + self.horizon + 1), len(ref) - 1)
        return ref[idx]

    @classmethod
    def from_dict(cls, d):
        return cls(
            horizon=int(d["horizon"]), Q=d["Q"], R=d["R"],
            u_lower=d["u_lower"], u_upper=d["u_upper"], y_ref=d.get("y_ref", 0.0),
            ts=float(d["ts"]), max_iter=int(d.get("max_iter", 500)), tol=float(d.get("tol", 1e-8)),
        )

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class QPResult:
    x: np.ndarray
    iterations: int
    converged: bool
    pg_norm: float


def condensed_qp(Ad, Bd, Cy, z0, problem, k=0):
    """Condensed Hessian and gradient of the horizon cost.

    Returns ``(H, g, const)`` with cost ``0.5 U'HU + g'U + const`` where
    ``U`` stacks ``u_0 .. u_{N-1}``.
    """
    Ad = np.atleast_2d(Ad)
    Bd = np.atleast_2d(Bd)
    Cy = np.atleast_2d(Cy)
    N = problem.horizon
    D, m = Bd.shape
    p = Cy.shape[0]
    Phi = np.empty((N * p, D))
    Gam = np.zeros((N * p, N * m))
    Ak = np.eye(D)
    powers = [np.eye(D)]
    for i in range(1, N + 1):
        Ak = Ad @ Ak
        powers.append(Ak)
    for i in range(N):
        Phi[i * p:(i + 1) * p] = Cy @ powers[i + 1]
        for j in range(i + 1):
            Gam[i * p:(i + 1) * p, j * m:(j + 1) * m] = Cy @ powers[i - j] @ Bd
    Qbar = np.kron(np.eye(N), problem.Q)
    Rbar = np.kron(np.eye(N), problem.R)
    ref = problem.reference(k, p).reshape(-1)
    free = Phi @ np.asarray(z0, dtype=float) - ref
    H = 2.0 * (Gam.T @ Qbar @ Gam + Rbar)
    g = 2.0 * Gam.T @ Qbar @ free
    const = float(free @ Qbar @ free)
    return 0.5 * (H + H.T), g, const


def solve_box_qp(H, g, lower, upper, x0=None, max_iter=500, tol=1e-8):
    """Minimize ``0.5 x'Hx + g'x`` over a box by accelerated projected gradient.

    Nesterov momentum with gradient-based adaptive restart, fixed step
    ``1 / lambda_max(H)``. Stops when the projected-gradient norm drops to
    ``tol``; otherwise returns the last (feasible) iterate with
    ``converged=False``.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    g = np.asarray(g, dtype=float).ravel()
    lower = np.broadcast_to(np.asarray(lower, dtype=float), g.shape)
    upper = np.broadcast_to(np.asarray(upper, dtype=float), g.shape)
    L = float(np.linalg.eigvalsh(H).max())
    if L <= 0:
        raise ValidationError("H must have a positive eigenvalue")
    step = 1.0 / L
    x = np.clip(np.zeros_like(g) if x0 is None else np.asarray(x0, dtype=float), lower, upper)
    y = x.copy()
    t = 1.0
    pg = np.inf
    for it in range(1, max_iter + 1):
        grad_y = H @ y + g
        x_new = np.clip(y - step * grad_y, lower, upper)
        grad_x = H @ x_new + g
        pg = float(np.linalg.norm(x_new - np.clip(x_new - grad_x, lower, upper)))
        if pg <= tol:
            return QPResult(x_new, it, True, pg)
        if (y - x_new) @ (x_new - x) > 0:
            # momentum points uphill: restart
            t = 1.0
            y = x_new.copy()
        else:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            y = x_new + ((t - 1.0) / t_new) * (x_new - x)
            t = t_new
        x = x_new
    return QPResult(x, max_iter, False, pg)


def solve_linear_mpc(Ad, Bd, Cy, z0, problem, k=0, warm_start=None):
    """One receding-horizon QP for ``z+ = Ad z + Bd u``, ``y = Cy z``.

    Returns the :class:`QPResult` for the stacked input sequence.
    """
    H, g, _ = condensed_qp(Ad, Bd, Cy, z0, problem, k)
    N = problem.horizon
    lo = np.tile(problem.u_lower, N)
    hi = np.tile(problem.u_upper, N)
    return solve_box_qp(H, g, lo, hi, warm_start, problem.max_iter, problem.tol)


@dataclass
class MpcResult:
    """Closed-loop record: plant trajectory, outputs and per-step costs."""

    trajectory: Trajectory
    outputs: np.ndarray
    stage_costs: np.ndarray
    qp_iterations: np.ndarray
    unconverged_steps: int
    violations: int

    @property
    def total_cost(self):
        return float(np.sum(self.stage_costs))

    def summary(self):
        return {
            "steps": int(len(self.stage_costs)),
            "total_cost": self.total_cost,
            "constraint_violations": int(self.violations),
            "unconverged_qp_steps": int(self.unconverged_steps),
            "initial_output_norm": float(np.linalg.norm(self.outputs[0])),
            "final_output_norm": float(np.linalg.norm(self.outputs[-1])),
        }


def run_mpc(sys, model, problem, x0, total_steps, substeps=10):
    """Closed-loop MPC on the true plant using the lifted bilinear model.

    Each step lifts the measured state, linearizes the bilinear model at
    the current lifted state, discretizes it with zero-order hold, solves the
    condensed box-constrained QP and applies the first input to the plant
    for one sampling interval (RK4 with ``substeps`` sub-steps).
    """
    m = problem.n_inputs
    if m != model.n_inputs or m != sys.n_inputs:
        raise ShapeError("input dimensions of system, model and problem differ")
    x = np.asarray(x0, dtype=float).ravel().copy()
    ts = problem.ts
    states, inputs, outputs, costs, iters = [x.copy()], [], [sys.observe(x)], [], []
    unconverged = violations = 0
    warm = None
    for k in range(total_steps):
        z = model.lift(x)
        A, G = local_linearize(model, z)
        Ad, Bd = zoh_discretize(A, G, ts)
        res = solve_linear_mpc(Ad, Bd, model.V, z, problem, k, warm)
        if not res.converged:
            unconverged += 1
        iters.append(res.iterations)
        u = res.x[:m].copy()
        if np.any(u < problem.u_lower) or np.any(u > problem.u_upper):
            violations += 1
        warm = np.concatenate([res.x[m:], res.x[-m:]])
        seg = integrate_rk4(sys, x, ts, ts, u=lambda t, u=u: u, substeps=substeps)
        x = seg.states[-1].copy()
        y = sys.observe(x)
        ref = problem.reference(k, len(y))[0]
        costs.append(float((y - ref) @ problem.Q @ (y - ref) + u @ problem.R @ u))
        states.append(x.copy())
        inputs.append(u)
        outputs.append(y)
    if unconverged:
        warnings.warn(
            f"QP did not converge within {problem.max_iter} iterations on {unconverged} "
            f"of {total_steps} steps; best feasible iterates were applied",
            ConvergenceWarning, stacklevel=2,
        )
    U = np.vstack(inputs + [inputs[-1]]) if inputs else np.zeros((1, m))
    traj = Trajectory(ts * np.arange(len(states)), np.array(states), U)
    return MpcResult(traj, np.array(outputs), np.array(costs), np.array(iters), unconverged, violations)
