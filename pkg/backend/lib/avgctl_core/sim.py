# backend/lib/avgctl_core/sim.py
"""
Fixed-step RK4 integration of x' = g(x, u) under piecewise-constant controls,
trapezoidal cost evaluation for a single field (Problem A) and for a mixture
(Problem B), and the discrete adjoint gradient of that cost.

The batch_* functions work on B independent controls / initial states at
once: controls (B, K, m), initial states (B, n). Rows whose trajectory leaves
the blow-up guard get cost +inf instead of raising. The single-control
functions (integrate, cost_single, cost_averaged, adjoint_gradient) raise.
"""
import logging
from typing import Callable, List, Optional, Tuple

import numpy as np

from .errors import DimensionMismatchError, DivergenceError, NonFiniteError
from .fields import VectorField, estimate_cost_lipschitz, exceeds_declared
from .measures import Mixture
from .models import ControlProblem, ControlSignal, DomainBox, Trajectory

logger = logging.getLogger(__name__)

FD_STEP = 1e-6
DEFAULT_GUARD = 1e8


# -----------------------------------------------------------------------------
# Controls
# -----------------------------------------------------------------------------

def project_controls(p: ControlProblem, values: np.ndarray) -> np.ndarray:
    """Clamp box coordinates, wrap periodic ones modulo the period."""
    v = np.asarray(values, dtype=float)
    lo = np.asarray(p.control_lo)
    hi = np.asarray(p.control_hi)
    periodic = np.asarray(p.periodic)
    wrapped = lo + np.mod(v - lo, hi - lo)
    return np.where(periodic, wrapped, np.clip(v, lo, hi))


def constant_control(p: ControlProblem, value, intervals: Optional[int] = None) -> ControlSignal:
    K = intervals or p.intervals
    return ControlSignal(p.s, p.T, np.tile(np.atleast_1d(np.asarray(value, dtype=float)), (K, 1)))


def check_admissible(p: ControlProblem, u: ControlSignal):
    if u.control_dim != p.control_dim:
        raise DimensionMismatchError(f"control has {u.control_dim} coordinates, problem has {p.control_dim}")
    if not np.isclose(u.s, p.s) or not np.isclose(u.T, p.T):
        raise ValueError(f"control horizon [{u.s}, {u.T}] differs from problem horizon [{p.s}, {p.T}]")
    boxed = ~np.asarray(p.periodic)
    values = u.values[:, boxed]
    lo = np.asarray(p.control_lo)[boxed]
    hi = np.asarray(p.control_hi)[boxed]
    if not np.all(np.isfinite(u.values)):
        raise ValueError("control values must be finite")
    if np.any(values < lo - 1e-12) or np.any(values > hi + 1e-12):
        raise ValueError("control values leave the control set U")


def _check_field(g: VectorField, control_dim: int, x0: np.ndarray):
    if g.control_dim != control_dim:
        raise DimensionMismatchError(f"field {g.label} takes {g.control_dim} controls, got {control_dim}")
    if x0.shape[-1] != g.state_dim:
        raise DimensionMismatchError(f"field {g.label} has state_dim {g.state_dim}, x0 has {x0.shape[-1]}")
    if not np.all(np.isfinite(x0)):
        raise ValueError("initial state must be finite")


# -----------------------------------------------------------------------------
# Forward integration
# -----------------------------------------------------------------------------

class _Forward:
    """Knot states plus, when requested, the four RK4 stage points of every substep."""

    def __init__(self, states, diverged, fail_time, fail_norm, stages):
        self.states = states
        self.diverged = diverged
        self.fail_time = fail_time
        self.fail_norm = fail_norm
        self.stages = stages


def _forward(fn: Callable, U: np.ndarray, X0: np.ndarray, s: float, T: float,
             substeps: int, guard: float, store: bool = False) -> _Forward:
    B, K, _ = U.shape
    n = X0.shape[1]
    dt = (T - s) / K
    h = dt / substeps
    states = np.empty((B, K + 1, n))
    states[:, 0] = X0
    diverged = np.zeros(B, dtype=bool)
    fail_time = np.full(B, np.nan)
    fail_norm = np.full(B, np.nan)
    stages: List[List[Tuple[np.ndarray, ...]]] = []
    x = np.array(X0, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(K):
            u = U[:, k, :]
            interval = []
            for _ in range(substeps):
                k1 = fn(x, u)
                y2 = x + 0.5 * h * k1
                k2 = fn(y2, u)
                y3 = x + 0.5 * h * k2
                k3 = fn(y3, u)
                y4 = x + h * k3
                k4 = fn(y4, u)
                if store:
                    interval.append((x, y2, y3, y4))
                x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if store:
                stages.append(interval)
            norms = np.linalg.norm(x, axis=1)
            bad = ~(norms <= guard)
            if np.any(bad):
                fresh = bad & ~diverged
                fail_time[fresh] = s + (k + 1) * dt
                fail_norm[fresh] = norms[fresh]
                diverged |= bad
                # keep evaluating dead rows at a harmless point
                x = np.where(bad[:, None], 0.0, x)
            states[:, k + 1] = x
    return _Forward(states, diverged, fail_time, fail_norm, stages)


def integrate(g: VectorField, u: ControlSignal, x0, substeps: int = 1,
              blowup_guard: float = DEFAULT_GUARD) -> Trajectory:
    """Classic RK4 with `substeps` steps per control interval."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    _check_field(g, u.control_dim, x0)
    fwd = _forward(g.evaluate, u.values[None], x0[None], u.s, u.T, substeps, blowup_guard)
    if fwd.diverged[0]:
        raise DivergenceError(fwd.fail_time[0], fwd.fail_norm[0], blowup_guard)
    return Trajectory(u.times, fwd.states, (g.label,))


def multi_trajectory(p: ControlProblem, mix: Mixture, u: ControlSignal, x0) -> Trajectory:
    """One state path per atom, all driven by the same control."""
    paths = [integrate(g, u, x0, p.substeps, p.blowup_guard).states[0] for g in mix.atoms]
    return Trajectory(u.times, np.stack(paths), tuple(g.label for g in mix.atoms))


# -----------------------------------------------------------------------------
# Costs
# -----------------------------------------------------------------------------

def _trapezoid(p: ControlProblem, states: np.ndarray, U: np.ndarray, dt: float) -> np.ndarray:
    B, K, m = U.shape
    n = states.shape[2]
    flat_u = U.reshape(B * K, m)
    left = np.asarray(p.running_cost(states[:, :-1].reshape(B * K, n), flat_u)).reshape(B, K)
    right = np.asarray(p.running_cost(states[:, 1:].reshape(B * K, n), flat_u)).reshape(B, K)
    running = 0.5 * dt * np.sum(left + right, axis=1)
    terminal = np.asarray(p.terminal_cost(states[:, -1])).reshape(B)
    return running + terminal


def batch_cost(p: ControlProblem, mix: Mixture, U: np.ndarray, X0: np.ndarray) -> np.ndarray:
    """Averaged cost for each row; +inf where any atom's trajectory diverged."""
    dt = (p.T - p.s) / U.shape[1]
    total = np.zeros(U.shape[0])
    bad = np.zeros(U.shape[0], dtype=bool)
    with np.errstate(over="ignore", invalid="ignore"):
        for alpha, g in zip(mix.weights, mix.atoms):
            fwd = _forward(g.evaluate, U, X0, p.s, p.T, p.substeps, p.blowup_guard)
            cost = _trapezoid(p, fwd.states, U, dt)
            bad |= fwd.diverged | ~np.isfinite(cost)
            total = total + alpha * cost
    return np.where(bad, np.inf, total)


def cost_single(p: ControlProblem, g: VectorField, u: ControlSignal, x0) -> float:
    """J[u] = integral of l (trapezoid on the control knots) + h(x(T))."""
    check_admissible(p, u)
    traj = integrate(g, u, x0, p.substeps, p.blowup_guard)
    value = float(_trapezoid(p, traj.states, u.values[None], (u.T - u.s) / u.intervals)[0])
    if not np.isfinite(value):
        raise NonFiniteError(f"cost along field {g.label} is not finite")
    return value


def cost_averaged(p: ControlProblem, mix: Mixture, u: ControlSignal, x0) -> float:
    """sum_i alpha_i J_i[u], summed in atom order."""
    total = 0.0
    for alpha, g in zip(mix.weights, mix.atoms):
        total += float(alpha) * cost_single(p, g, u, x0)
    return total


# -----------------------------------------------------------------------------
# Discrete adjoint
# -----------------------------------------------------------------------------

def _steps(x: np.ndarray) -> np.ndarray:
    return FD_STEP * (1.0 + np.abs(x))


def _jacobians(fn: Callable, x: np.ndarray, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Central-difference Jacobians Jx (B, n, n), Ju (B, n, m) of fn at (x, u)."""
    B, n = x.shape
    m = u.shape[1]
    Jx = np.empty((B, n, n))
    Ju = np.empty((B, n, m))
    hx = _steps(x)
    for j in range(n):
        xp = x.copy()
        xm = x.copy()
        xp[:, j] += hx[:, j]
        xm[:, j] -= hx[:, j]
        Jx[:, :, j] = (fn(xp, u) - fn(xm, u)) / (xp[:, j] - xm[:, j])[:, None]
    hu = _steps(u)
    for j in range(m):
        up = u.copy()
        um = u.copy()
        up[:, j] += hu[:, j]
        um[:, j] -= hu[:, j]
        Ju[:, :, j] = (fn(x, up) - fn(x, um)) / (up[:, j] - um[:, j])[:, None]
    return Jx, Ju


def _scalar_gradient(fn: Callable, z: np.ndarray, *rest) -> np.ndarray:
    """Central-difference gradient of a vectorized scalar function in its first argument."""
    grad = np.empty_like(z)
    hz = _steps(z)
    for j in range(z.shape[1]):
        zp = z.copy()
        zm = z.copy()
        zp[:, j] += hz[:, j]
        zm[:, j] -= hz[:, j]
        diff = np.asarray(fn(zp, *rest)).reshape(-1) - np.asarray(fn(zm, *rest)).reshape(-1)
        grad[:, j] = diff / (zp[:, j] - zm[:, j])
    return grad


def _running_gradients(p: ControlProblem, states: np.ndarray, U: np.ndarray):
    """grad_x l and grad_u l at the left and right knot of every interval."""
    B, K, m = U.shape
    n = states.shape[2]
    flat_u = U.reshape(B * K, m)
    out = []
    for knots in (states[:, :-1], states[:, 1:]):
        flat_x = knots.reshape(B * K, n)
        gx = _scalar_gradient(p.running_cost, flat_x, flat_u).reshape(B, K, n)
        gu = _scalar_gradient(lambda uu, xx: p.running_cost(xx, uu), flat_u, flat_x).reshape(B, K, m)
        out.append((gx, gu))
    return out


def _field_cost_and_gradient(p: ControlProblem, g: VectorField, U: np.ndarray, X0: np.ndarray):
    B, K, m = U.shape
    dt = (p.T - p.s) / K
    h = dt / p.substeps
    fwd = _forward(g.evaluate, U, X0, p.s, p.T, p.substeps, p.blowup_guard, store=True)
    states = fwd.states
    cost = _trapezoid(p, states, U, dt)
    (lx_left, lu_left), (lx_right, lu_right) = _running_gradients(p, states, U)

    grad = np.empty((B, K, m))
    adj = _scalar_gradient(p.terminal_cost, states[:, -1])
    for k in range(K - 1, -1, -1):
        u = U[:, k, :]
        adj = adj + 0.5 * dt * lx_right[:, k]
        gu = 0.5 * dt * (lu_left[:, k] + lu_right[:, k])
        for y1, y2, y3, y4 in reversed(fwd.stages[k]):
            # all four stage Jacobians in one stacked evaluation
            Jx, Ju = _jacobians(g.evaluate, np.concatenate([y1, y2, y3, y4]), np.tile(u, (4, 1)))
            Jx = Jx.reshape(4, B, *Jx.shape[1:])
            Ju = Ju.reshape(4, B, *Ju.shape[1:])
            lam = adj
            b4 = (h / 6.0) * lam
            ybar4 = np.einsum("bij,bi->bj", Jx[3], b4)
            gu = gu + np.einsum("bij,bi->bj", Ju[3], b4)
            b3 = (h / 3.0) * lam + h * ybar4
            ybar3 = np.einsum("bij,bi->bj", Jx[2], b3)
            gu = gu + np.einsum("bij,bi->bj", Ju[2], b3)
            b2 = (h / 3.0) * lam + 0.5 * h * ybar3
            ybar2 = np.einsum("bij,bi->bj", Jx[1], b2)
            gu = gu + np.einsum("bij,bi->bj", Ju[1], b2)
            b1 = (h / 6.0) * lam + 0.5 * h * ybar2
            ybar1 = np.einsum("bij,bi->bj", Jx[0], b1)
            gu = gu + np.einsum("bij,bi->bj", Ju[0], b1)
            adj = lam + ybar1 + ybar2 + ybar3 + ybar4
        grad[:, k] = gu
        adj = adj + 0.5 * dt * lx_left[:, k]
    bad = fwd.diverged | ~np.isfinite(cost) | ~np.all(np.isfinite(grad), axis=(1, 2))
    return cost, grad, bad


def batch_cost_and_gradient(p: ControlProblem, mix: Mixture, U: np.ndarray,
                            X0: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Averaged cost (B,), gradient with respect to the stacked control values
    (B, K, m) and a mask of rows that diverged or produced non-finite values.
    """
    total = np.zeros(U.shape[0])
    grad = np.zeros(U.shape)
    bad = np.zeros(U.shape[0], dtype=bool)
    with np.errstate(over="ignore", invalid="ignore"):
        for alpha, g in zip(mix.weights, mix.atoms):
            cost, g_grad, g_bad = _field_cost_and_gradient(p, g, U, X0)
            total = total + alpha * cost
            grad = grad + alpha * g_grad
            bad |= g_bad
    return np.where(bad, np.inf, total), grad, bad


def adjoint_gradient(p: ControlProblem, mix: Mixture, u: ControlSignal, x0) -> np.ndarray:
    """Gradient (K, m) of the discretized cost_averaged with respect to u_0..u_{K-1}."""
    check_admissible(p, u)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    for g in mix.atoms:
        _check_field(g, u.control_dim, x0)
    total = np.zeros(u.values.shape)
    with np.errstate(over="ignore", invalid="ignore"):
        for alpha, g in zip(mix.weights, mix.atoms):
            cost, grad, bad = _field_cost_and_gradient(p, g, u.values[None], x0[None])
            if bad[0]:
                fwd = _forward(g.evaluate, u.values[None], x0[None], p.s, p.T, p.substeps, p.blowup_guard)
                if fwd.diverged[0]:
                    raise DivergenceError(fwd.fail_time[0], fwd.fail_norm[0], p.blowup_guard)
                raise NonFiniteError(f"non-finite Jacobian entries along field {g.label}")
            total += alpha * grad[0]
    return total


# -----------------------------------------------------------------------------
# Problem checks
# -----------------------------------------------------------------------------

def validate_problem(p: ControlProblem, box: DomainBox) -> Tuple[float, float]:
    """Sampled Lipschitz constants of l and h in x, checked against the declared ones."""
    if (box.state_dim, box.control_dim) != (p.state_dim, p.control_dim):
        raise DimensionMismatchError("box dimensions differ from the problem dimensions")
    est_l = estimate_cost_lipschitz(p.running_cost, box)
    est_h = estimate_cost_lipschitz(p.terminal_cost, box, terminal=True)
    for name, est, declared in (("running cost", est_l, p.lipschitz_l), ("terminal cost", est_h, p.lipschitz_h)):
        if declared is not None and exceeds_declared(est, declared):
            raise ValueError(f"{name}: sampled Lipschitz quotient {est:.9g} exceeds declared {declared:.9g}")
    return est_l, est_h
