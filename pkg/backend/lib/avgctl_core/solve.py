# backend/lib/avgctl_core/solve.py
"""
Projected-gradient solver for Problems A and B, with multistart, plus an
exhaustive coarse-grid oracle.

Restarts (and, for value grids, all initial states) run as one vectorized
batch; every row has its own Armijo step, so rows never influence each other.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import EnumerationTooLargeError, SolverFailure
from .measures import Mixture
from .models import ControlProblem, ControlSignal, SolveOptions, SolveResult
from .sim import batch_cost, batch_cost_and_gradient, cost_averaged, project_controls

logger = logging.getLogger(__name__)

MAX_ENUMERATION = 10 ** 7
ENUMERATION_CHUNK = 4096
BB_MIN, BB_MAX = 1e-10, 1e10
STALL_PATIENCE = 3


@dataclass
class BatchSolution:
    """Per (point, restart) outcome of a batched solve; arrays are shaped (P, R, ...)."""
    controls: np.ndarray
    values: np.ndarray
    converged: np.ndarray
    diverged: np.ndarray
    iterations: np.ndarray
    grad_norm: np.ndarray


def start_controls(p: ControlProblem, opts: SolveOptions, intervals: Optional[int] = None) -> np.ndarray:
    """
    Restart 0 is the box midpoint; the others are uniform in U drawn in order
    from one generator, so fewer restarts always give a prefix of more.
    """
    K = intervals or p.intervals
    rng = np.random.default_rng(opts.rng_seed)
    starts = [np.tile(p.midpoint, (K, 1))]
    for _ in range(1, opts.restarts):
        starts.append(rng.uniform(p.control_lo, p.control_hi, size=(K, p.control_dim)))
    return np.stack(starts)


def _displacement(p: ControlProblem, U: np.ndarray, G: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Unwrapped move of a projected step of length alpha along -G."""
    step = -alpha[:, None, None] * G
    boxed = np.clip(U + step, p.control_lo, p.control_hi) - U
    return np.where(np.asarray(p.periodic), step, boxed)


def _projected_gradient_norm(p: ControlProblem, U: np.ndarray, G: np.ndarray, dt: float) -> np.ndarray:
    pg = np.where(np.asarray(p.periodic), G, U - np.clip(U - G, p.control_lo, p.control_hi))
    return np.sqrt(dt * np.sum(pg * pg, axis=(1, 2)))


def solve_batch(p: ControlProblem, mix: Mixture, X0: np.ndarray, opts: SolveOptions) -> BatchSolution:
    """Run every restart from every initial state in X0 (P, n)."""
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    P = X0.shape[0]
    starts = start_controls(p, opts)
    R, K, m = starts.shape
    dt = (p.T - p.s) / K

    U = project_controls(p, np.broadcast_to(starts, (P, R, K, m)).reshape(P * R, K, m))
    X = np.repeat(X0, R, axis=0)
    J, grad, bad = batch_cost_and_gradient(p, mix, U, X)
    G = grad / dt  # L2(s, T) gradient

    diverged = bad.copy()
    active = ~bad
    converged = np.zeros(P * R, dtype=bool)
    iterations = np.zeros(P * R, dtype=int)
    grad_norm = np.full(P * R, np.inf)
    last_move = np.zeros_like(U)
    last_change = np.zeros_like(U)
    have_memory = np.zeros(P * R, dtype=bool)
    flat_steps = np.zeros(P * R, dtype=int)
    stationary = max(opts.stall_grad_tol, opts.grad_tol)

    for it in range(opts.max_iters):
        norm = _projected_gradient_norm(p, U, G, dt)
        grad_norm = np.where(active, norm, grad_norm)
        done = active & (norm <= opts.grad_tol)
        converged |= done
        active &= ~done
        if not np.any(active):
            break
        rows = np.flatnonzero(active)

        alpha = np.full(rows.size, opts.initial_step)
        if opts.spectral:
            mem = have_memory[rows]
            ss = np.sum(last_move[rows] ** 2, axis=(1, 2))
            sy = np.sum(last_move[rows] * last_change[rows], axis=(1, 2))
            use = mem & (sy > 0)
            alpha[use] = np.clip(ss[use] / sy[use], BB_MIN, BB_MAX)

        U_rows, G_rows, J_rows, X_rows = U[rows], G[rows], J[rows], X[rows]
        new_U = U_rows.copy()
        new_J = J_rows.copy()
        moves = np.zeros_like(U_rows)
        accepted = np.zeros(rows.size, dtype=bool)
        pending = np.arange(rows.size)
        for _ in range(opts.max_backtracks):
            move = _displacement(p, U_rows[pending], G_rows[pending], alpha[pending])
            trial = project_controls(p, U_rows[pending] + move)
            J_trial = batch_cost(p, mix, trial, X_rows[pending])
            slope = dt * np.sum(G_rows[pending] * move, axis=(1, 2))
            ok = np.isfinite(J_trial) & (J_trial <= J_rows[pending] + opts.armijo_c * slope)
            hit = pending[ok]
            new_U[hit] = trial[ok]
            new_J[hit] = J_trial[ok]
            moves[hit] = move[ok]
            accepted[hit] = True
            pending = pending[~ok]
            if pending.size == 0:
                break
            alpha[pending] *= opts.shrink

        stalled = rows[~accepted]
        if stalled.size:
            logger.debug("iteration %d: line search stalled on %d rows", it, stalled.size)
            active[stalled] = False
            converged[stalled] |= grad_norm[stalled] <= stationary

        moved = rows[accepted]
        if moved.size:
            J_new, grad_new, bad_new = batch_cost_and_gradient(p, mix, new_U[accepted], X[moved])
            G_new = grad_new / dt
            flat = J[moved] - J_new <= opts.stall_tol * (1.0 + np.abs(J[moved]))
            flat_steps[moved] = np.where(flat, flat_steps[moved] + 1, 0)
            last_move[moved] = moves[accepted]
            last_change[moved] = G_new - G[moved]
            have_memory[moved] = True
            U[moved] = new_U[accepted]
            J[moved] = J_new
            G[moved] = G_new
            iterations[moved] += 1
            if np.any(bad_new):
                lost = moved[bad_new]
                diverged[lost] = True
                active[lost] = False
            ended = moved[(flat_steps[moved] >= STALL_PATIENCE) & active[moved]]
            if ended.size:
                logger.debug("iteration %d: no further decrease on %d rows", it, ended.size)
                norm = _projected_gradient_norm(p, U[ended], G[ended], dt)
                grad_norm[ended] = norm
                converged[ended] |= norm <= stationary
                active[ended] = False

    J = np.where(diverged, np.inf, J)
    return BatchSolution(
        controls=U.reshape(P, R, K, m),
        values=J.reshape(P, R),
        converged=(converged & ~diverged).reshape(P, R),
        diverged=diverged.reshape(P, R),
        iterations=iterations.reshape(P, R),
        grad_norm=grad_norm.reshape(P, R),
    )


def solve(p: ControlProblem, mix: Mixture, x0, opts: Optional[SolveOptions] = None) -> SolveResult:
    """
    Multistart projected gradient descent for inf_u J_pi[u] from x0.

    Restart values are recomputed with cost_averaged on the returned controls;
    the best one wins, ties going to the lowest restart index.
    """
    opts = opts or SolveOptions()
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    batch = solve_batch(p, mix, x0[None], opts)
    if np.all(batch.diverged[0]):
        raise SolverFailure(f"all {opts.restarts} restarts diverged from x0={x0.tolist()}")

    values = []
    for r in range(opts.restarts):
        if batch.diverged[0, r]:
            values.append(float("inf"))
        else:
            values.append(cost_averaged(p, mix, ControlSignal(p.s, p.T, batch.controls[0, r]), x0))
    best = int(np.argmin(values))
    if not batch.converged[0, best]:
        logger.warning("solve from x0=%s did not converge (projected gradient %.3g)",
                       x0.tolist(), batch.grad_norm[0, best])
    return SolveResult(
        control=ControlSignal(p.s, p.T, batch.controls[0, best]),
        value=values[best],
        converged=bool(batch.converged[0, best]),
        iterations=int(batch.iterations[0, best]),
        grad_norm=float(batch.grad_norm[0, best]),
        best_restart=best,
        restart_values=tuple(values),
        restart_converged=tuple(bool(c) for c in batch.converged[0]),
    )


def brute_force_value(p: ControlProblem, mix: Mixture, x0, levels: int, k_coarse: int) -> float:
    """
    Exact minimum of cost_averaged over controls constant on k_coarse equal
    intervals with values on `levels` evenly spaced points of U per coordinate.
    """
    if levels < 1 or k_coarse < 1:
        raise ValueError("levels and k_coarse must be positive")
    slots = k_coarse * p.control_dim
    count = levels ** slots
    if count > MAX_ENUMERATION:
        raise EnumerationTooLargeError(f"{levels}^{slots} = {count} controls exceeds {MAX_ENUMERATION}")
    if p.intervals % k_coarse:
        raise ValueError(f"problem intervals ({p.intervals}) must be a multiple of k_coarse ({k_coarse})")
    repeat = p.intervals // k_coarse
    grid = np.stack([np.linspace(a, b, levels) for a, b in zip(p.control_lo, p.control_hi)], axis=1)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))

    best = np.inf
    for start in range(0, count, ENUMERATION_CHUNK):
        idx = np.arange(start, min(count, start + ENUMERATION_CHUNK))
        digits = np.stack(np.unravel_index(idx, (levels,) * slots), axis=1).reshape(-1, k_coarse, p.control_dim)
        coarse = grid[digits, np.arange(p.control_dim)]
        U = np.repeat(coarse, repeat, axis=1)
        J = batch_cost(p, mix, U, np.repeat(x0[None], idx.size, axis=0))
        best = min(best, float(np.min(J)))
    logger.debug("brute force over %d controls: %.9g", count, best)
    return best
