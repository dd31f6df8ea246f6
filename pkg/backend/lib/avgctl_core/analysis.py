# backend/lib/avgctl_core/analysis.py
"""
Value functions on initial-state grids, the error constant C(L_f, L_l, L_h, T)
and its bounds, empirical checks of those bounds, and convergence studies
of V_{pi^N} towards the true-dynamics value function V.
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import MissingLipschitzError, SolverFailure
from .fields import VectorField, estimate_lipschitz, sup_distance
from .measures import Mixture, dirac, dirac_target_w1, make_mixture, wasserstein1
from .models import (BoundReport, ControlProblem, ControlSignal, ConvergenceReport, ConvergenceRow,
                     DomainBox, SolveOptions, SolveResult, StateGrid, Trajectory, ValueGrid)
from .sim import cost_averaged, integrate, multi_trajectory
from .solve import solve, solve_batch

logger = logging.getLogger(__name__)

BOUND_SLACK = 1e-3
SERIES_BELOW = 1e-6


# -----------------------------------------------------------------------------
# Value functions
# -----------------------------------------------------------------------------

def value_grid(p: ControlProblem, mix: Mixture, grid: StateGrid, opts: Optional[SolveOptions] = None,
               s: Optional[float] = None) -> ValueGrid:
    """
    V_pi(s, x0) at every grid point. All points and restarts are solved as one
    batch; each reported value is cost_averaged of the best restart's control.
    `s` moves the initial time inside [p.s, p.T).
    """
    opts = opts or SolveOptions()
    if grid.dim != p.state_dim:
        raise ValueError(f"state grid has dimension {grid.dim}, problem has {p.state_dim}")
    if s is not None:
        if not p.s <= s < p.T:
            raise ValueError(f"initial time {s} outside [{p.s}, {p.T})")
        p = replace(p, s=float(s))
    points = grid.points
    batch = solve_batch(p, mix, points, opts)

    dead = np.all(batch.diverged, axis=1)
    if np.any(dead):
        raise SolverFailure(f"all restarts diverged at x0={points[np.argmax(dead)].tolist()}")
    best = np.argmin(batch.values, axis=1)
    values = np.empty(points.shape[0])
    for i, x0 in enumerate(points):
        values[i] = cost_averaged(p, mix, ControlSignal(p.s, p.T, batch.controls[i, best[i]]), x0)
    converged = batch.converged[np.arange(points.shape[0]), best]
    result = ValueGrid(grid, values, converged, p.s)
    if result.nonconverged:
        logger.warning("%d of %d grid points did not reach the gradient tolerance",
                       result.nonconverged, points.shape[0])
    logger.info("value grid over %d points (%d atoms): min %.6g, max %.6g",
                points.shape[0], mix.size, values.min(), values.max())
    return result


def true_value_grid(p: ControlProblem, f: VectorField, grid: StateGrid,
                    opts: Optional[SolveOptions] = None, s: Optional[float] = None) -> ValueGrid:
    """Problem A: the value grid of the Dirac mixture at f."""
    return value_grid(p, dirac(f), grid, opts, s)


def sup_norm_diff(a: ValueGrid, b: ValueGrid) -> float:
    if a.grid != b.grid or a.values.shape != b.values.shape or a.s != b.s:
        raise ValueError("value grids are defined on different state grids")
    return float(np.max(np.abs(a.values - b.values)))


def optimal_multi_trajectory(p: ControlProblem, mix: Mixture, x0,
                             opts: Optional[SolveOptions] = None) -> Tuple[SolveResult, Trajectory]:
    result = solve(p, mix, x0, opts)
    return result, multi_trajectory(p, mix, result.control, x0)


# -----------------------------------------------------------------------------
# Constants and bounds
# -----------------------------------------------------------------------------

def theorem_constant(L_f: float, L_l: float, L_h: float, T: float) -> float:
    """
    C = L_l * integral_0^T t e^{L_f t} dt + L_h e^{L_f T}
      = L_l (e^{L_f T}(L_f T - 1) + 1) / L_f^2 + L_h e^{L_f T}.
    """
    if min(L_f, L_l, L_h) < 0:
        raise ValueError("Lipschitz constants must be nonnegative")
    if not T > 0:
        raise ValueError("horizon length must be positive")
    a = L_f * T
    if a < SERIES_BELOW:
        # Taylor series of the integral around L_f = 0
        integral = T ** 2 * (0.5 + a / 3.0 + a ** 2 / 8.0 + a ** 3 / 30.0)
    else:
        integral = (a * math.exp(a) - math.expm1(a)) / L_f ** 2
    return L_l * integral + L_h * math.exp(a)


def gronwall_bound(L_f: float, dist: float, t: float, s: float) -> float:
    """|x^g(t) - x^f(t)| <= (t - s) |g - f|_inf e^{L_f (t - s)}."""
    if t < s:
        raise ValueError(f"gronwall_bound needs s <= t, got s={s}, t={t}")
    return (t - s) * dist * math.exp(L_f * (t - s))


def _lipschitz_of(field: VectorField, box: DomainBox) -> float:
    return field.lipschitz_x if field.lipschitz_x is not None else estimate_lipschitz(field, box)


def trajectory_box(p: ControlProblem, paths: Sequence[np.ndarray], pad: float = 1e-6,
                   samples: Optional[int] = None) -> DomainBox:
    """Smallest box holding every path (padded), times the control set."""
    stacked = np.concatenate([np.asarray(path).reshape(-1, p.state_dim) for path in paths])
    return DomainBox(tuple(stacked.min(axis=0) - pad), tuple(stacked.max(axis=0) + pad),
                     p.control_lo, p.control_hi, samples)


def gronwall_check(p: ControlProblem, f: VectorField, g: VectorField, u: ControlSignal, x0,
                   box: Optional[DomainBox] = None) -> float:
    """
    Largest (gap - bound) over the control knots for the trajectories of f and
    g under u. The sup distance is taken on `box`, by default the bounding box
    of both trajectories; L_f is f's declared constant (or its estimate).
    """
    xf = integrate(f, u, x0, p.substeps, p.blowup_guard).path()
    xg = integrate(g, u, x0, p.substeps, p.blowup_guard).path()
    box = box or trajectory_box(p, [xf, xg])
    dist = sup_distance(g, f, box)
    L_f = _lipschitz_of(f, box)
    gap = np.linalg.norm(xg - xf, axis=1)
    bound = np.array([gronwall_bound(L_f, dist, t, u.s) for t in u.times])
    return float(np.max(gap - bound))


def gronwall_suite(p: ControlProblem, fields: Sequence[VectorField], samples: int,
                   x0_lo, x0_hi, rng_seed: int = 0) -> List[float]:
    """gronwall_check on random (field pair, control, x0) draws; returns every margin."""
    rng = np.random.default_rng(rng_seed)
    margins = []
    for _ in range(samples):
        i, j = rng.choice(len(fields), size=2, replace=False)
        values = rng.uniform(p.control_lo, p.control_hi, size=(p.intervals, p.control_dim))
        x0 = rng.uniform(x0_lo, x0_hi, size=p.state_dim)
        margins.append(gronwall_check(p, fields[i], fields[j], ControlSignal(p.s, p.T, values), x0))
    return margins


def _bound_constant(p: ControlProblem, atoms: Sequence[VectorField]) -> float:
    if p.lipschitz_l is None or p.lipschitz_h is None:
        raise MissingLipschitzError("the bound needs declared Lipschitz constants for both costs")
    missing = [a.label for a in atoms if a.lipschitz_x is None]
    if missing:
        raise MissingLipschitzError(f"fields without a declared Lipschitz constant: {', '.join(missing)}")
    return theorem_constant(max(a.lipschitz_x for a in atoms), p.lipschitz_l, p.lipschitz_h, p.T - p.s)


def check_theorem1(p: ControlProblem, mix_a: Mixture, mix_b: Mixture, grid: StateGrid, box: DomainBox,
                   opts: Optional[SolveOptions] = None) -> BoundReport:
    """|V_a - V_b|_inf on the grid against C(max L_f, L_l, L_h, T - s) W1(a, b)."""
    constant = _bound_constant(p, mix_a.atoms + mix_b.atoms)
    w1, _ = wasserstein1(mix_a, mix_b, box)
    lhs = sup_norm_diff(value_grid(p, mix_a, grid, opts), value_grid(p, mix_b, grid, opts))
    rhs = constant * w1
    report = BoundReport(lhs, rhs, constant, w1, lhs > rhs + BOUND_SLACK)
    if report.violated:
        logger.error("value bound violated: %.6g > %.6g", lhs, rhs)
    return report


def cost_gap_check(p: ControlProblem, mix_a: Mixture, mix_b: Mixture, controls: Sequence[ControlSignal],
                   x0s: Sequence, box: DomainBox) -> BoundReport:
    """max |J_a[u] - J_b[u]| over the given controls and initial states against C W1(a, b)."""
    constant = _bound_constant(p, mix_a.atoms + mix_b.atoms)
    w1, _ = wasserstein1(mix_a, mix_b, box)
    lhs = 0.0
    for u in controls:
        for x0 in x0s:
            lhs = max(lhs, abs(cost_averaged(p, mix_a, u, x0) - cost_averaged(p, mix_b, u, x0)))
    rhs = constant * w1
    return BoundReport(lhs, rhs, constant, w1, lhs > rhs + BOUND_SLACK)


# -----------------------------------------------------------------------------
# Convergence studies
# -----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Experiment:
    """Everything a convergence study needs; atoms[true_index] is the true dynamics."""
    name: str
    problem: ControlProblem
    atoms: Tuple[VectorField, ...]
    schedule: object
    grid: StateGrid
    box: DomainBox
    options: SolveOptions
    true_index: int = 0
    check_bound: bool = True

    @property
    def true_field(self) -> VectorField:
        return self.atoms[self.true_index]

    def mixture(self, n: int) -> Mixture:
        return make_mixture(self.atoms, self.schedule.weights(n))


def order_of(previous: Optional[float], current: float) -> Optional[float]:
    if previous is None or not previous > 0 or not current > 0:
        return None
    if not (math.isfinite(previous) and math.isfinite(current)):
        return None
    return math.log2(previous / current)


def _study_row(experiment: Experiment, n: int, reference: ValueGrid) -> Tuple[ConvergenceRow, Optional[str]]:
    weights = experiment.schedule.weights(n)
    mix = experiment.mixture(n)
    w1 = dirac_target_w1(mix, experiment.true_field, experiment.box)
    row = ConvergenceRow(n=n, alpha1=float(weights[experiment.true_index]), w1=w1, error=float("nan"))
    try:
        grid = value_grid(experiment.problem, mix, experiment.grid, experiment.options)
    except SolverFailure as exc:
        row.failed = True
        return row, str(exc)
    row.error = sup_norm_diff(grid, reference)
    row.nonconverged = grid.nonconverged
    return row, None


def convergence_study(experiment: Experiment, n_range: Sequence[int], jobs: int = 1,
                      reference: Optional[ValueGrid] = None) -> ConvergenceReport:
    """
    For each N: build pi^N, solve its value grid, and compare with the Problem A
    grid of the true dynamics (computed here unless `reference` is given). Rows
    run in `jobs` worker processes; the report is assembled in N order.
    """
    p = experiment.problem
    n_range = list(n_range)
    constant = None
    if experiment.check_bound:
        constant = _bound_constant(p, experiment.atoms)
    if reference is None:
        reference = true_value_grid(p, experiment.true_field, experiment.grid, experiment.options)
    logger.info("%s: reference value grid done, running N=%s", experiment.name, n_range)

    if jobs > 1 and len(n_range) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_study_row, [experiment] * len(n_range), n_range,
                                     [reference] * len(n_range)))
    else:
        outcomes = [_study_row(experiment, n, reference) for n in n_range]

    report = ConvergenceReport(experiment.name, p.T - p.s, constant)
    previous = None
    for row, failure in outcomes:
        if failure:
            logger.error("%s N=%d: %s", experiment.name, row.n, failure)
        else:
            row.order = order_of(previous, row.error)
            if constant is not None:
                row.bound_rhs = constant * row.w1
                row.bound_ok = bool(row.error <= row.bound_rhs + BOUND_SLACK)
            logger.info("%s N=%d: alpha1=%.6g W1=%.6g error=%.6g order=%s", experiment.name, row.n,
                        row.alpha1, row.w1, row.error, "-" if row.order is None else f"{row.order:.3f}")
        previous = None if row.failed else row.error
        report.rows.append(row)
    return report
