# backend/lib/avgctl_core/experiments.py
"""
Turns an ExperimentConfig into a runnable Experiment and runs the whole
pipeline behind the CLI: convergence study, reference value grid, optimal
multi-trajectory, and every CSV artifact.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .analysis import Experiment, convergence_study, optimal_multi_trajectory, true_value_grid
from .config import ExperimentConfig
from .errors import SolverFailure
from .fields import (VectorField, affine_field, builtin_test1_fields, builtin_test2_fields, scalar_lambda_sin_field,
                     validate_field)
from .io import (bounds_summary, control_to_csv, nonconverged_total, report_to_csv, trajectory_to_csv,
                 value_grid_to_csv)
from .measures import ConstantSchedule, GeometricSchedule, Mixture, make_mixture
from .models import ControlProblem, ConvergenceReport, DomainBox, SolveOptions, StateGrid
from .sim import validate_problem

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_BOUND = 2
EXIT_SOLVER = 3


# -----------------------------------------------------------------------------
# Costs. Module-level dataclasses so problems pickle into worker processes.
# -----------------------------------------------------------------------------

@dataclass(frozen=True)
class RunningCost:
    """weight * |u|^2 (control_energy), weight * |x|^2 (state_energy) or 0."""
    kind: str
    weight: float = 1.0

    def __call__(self, x, u):
        if self.kind == "control_energy":
            return self.weight * np.sum(u * u, axis=1)
        if self.kind == "state_energy":
            return self.weight * np.sum(x * x, axis=1)
        return np.zeros(x.shape[0])


@dataclass(frozen=True)
class TerminalCost:
    """weight * sum(x) (sum), weight * |x|^2 (squared_norm) or 0."""
    kind: str
    weight: float = 1.0

    def __call__(self, x):
        if self.kind == "sum":
            return self.weight * np.sum(x, axis=1)
        if self.kind == "squared_norm":
            return self.weight * np.sum(x * x, axis=1)
        return np.zeros(x.shape[0])


def build_problem(config: ExperimentConfig) -> ControlProblem:
    p = config.problem
    return ControlProblem(
        state_dim=p.state_dim, control_dim=p.control_dim, s=p.s, T=p.T,
        control_lo=p.control_lo, control_hi=p.control_hi,
        running_cost=RunningCost(p.running_cost, p.running_weight),
        terminal_cost=TerminalCost(p.terminal_cost, p.terminal_weight),
        periodic=p.periodic, lipschitz_l=p.lipschitz_l, lipschitz_h=p.lipschitz_h,
        intervals=p.intervals, substeps=p.substeps, blowup_guard=p.blowup_guard,
    )


def build_fields(config: ExperimentConfig) -> List[VectorField]:
    d = config.dynamics
    n, m = config.problem.state_dim, config.problem.control_dim
    if d.kind == "builtin_test1":
        return builtin_test1_fields()
    if d.kind == "builtin_test2":
        return builtin_test2_fields()
    if d.kind == "scalar_lambda_sin":
        return [scalar_lambda_sin_field(lam, label=f"f{i + 1}") for i, lam in enumerate(d.lambdas)]
    matrices = np.asarray(d.matrices, dtype=float).reshape(-1, n, n)
    B = None if d.control_map == "polar" else np.asarray(d.input_matrix, dtype=float).reshape(n, m)
    return [affine_field(A, B, control_map=d.control_map, label=f"f{i + 1}") for i, A in enumerate(matrices)]


def check_declared_constants(config: ExperimentConfig, problem: ControlProblem, atoms, box: DomainBox):
    """Declared Lipschitz constants must hold on the box before anything is solved."""
    for f in atoms:
        try:
            validate_field(f, box)
        except ValueError as exc:
            raise config.error("dynamics", "kind", str(exc)) from exc
    try:
        est_l, est_h = validate_problem(problem, box)
    except ValueError as exc:
        key = "lipschitz_h" if str(exc).startswith("terminal") else "lipschitz_l"
        raise config.error("problem", key, str(exc)) from exc
    logger.debug("%s: sampled cost Lipschitz l=%.6g h=%.6g", config.experiment.name, est_l, est_h)


def build_experiment(config: ExperimentConfig) -> Experiment:
    atoms = tuple(build_fields(config))
    sch = config.schedule
    if sch.rule == "constant":
        schedule = ConstantSchedule(sch.weights)
    else:
        schedule = GeometricSchedule(len(atoms), config.dynamics.true_index, sch.split or None)
    b = config.box
    sol = config.solver
    problem = build_problem(config)
    box = DomainBox(b.state_lo, b.state_hi, b.control_lo, b.control_hi, b.samples_per_dim or None)
    check_declared_constants(config, problem, atoms, box)
    return Experiment(
        name=config.experiment.name,
        problem=problem,
        atoms=atoms,
        schedule=schedule,
        grid=StateGrid(config.grid.lo, config.grid.hi, config.grid.counts),
        box=box,
        options=SolveOptions(restarts=sol.restarts, max_iters=sol.max_iters, grad_tol=sol.grad_tol,
                             initial_step=sol.initial_step, shrink=sol.shrink, armijo_c=sol.armijo_c,
                             rng_seed=config.experiment.seed, spectral=sol.spectral),
        true_index=config.dynamics.true_index,
        check_bound=config.output.check_bound,
    )


def trajectory_mixture(config: ExperimentConfig, experiment: Experiment) -> Mixture:
    weights = config.output.trajectory_weights
    if weights:
        return make_mixture(experiment.atoms, weights)
    return experiment.mixture(config.schedule.n_min)


# -----------------------------------------------------------------------------
# Runner
# -----------------------------------------------------------------------------

@dataclass
class StudyOutcome:
    report: Optional[ConvergenceReport] = None
    artifacts: Dict[str, str] = field(default_factory=dict)
    status: int = EXIT_OK
    messages: List[str] = field(default_factory=list)


def run_study(config: ExperimentConfig, store, jobs: int = 1) -> StudyOutcome:
    """
    Run the experiment and write its artifacts through `store` (anything with
    write_text(name, text) -> path). The status is the CLI exit code: 3 if any
    row (or the trajectory solve) failed, else 2 on a bound violation, else 0.
    """
    experiment = build_experiment(config)
    name = experiment.name
    outcome = StudyOutcome()
    n_range = range(config.schedule.n_min, config.schedule.n_max + 1)
    logger.info("%s: %d atoms, N in [%d, %d], %d grid points, %d restarts, %d jobs", name,
                len(experiment.atoms), n_range.start, n_range.stop - 1, experiment.grid.points.shape[0],
                experiment.options.restarts, jobs)

    try:
        reference = true_value_grid(experiment.problem, experiment.true_field, experiment.grid, experiment.options)
    except SolverFailure as exc:
        outcome.status = EXIT_SOLVER
        outcome.messages.append(f"{name}: reference value grid failed: {exc}")
        return outcome
    outcome.artifacts["value_true"] = str(store.write_text(f"{name}_value_true.csv", value_grid_to_csv(reference)))

    report = convergence_study(experiment, n_range, jobs=jobs, reference=reference)
    outcome.report = report
    outcome.artifacts["report"] = str(store.write_text(f"{name}_report.csv", report_to_csv(report)))
    outcome.artifacts["bounds"] = str(store.write_text(f"{name}_bounds.txt", bounds_summary(report)))
    skipped = nonconverged_total(report)
    if skipped:
        outcome.messages.append(f"{name}: {skipped} grid solves stopped before the gradient tolerance")

    x0 = np.asarray(config.output.trajectory_x0, dtype=float)
    try:
        result, traj = optimal_multi_trajectory(experiment.problem, trajectory_mixture(config, experiment),
                                                x0, experiment.options)
    except SolverFailure as exc:
        outcome.messages.append(f"{name}: trajectory solve failed: {exc}")
        outcome.status = EXIT_SOLVER
    else:
        outcome.artifacts["trajectory"] = str(store.write_text(f"{name}_trajectory.csv", trajectory_to_csv(traj)))
        outcome.artifacts["control"] = str(store.write_text(f"{name}_control.csv", control_to_csv(result.control)))

    if report.failures:
        outcome.status = EXIT_SOLVER
        outcome.messages.append(f"{name}: solver failed for N = {report.failures}")
    elif report.violations and outcome.status == EXIT_OK:
        outcome.status = EXIT_BOUND
        outcome.messages.append(f"{name}: bound violated for N = {report.violations}")
    return outcome
