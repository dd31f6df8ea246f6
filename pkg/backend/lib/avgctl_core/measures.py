# backend/lib/avgctl_core/measures.py
"""
Finite-support probability measures over vector fields, weight schedules,
and exact 1-Wasserstein distances with sup-norm ground cost.
"""
import logging
from concurrent.futures import Executor
from dataclasses import dataclass
from functools import partial
from typing import Optional, Sequence, Tuple

import numpy as np
import ot
from scipy.optimize import linprog

from .errors import DimensionMismatchError
from .fields import VectorField, sup_distance
from .models import DomainBox

logger = logging.getLogger(__name__)

PRUNE_BELOW = 1e-12
WEIGHT_SUM_TOL = 1e-6
MARGINAL_TOL = 1e-8
TIE_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class Mixture:
    """pi = sum_i alpha_i delta_{f_i}. Build through make_mixture."""
    atoms: Tuple[VectorField, ...]
    weights: np.ndarray

    @property
    def size(self) -> int:
        return len(self.atoms)

    @property
    def state_dim(self) -> int:
        return self.atoms[0].state_dim

    @property
    def control_dim(self) -> int:
        return self.atoms[0].control_dim

    @property
    def is_dirac(self) -> bool:
        return len(self.atoms) == 1


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """gamma[i, j]: mass moved from atom i of the first mixture to atom j of the second."""
    matrix: np.ndarray

    @property
    def row_sums(self) -> np.ndarray:
        return self.matrix.sum(axis=1)

    @property
    def col_sums(self) -> np.ndarray:
        return self.matrix.sum(axis=0)


def make_mixture(atoms: Sequence[VectorField], weights: Sequence[float]) -> Mixture:
    atoms = list(atoms)
    weights = np.asarray(weights, dtype=float).reshape(-1)
    if not atoms:
        raise ValueError("a mixture needs at least one atom")
    if len(atoms) != weights.size:
        raise ValueError(f"{len(atoms)} atoms but {weights.size} weights")
    if not np.all(np.isfinite(weights)):
        raise ValueError("mixture weights must be finite")
    if np.any(weights < 0):
        raise ValueError(f"mixture weights must be nonnegative, got {weights.tolist()}")
    total = float(weights.sum())
    if abs(total - 1.0) > WEIGHT_SUM_TOL:
        raise ValueError(f"mixture weights must sum to 1 (within {WEIGHT_SUM_TOL:g}), got {total:.12g}")
    dims = {(a.state_dim, a.control_dim) for a in atoms}
    if len(dims) != 1:
        raise DimensionMismatchError(f"mixture atoms disagree on dimensions: {sorted(dims)}")

    keep = weights >= PRUNE_BELOW
    kept_atoms = tuple(a for a, k in zip(atoms, keep) if k)
    kept = weights[keep]
    if kept.sum() != 1.0:
        kept = kept / kept.sum()
    kept.setflags(write=False)
    return Mixture(kept_atoms, kept)


def dirac(f: VectorField) -> Mixture:
    return make_mixture([f], [1.0])


# -----------------------------------------------------------------------------
# Weight schedules: N -> weights over a fixed atom list
# -----------------------------------------------------------------------------

@dataclass(frozen=True)
class GeometricSchedule:
    """alpha_true = 1 - 2^-N, every other atom i gets split_i * 2^-N."""
    size: int
    true_index: int = 0
    split: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if not 0 <= self.true_index < self.size:
            raise ValueError("true_index outside the atom list")
        split = self.split
        if split is None:
            split = (1.0 / (self.size - 1),) * (self.size - 1) if self.size > 1 else ()
        split = tuple(float(v) for v in split)
        if len(split) != self.size - 1:
            raise ValueError(f"split needs {self.size - 1} entries, got {len(split)}")
        if any(v < 0 for v in split) or (split and abs(sum(split) - 1.0) > WEIGHT_SUM_TOL):
            raise ValueError("split must be nonnegative and sum to 1")
        object.__setattr__(self, "split", split)

    def weights(self, n: int) -> np.ndarray:
        tail = 0.5 ** n
        w = np.empty(self.size)
        others = [i for i in range(self.size) if i != self.true_index]
        w[self.true_index] = 1.0 - tail
        for i, share in zip(others, self.split):
            w[i] = share * tail
        return w


@dataclass(frozen=True)
class ConstantSchedule:
    values: Tuple[float, ...]

    @property
    def size(self) -> int:
        return len(self.values)

    def weights(self, n: int) -> np.ndarray:
        return np.array(self.values, dtype=float)


TEST1_SCHEDULE = GeometricSchedule(5, 0, (0.25, 0.25, 0.25, 0.25))
TEST2_SCHEDULE = GeometricSchedule(3, 0, (0.5, 0.5))


# -----------------------------------------------------------------------------
# Wasserstein-1
# -----------------------------------------------------------------------------

def _check_compatible(p: Mixture, q: Mixture):
    if (p.state_dim, p.control_dim) != (q.state_dim, q.control_dim):
        raise DimensionMismatchError(
            f"mixtures differ in dimensions: ({p.state_dim}, {p.control_dim}) vs ({q.state_dim}, {q.control_dim})"
        )


def cost_matrix(p: Mixture, q: Mixture, box: DomainBox, executor: Optional[Executor] = None) -> np.ndarray:
    """C[i, j] = sup_distance(p_i, q_j, box); identical atom objects cost 0."""
    _check_compatible(p, q)
    pairs = [(i, j) for i in range(p.size) for j in range(q.size)]
    todo = [(i, j) for i, j in pairs if p.atoms[i] is not q.atoms[j]]
    left = [p.atoms[i] for i, _ in todo]
    right = [q.atoms[j] for _, j in todo]
    distance = partial(sup_distance, box=box)
    results = list((executor.map if executor is not None else map)(distance, left, right))
    C = np.zeros((p.size, q.size))
    for (i, j), value in zip(todo, results):
        C[i, j] = value
    return C


def _lowest_index_plan(a: np.ndarray, b: np.ndarray, C: np.ndarray, gamma: np.ndarray, u: np.ndarray,
                       v: np.ndarray) -> np.ndarray:
    """
    Optimal plans are the feasible plans on cells of zero reduced cost. When
    such a cell lies outside the support of gamma the optimum is not unique;
    the plan returned then fills cells in row-major order, each as far as the
    optimal face allows.
    """
    tight = C - u[:, None] - v[None, :] <= TIE_TOL * (1.0 + np.abs(C))
    if not np.any(tight & (gamma <= 0.0)):
        return gamma
    M, N = C.shape
    cells = np.flatnonzero(tight.ravel())
    rows, cols = np.divmod(cells, N)
    A_eq = np.zeros((M + N, cells.size))
    A_eq[rows, np.arange(cells.size)] = 1.0
    A_eq[M + cols, np.arange(cells.size)] = 1.0
    b_eq = np.concatenate([a, b])
    bounds = [(0.0, None)] * cells.size
    x = None
    for k in range(cells.size):
        objective = np.zeros(cells.size)
        objective[k] = -1.0
        res = linprog(objective, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
        if not res.success:
            logger.debug("tie-breaking LP failed (%s); keeping the network-simplex plan", res.message)
            return gamma
        x = res.x
        bounds[k] = (max(x[k] - TIE_TOL, 0.0), x[k])
    plan = np.zeros(M * N)
    plan[cells] = np.maximum(x, 0.0)
    return plan.reshape(M, N)


def transport(a: np.ndarray, b: np.ndarray, C: np.ndarray) -> Tuple[float, TransportPlan]:
    """
    Exact transportation LP (network simplex) for marginals a, b and cost C.
    The value comes from the network simplex. If several plans are optimal,
    the returned one puts as much mass as possible on (0, 0), then (0, 1),
    and so on in row-major order.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    b = b * (a.sum() / b.sum())
    C = np.ascontiguousarray(C, dtype=np.float64)
    if a.size == 1 or b.size == 1:
        # single source or sink: the plan is forced
        gamma = np.outer(a, np.ones(b.size)) * b / b.sum() if a.size == 1 else np.outer(a, b / b.sum())
        value = float(np.sum(gamma * C))
    else:
        gamma, log = ot.emd(a, b, C, log=True)
        gamma = np.asarray(gamma, dtype=float)
        value = float(np.sum(gamma * C))
        gamma = _lowest_index_plan(a, b, C, gamma, log["u"], log["v"])
    if (np.max(np.abs(gamma.sum(axis=1) - a)) > MARGINAL_TOL
            or np.max(np.abs(gamma.sum(axis=0) - b)) > MARGINAL_TOL):
        raise ArithmeticError("transport solver returned a plan violating the marginals")
    return value, TransportPlan(gamma)


def wasserstein1(p: Mixture, q: Mixture, box: DomainBox,
                 executor: Optional[Executor] = None) -> Tuple[float, TransportPlan]:
    """W1(p, q) with ground cost |g - f|_inf on the box, and an optimal plan."""
    C = cost_matrix(p, q, box, executor)
    value, plan = transport(p.weights, q.weights, C)
    logger.debug("W1 between %d- and %d-atom mixtures: %.9g", p.size, q.size, value)
    return value, plan


def dirac_target_w1(p: Mixture, f: VectorField, box: DomainBox) -> float:
    """W1(p, delta_f) = E_p[|g - f|_inf]: the only plan to a Dirac moves every atom onto f."""
    if (p.state_dim, p.control_dim) != (f.state_dim, f.control_dim):
        raise DimensionMismatchError(f"field {f.label} does not match the mixture dimensions")
    distances = np.array([0.0 if g is f else sup_distance(g, f, box) for g in p.atoms])
    return float(np.sum(p.weights * distances))
