# backend/lib/avgctl_core/models.py
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from .errors import DimensionMismatchError

# Default sample counts per sampled dimension, keyed by total dims (state + control).
_DEFAULT_SAMPLES = {1: 201, 2: 201, 3: 41}
_DEFAULT_SAMPLES_HIGH = 21


def _as_bounds(lo, hi, what: str) -> Tuple[Tuple[float, ...], Tuple[float, ...]]:
    lo = tuple(float(v) for v in np.atleast_1d(lo))
    hi = tuple(float(v) for v in np.atleast_1d(hi))
    if len(lo) != len(hi) or not lo:
        raise DimensionMismatchError(f"{what}: lo/hi must be non-empty and of equal length")
    for a, b in zip(lo, hi):
        if not (math.isfinite(a) and math.isfinite(b)):
            raise ValueError(f"{what}: bounds must be finite, got [{a}, {b}]")
        if not a < b:
            raise ValueError(f"{what}: lower bound {a} must be < upper bound {b}")
    return lo, hi


@dataclass(frozen=True)
class DomainBox:
    """Compact box X x U on which sup norms and Lipschitz estimates are sampled."""
    state_lo: Tuple[float, ...]
    state_hi: Tuple[float, ...]
    control_lo: Tuple[float, ...]
    control_hi: Tuple[float, ...]
    samples_per_dim: Optional[int] = None

    def __post_init__(self):
        slo, shi = _as_bounds(self.state_lo, self.state_hi, "state box")
        clo, chi = _as_bounds(self.control_lo, self.control_hi, "control box")
        object.__setattr__(self, "state_lo", slo)
        object.__setattr__(self, "state_hi", shi)
        object.__setattr__(self, "control_lo", clo)
        object.__setattr__(self, "control_hi", chi)
        if self.samples_per_dim is not None and int(self.samples_per_dim) < 2:
            raise ValueError("samples_per_dim must be >= 2")

    @property
    def state_dim(self) -> int:
        return len(self.state_lo)

    @property
    def control_dim(self) -> int:
        return len(self.control_lo)

    @property
    def samples(self) -> int:
        if self.samples_per_dim is not None:
            return int(self.samples_per_dim)
        dims = self.state_dim + self.control_dim
        return _DEFAULT_SAMPLES.get(dims, _DEFAULT_SAMPLES_HIGH)


@dataclass(frozen=True, eq=False)
class ControlProblem:
    """
    Finite-horizon problem data: horizon [s, T], control box U, running cost
    l(x, u) and terminal cost h(x).

    Costs are vectorized: running_cost(x (B, n), u (B, m)) -> (B,),
    terminal_cost(x (B, n)) -> (B,). lipschitz_l / lipschitz_h are the
    constants in x, when known.
    """
    state_dim: int
    control_dim: int
    s: float
    T: float
    control_lo: Tuple[float, ...]
    control_hi: Tuple[float, ...]
    running_cost: Callable
    terminal_cost: Callable
    periodic: Tuple[bool, ...] = ()
    lipschitz_l: Optional[float] = None
    lipschitz_h: Optional[float] = None
    intervals: int = 100
    substeps: int = 1
    blowup_guard: float = 1e8

    def __post_init__(self):
        if self.state_dim < 1 or self.control_dim < 1:
            raise ValueError("state_dim and control_dim must be positive")
        if not (math.isfinite(self.s) and math.isfinite(self.T)) or not self.s < self.T:
            raise ValueError(f"horizon requires s < T, got s={self.s}, T={self.T}")
        lo, hi = _as_bounds(self.control_lo, self.control_hi, "control set U")
        if len(lo) != self.control_dim:
            raise DimensionMismatchError(
                f"control set has {len(lo)} coordinates, problem control_dim is {self.control_dim}"
            )
        object.__setattr__(self, "control_lo", lo)
        object.__setattr__(self, "control_hi", hi)
        periodic = tuple(bool(p) for p in self.periodic) or (False,) * self.control_dim
        if len(periodic) != self.control_dim:
            raise DimensionMismatchError("periodic flags must match control_dim")
        object.__setattr__(self, "periodic", periodic)
        for name in ("lipschitz_l", "lipschitz_h"):
            value = getattr(self, name)
            if value is not None and not value >= 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.intervals < 1 or self.substeps < 1:
            raise ValueError("intervals and substeps must be positive")

    @property
    def dt(self) -> float:
        return (self.T - self.s) / self.intervals

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.s, self.T, self.intervals + 1)

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.control_lo) + np.asarray(self.control_hi))


@dataclass(frozen=True, eq=False)
class ControlSignal:
    """Piecewise-constant control: values[k] holds on [t_k, t_{k+1})."""
    s: float
    T: float
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 1:
            raise ValueError("control values must have shape (K, m)")
        if not self.s < self.T:
            raise ValueError("control horizon requires s < T")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def intervals(self) -> int:
        return self.values.shape[0]

    @property
    def control_dim(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.s, self.T, self.intervals + 1)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """State path(s) on the control knots; states has shape (atoms, K + 1, n)."""
    times: np.ndarray
    states: np.ndarray
    labels: Tuple[str, ...]

    @property
    def final(self) -> np.ndarray:
        return self.states[:, -1, :]

    def path(self, atom: int = 0) -> np.ndarray:
        return self.states[atom]


@dataclass(frozen=True)
class SolveOptions:
    """
    A restart also stops after a few accepted steps in a row that
    lower the cost by at most stall_tol * (1 + |J|); it then counts as
    converged when its projected gradient norm is within
    max(stall_grad_tol, grad_tol).
    """
    restarts: int = 5
    max_iters: int = 5000
    grad_tol: float = 1e-8
    initial_step: float = 1.0
    shrink: float = 0.5
    armijo_c: float = 1e-4
    rng_seed: int = 0
    spectral: bool = True
    max_backtracks: int = 80
    stall_tol: float = 1e-14
    stall_grad_tol: float = 1e-5

    def __post_init__(self):
        if self.restarts < 1 or self.max_iters < 1:
            raise ValueError("restarts and max_iters must be positive")
        if not self.grad_tol > 0 or not self.initial_step > 0:
            raise ValueError("grad_tol and initial_step must be positive")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink factor must lie in (0, 1)")
        if not 0 < self.armijo_c < 1:
            raise ValueError("sufficient-decrease constant must lie in (0, 1)")
        if self.stall_tol < 0 or not self.stall_grad_tol > 0:
            raise ValueError("stall_tol must be nonnegative and stall_grad_tol positive")


@dataclass(frozen=True, eq=False)
class SolveResult:
    control: ControlSignal
    value: float
    converged: bool
    iterations: int
    grad_norm: float
    best_restart: int
    restart_values: Tuple[float, ...]
    restart_converged: Tuple[bool, ...]


@dataclass(frozen=True)
class StateGrid:
    """Uniform tensor grid of initial states, endpoints included."""
    lo: Tuple[float, ...]
    hi: Tuple[float, ...]
    counts: Tuple[int, ...]

    def __post_init__(self):
        lo, hi = _as_bounds(self.lo, self.hi, "state grid")
        counts = tuple(int(c) for c in np.atleast_1d(self.counts))
        if len(counts) == 1 and len(lo) > 1:
            counts = counts * len(lo)
        if len(counts) != len(lo):
            raise DimensionMismatchError("state grid counts must match its dimension")
        if any(c < 2 for c in counts):
            raise ValueError("state grid needs at least 2 points per coordinate")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "counts", counts)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def points(self) -> np.ndarray:
        axes = [np.linspace(a, b, c) for a, b, c in zip(self.lo, self.hi, self.counts)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass(frozen=True, eq=False)
class ValueGrid:
    grid: StateGrid
    values: np.ndarray
    converged: np.ndarray
    s: float = 0.0

    @property
    def nonconverged(self) -> int:
        return int(np.count_nonzero(~self.converged))


@dataclass(frozen=True)
class BoundReport:
    lhs: float
    rhs: float
    constant: float
    w1: float
    violated: bool

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs


@dataclass
class ConvergenceRow:
    n: int
    alpha1: float
    w1: float
    error: float
    order: Optional[float] = None
    bound_rhs: Optional[float] = None
    bound_ok: Optional[bool] = None
    failed: bool = False
    nonconverged: int = 0


@dataclass
class ConvergenceReport:
    name: str
    horizon: float
    constant: Optional[float] = None
    rows: List[ConvergenceRow] = field(default_factory=list)

    @property
    def violations(self) -> List[int]:
        return [r.n for r in self.rows if r.bound_ok is False]

    @property
    def failures(self) -> List[int]:
        return [r.n for r in self.rows if r.failed]

    @property
    def margins(self) -> List[Optional[float]]:
        return [None if r.bound_rhs is None else r.bound_rhs - r.error for r in self.rows]
