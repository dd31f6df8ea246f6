# backend/lib/avgctl_core/fields.py
"""
Candidate dynamics g(x, u) and sampled sup-norm / Lipschitz computations on a
compact DomainBox.

All field callables are vectorized: fn(x (B, n), u (B, m)) -> (B, n).
Sample grids are tensor grids built with linspace, so box corners are always
sample points.
"""
import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DimensionMismatchError, NonFiniteError
from .models import DomainBox

logger = logging.getLogger(__name__)

LIPSCHITZ_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class VectorField:
    state_dim: int
    control_dim: int
    fn: Callable
    lipschitz_x: Optional[float] = None
    label: str = "g"

    def __post_init__(self):
        if self.state_dim < 1 or self.control_dim < 1:
            raise ValueError("state_dim and control_dim must be positive")
        if self.lipschitz_x is not None and not self.lipschitz_x >= 0:
            raise ValueError(f"{self.label}: declared Lipschitz constant must be nonnegative")

    def evaluate(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Batch evaluation without argument massaging; x (B, n), u (B, m)."""
        return self.fn(x, u)

    def __call__(self, x, u) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        single = x.ndim <= 1
        xb = x.reshape(-1, self.state_dim)
        ub = u.reshape(-1, self.control_dim)
        if ub.shape[0] == 1 and xb.shape[0] > 1:
            ub = np.broadcast_to(ub, (xb.shape[0], self.control_dim))
        out = np.asarray(self.fn(xb, ub), dtype=float).reshape(xb.shape[0], self.state_dim)
        return out[0] if single else out


# -----------------------------------------------------------------------------
# Built-in families. Kept as module-level dataclasses so fields pickle into
# worker processes.
# -----------------------------------------------------------------------------

@dataclass(frozen=True)
class LambdaSinDynamics:
    """x' = lam * x + sin(x) + u (scalar state and control)."""
    lam: float

    def __call__(self, x, u):
        return self.lam * x + np.sin(x) + u


@dataclass(frozen=True)
class AffineDynamics:
    """
    x' = A x + b(u), with b(u) = B u + c ("linear") or (cos u, sin u) ("polar",
    n = 2, m = 1).
    """
    A: Tuple[Tuple[float, ...], ...]
    B: Optional[Tuple[Tuple[float, ...], ...]] = None
    c: Optional[Tuple[float, ...]] = None
    control_map: str = "linear"
    _A: np.ndarray = field(init=False, repr=False, compare=False)
    _B: Optional[np.ndarray] = field(init=False, repr=False, compare=False)
    _c: Optional[np.ndarray] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionMismatchError("affine field: A must be square")
        n = A.shape[0]
        if self.control_map not in ("linear", "polar"):
            raise ValueError(f"affine field: unknown control_map {self.control_map!r}")
        if self.control_map == "polar" and n != 2:
            raise DimensionMismatchError("polar control map needs a 2-dimensional state")
        B = None if self.B is None else np.array(self.B, dtype=float).reshape(n, -1)
        c = None if self.c is None else np.array(self.c, dtype=float).reshape(n)
        object.__setattr__(self, "_A", A)
        object.__setattr__(self, "_B", B)
        object.__setattr__(self, "_c", c)

    @property
    def control_dim(self) -> int:
        if self.control_map == "polar":
            return 1
        return 1 if self._B is None else self._B.shape[1]

    def __call__(self, x, u):
        out = x @ self._A.T
        if self.control_map == "polar":
            out = out + np.concatenate([np.cos(u), np.sin(u)], axis=1)
        elif self._B is not None:
            out = out + u @ self._B.T
        if self._c is not None:
            out = out + self._c
        return out


def scalar_lambda_sin_field(lam: float, label: Optional[str] = None) -> VectorField:
    # |d/dx (lam x + sin x)| = |lam + cos x| <= |lam| + 1
    return VectorField(1, 1, LambdaSinDynamics(float(lam)), lipschitz_x=abs(float(lam)) + 1.0,
                       label=label or f"lambda={float(lam):g}")


def affine_field(A: Sequence[Sequence[float]], B=None, c=None, control_map: str = "linear",
                 label: Optional[str] = None) -> VectorField:
    A = tuple(tuple(float(v) for v in row) for row in np.atleast_2d(np.asarray(A, dtype=float)))
    B = None if B is None else tuple(tuple(float(v) for v in row)
                                     for row in np.asarray(B, dtype=float).reshape(len(A), -1))
    c = None if c is None else tuple(float(v) for v in np.atleast_1d(c))
    dyn = AffineDynamics(A, B, c, control_map)
    return VectorField(len(A), dyn.control_dim, dyn,
                       lipschitz_x=float(np.linalg.norm(np.array(A), 2)),
                       label=label or f"A={np.array(A).tolist()}")


TEST1_LAMBDAS = (0.0, 1.0, -1.0, 0.5, -0.5)
TEST2_MATRICES = (
    ((1.0, 0.0), (0.0, 1.0)),
    ((0.5, 0.0), (0.0, 2.0)),
    ((0.5, -0.5), (0.5, 0.5)),
)


def builtin_test1_fields() -> List[VectorField]:
    """f_i(x, u) = lambda_i x + sin x + u; f_1 (lambda = 0) is the true dynamics."""
    return [scalar_lambda_sin_field(lam, label=f"f{i + 1}") for i, lam in enumerate(TEST1_LAMBDAS)]


def builtin_test2_fields() -> List[VectorField]:
    """f_i(x, u) = A_i x + (cos u, sin u); f_1 (A = I) is the true dynamics."""
    return [affine_field(A, control_map="polar", label=f"f{i + 1}") for i, A in enumerate(TEST2_MATRICES)]


# -----------------------------------------------------------------------------
# Sampling
# -----------------------------------------------------------------------------

def _axes(lo, hi, samples: int) -> List[np.ndarray]:
    return [np.linspace(a, b, samples) for a, b in zip(lo, hi)]


def sample_grid(box: DomainBox, with_control: bool = True) -> Tuple[np.ndarray, np.ndarray, Tuple[int, ...]]:
    """
    Tensor grid over the box. Returns (X (P, n), U (P, m), grid_shape) with the
    state axes first; U has zero columns when with_control is False.
    """
    axes = _axes(box.state_lo, box.state_hi, box.samples)
    if with_control:
        axes += _axes(box.control_lo, box.control_hi, box.samples)
    mesh = np.meshgrid(*axes, indexing="ij")
    shape = mesh[0].shape
    flat = np.stack([m.ravel() for m in mesh], axis=1)
    return flat[:, :box.state_dim], flat[:, box.state_dim:], shape


def _check_dims(g: VectorField, box: DomainBox, other: Optional[VectorField] = None):
    if other is not None and (g.state_dim, g.control_dim) != (other.state_dim, other.control_dim):
        raise DimensionMismatchError(
            f"fields {g.label} and {other.label} differ in dimensions: "
            f"({g.state_dim}, {g.control_dim}) vs ({other.state_dim}, {other.control_dim})"
        )
    if (g.state_dim, g.control_dim) != (box.state_dim, box.control_dim):
        raise DimensionMismatchError(
            f"field {g.label} has dimensions ({g.state_dim}, {g.control_dim}), "
            f"box has ({box.state_dim}, {box.control_dim})"
        )


def _evaluate_on(g: VectorField, X: np.ndarray, U: np.ndarray) -> np.ndarray:
    values = np.asarray(g.evaluate(X, U), dtype=float).reshape(X.shape[0], g.state_dim)
    if not np.all(np.isfinite(values)):
        bad = int(np.argmax(~np.all(np.isfinite(values), axis=1)))
        raise NonFiniteError(f"field {g.label} is not finite at x={X[bad].tolist()}, u={U[bad].tolist()}")
    return values


def sup_distance(g: VectorField, f: VectorField, box: DomainBox) -> float:
    """max over the sample grid of |g(x, u) - f(x, u)| (Euclidean norm)."""
    _check_dims(g, box, f)
    X, U, _ = sample_grid(box)
    diff = _evaluate_on(g, X, U) - _evaluate_on(f, X, U)
    return float(np.max(np.linalg.norm(diff, axis=1)))


def _neighbour_offsets(n: int):
    # One representative per +/- pair of neighbour directions.
    for offset in itertools.product((-1, 0, 1), repeat=n):
        nonzero = [o for o in offset if o != 0]
        if nonzero and nonzero[0] == 1:
            yield offset


def _grid_lipschitz(points: np.ndarray, values: np.ndarray, n: int) -> float:
    """
    Largest difference quotient |v(a) - v(b)| / |x(a) - x(b)| over neighbouring
    grid nodes that differ only in the first n (state) axes.
    points: grid_shape + (n,), values: grid_shape + (k,).
    """
    trailing = (slice(None),) * (points.ndim - 1 - n)
    best = 0.0
    for offset in _neighbour_offsets(n):
        lo_idx, hi_idx = [], []
        for o in offset:
            if o == 1:
                lo_idx.append(slice(None, -1))
                hi_idx.append(slice(1, None))
            elif o == -1:
                lo_idx.append(slice(1, None))
                hi_idx.append(slice(None, -1))
            else:
                lo_idx.append(slice(None))
                hi_idx.append(slice(None))
        a = tuple(lo_idx) + trailing
        b = tuple(hi_idx) + trailing
        dx = np.linalg.norm(points[b] - points[a], axis=-1)
        dv = np.linalg.norm(values[b] - values[a], axis=-1)
        best = max(best, float(np.max(dv / dx)))
    return best


def estimate_lipschitz(g: VectorField, box: DomainBox) -> float:
    """Sampled lower bound on the Lipschitz constant of g in x, uniform in u."""
    _check_dims(g, box)
    X, U, shape = sample_grid(box)
    values = _evaluate_on(g, X, U)
    return _grid_lipschitz(X.reshape(shape + (g.state_dim,)), values.reshape(shape + (g.state_dim,)),
                           g.state_dim)


def estimate_cost_lipschitz(cost: Callable, box: DomainBox, terminal: bool = False) -> float:
    """Same estimate for a scalar cost l(x, u), or h(x) when terminal is True."""
    X, U, shape = sample_grid(box, with_control=not terminal)
    values = np.asarray(cost(X) if terminal else cost(X, U), dtype=float).reshape(-1)
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"{'terminal' if terminal else 'running'} cost is not finite on the box")
    return _grid_lipschitz(X.reshape(shape + (box.state_dim,)), values.reshape(shape + (1,)), box.state_dim)


def exceeds_declared(estimate: float, declared: float) -> bool:
    return estimate > declared * (1.0 + LIPSCHITZ_SLACK) + 1e-12


def validate_field(g: VectorField, box: DomainBox) -> float:
    """
    Check the VectorField invariants on the box: finite everywhere and, if a
    constant is declared, sampled quotients never exceed it. Returns the
    sampled Lipschitz estimate.
    """
    estimate = estimate_lipschitz(g, box)
    if g.lipschitz_x is not None and exceeds_declared(estimate, g.lipschitz_x):
        raise ValueError(
            f"field {g.label}: sampled Lipschitz quotient {estimate:.9g} exceeds declared {g.lipschitz_x:.9g}"
        )
    logger.debug("field %s: sampled Lipschitz %.6g (declared %s)", g.label, estimate, g.lipschitz_x)
    return estimate
