# tests/test_fields.py
import itertools

import numpy as np
import pytest

from backend.lib.avgctl_core.errors import DimensionMismatchError, NonFiniteError
from backend.lib.avgctl_core.fields import (VectorField, affine_field, builtin_test1_fields, builtin_test2_fields,
                                            estimate_lipschitz, sample_grid, scalar_lambda_sin_field, sup_distance,
                                            validate_field)
from backend.lib.avgctl_core.models import DomainBox


def unit_box(samples=None):
    return DomainBox((-1.0,), (1.0,), (-1.0,), (1.0,), samples)


def test_sup_distance_identical_field_is_zero():
    f = scalar_lambda_sin_field(0.5)
    assert sup_distance(f, f, unit_box()) == 0.0


def test_sup_distance_test1_fields():
    f1, f2, f3, f4, f5 = builtin_test1_fields()
    box = unit_box()
    # f_i - f_1 = lambda_i * x, largest at |x| = 1
    assert sup_distance(f2, f1, box) == pytest.approx(1.0, abs=1e-12)
    assert sup_distance(f3, f1, box) == pytest.approx(1.0, abs=1e-12)
    assert sup_distance(f4, f1, box) == pytest.approx(0.5, abs=1e-12)
    assert sup_distance(f5, f1, box) == pytest.approx(0.5, abs=1e-12)


def test_sup_distance_symmetric_and_triangle():
    fields = builtin_test1_fields()
    box = unit_box(samples=31)
    for a, b, c in itertools.permutations(fields, 3):
        assert sup_distance(a, b, box) == sup_distance(b, a, box)
        assert sup_distance(a, c, box) <= sup_distance(a, b, box) + sup_distance(b, c, box) + 1e-12


def test_sup_distance_nested_grids_monotone():
    f = scalar_lambda_sin_field(0.0)
    g = VectorField(1, 1, lambda x, u: np.sin(3.0 * x) + u, label="sin3x")
    coarse = sup_distance(f, g, unit_box(samples=11))
    fine = sup_distance(f, g, unit_box(samples=21))  # contains every node of the 11-point grid
    assert fine >= coarse - 1e-12


def test_affine_sup_distance_attained_at_corners():
    f1, f2, f3 = builtin_test2_fields()
    box = DomainBox((-3.0, -3.0), (3.0, 3.0), (0.0,), (2 * np.pi,))
    corners = np.array(list(itertools.product((-3.0, 3.0), repeat=2)))
    for g, A_g in ((f2, ((0.5, 0.0), (0.0, 2.0))), (f3, ((0.5, -0.5), (0.5, 0.5)))):
        diff = corners @ (np.array(A_g) - np.eye(2)).T
        expected = np.max(np.linalg.norm(diff, axis=1))
        assert sup_distance(g, f1, box) == pytest.approx(expected, rel=1e-12)


def test_sample_grid_includes_corners():
    box = DomainBox((-3.0,), (3.0,), (0.0,), (1.0,), 5)
    X, U, shape = sample_grid(box)
    assert shape == (5, 5)
    points = {(float(x[0]), float(u[0])) for x, u in zip(X, U)}
    for corner in itertools.product((-3.0, 3.0), (0.0, 1.0)):
        assert corner in points


def test_estimate_lipschitz_examples():
    box = unit_box()
    constant = VectorField(1, 1, lambda x, u: np.full_like(x, 3.0), label="c")
    linear = VectorField(1, 1, lambda x, u: 2.0 * x, label="2x")
    assert estimate_lipschitz(constant, box) == 0.0
    assert estimate_lipschitz(linear, box) == pytest.approx(2.0, rel=1e-9)
    # d/dx (x + sin x) = 1 + cos x lies in [0, 2]
    estimate = estimate_lipschitz(scalar_lambda_sin_field(1.0), box)
    assert 2.0 * (1 - 1e-3) <= estimate <= 2.0


def test_builtin_fields_declared_constants_hold():
    box1 = DomainBox((-3.0,), (3.0,), (-1.0,), (1.0,))
    for f in builtin_test1_fields():
        assert f.lipschitz_x == abs(f.fn.lam) + 1.0
        assert validate_field(f, box1) <= f.lipschitz_x * (1 + 1e-9)
    box2 = DomainBox((-3.0, -3.0), (3.0, 3.0), (0.0,), (2 * np.pi,))
    for f in builtin_test2_fields():
        assert validate_field(f, box2) <= f.lipschitz_x * (1 + 1e-9)


def test_validate_field_rejects_understated_constant():
    g = VectorField(1, 1, lambda x, u: 3.0 * x + u, lipschitz_x=1.0, label="too-small")
    with pytest.raises(ValueError, match="exceeds declared"):
        validate_field(g, unit_box())


def test_non_finite_field_is_rejected():
    g = VectorField(1, 1, lambda x, u: 1.0 / x, label="pole")
    f = scalar_lambda_sin_field(0.0)
    with pytest.raises(NonFiniteError):
        sup_distance(g, f, unit_box(samples=3))  # x = 0 is a node


def test_dimension_mismatch():
    f = scalar_lambda_sin_field(0.0)
    g = builtin_test2_fields()[0]
    with pytest.raises(DimensionMismatchError):
        sup_distance(f, g, unit_box())


def test_affine_field_linear_control_map():
    g = affine_field([[0.0, 1.0], [-1.0, 0.0]], B=[[0.0], [1.0]], label="oscillator")
    assert g.control_dim == 1
    out = g([1.0, 2.0], [0.5])
    np.testing.assert_allclose(out, [2.0, -0.5])
    assert g.lipschitz_x == pytest.approx(1.0)


def test_domain_box_validation_and_default_samples():
    with pytest.raises(ValueError):
        DomainBox((1.0,), (1.0,), (-1.0,), (1.0,))
    with pytest.raises(ValueError):
        DomainBox((-1.0,), (1.0,), (-1.0,), (1.0,), samples_per_dim=1)
    assert unit_box().samples == 201
    assert DomainBox((-1.0, -1.0), (1.0, 1.0), (0.0,), (1.0,)).samples == 41
    assert DomainBox((-1.0, -1.0), (1.0, 1.0), (0.0, 0.0), (1.0, 1.0)).samples == 21
