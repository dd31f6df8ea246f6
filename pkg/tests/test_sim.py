# tests/test_sim.py
import math

import numpy as np
import pytest

from backend.lib.avgctl_core.errors import DivergenceError
from backend.lib.avgctl_core.fields import VectorField, affine_field, builtin_test1_fields, scalar_lambda_sin_field
from backend.lib.avgctl_core.measures import TEST1_SCHEDULE, dirac, make_mixture
from backend.lib.avgctl_core.models import ControlProblem, ControlSignal, DomainBox
from backend.lib.avgctl_core.sim import (adjoint_gradient, batch_cost, check_admissible, constant_control,
                                         cost_averaged, cost_single, integrate, multi_trajectory, project_controls,
                                         validate_problem)


def zero_running(x, u):
    return np.zeros(x.shape[0])


def zero_terminal(x):
    return np.zeros(x.shape[0])


def control_energy(x, u):
    return np.sum(u * u, axis=1)


def negative_state(x):
    return -np.sum(x, axis=1)


def make_problem(running=zero_running, terminal=zero_terminal, intervals=100, n=1, m=1, **kwargs):
    return ControlProblem(state_dim=n, control_dim=m, s=0.0, T=1.0, control_lo=(-1.0,) * m, control_hi=(1.0,) * m,
                          running_cost=running, terminal_cost=terminal, intervals=intervals, **kwargs)


def make_test1_problem(intervals=100):
    return make_problem(control_energy, negative_state, intervals, lipschitz_l=0.0, lipschitz_h=1.0)


still = VectorField(1, 1, lambda x, u: np.zeros_like(x), lipschitz_x=0.0, label="zero")
growth = VectorField(1, 1, lambda x, u: x, lipschitz_x=1.0, label="x")
drift = VectorField(1, 1, lambda x, u: u, lipschitz_x=0.0, label="u")


def test_zero_field_keeps_state():
    p = make_problem()
    traj = integrate(still, constant_control(p, 0.3), [1.0])
    np.testing.assert_array_equal(traj.path(), np.ones((101, 1)))


def test_exponential_growth_matches_e():
    p = make_problem()
    traj = integrate(growth, constant_control(p, 0.0), [1.0])
    assert traj.final[0, 0] == pytest.approx(math.e, abs=1e-8)
    assert traj.path()[0, 0] == 1.0


def test_equilibrium_of_test1_field():
    p = make_problem()
    traj = integrate(builtin_test1_fields()[0], constant_control(p, 0.0), [0.0])
    assert np.all(traj.path() == 0.0)


def test_rk4_refinement_is_fourth_order():
    f = scalar_lambda_sin_field(1.0)
    u = ControlSignal(0.0, 1.0, np.full((10, 1), 0.3))
    reference = integrate(f, u, [0.5], substeps=64).final[0, 0]
    e1 = abs(integrate(f, u, [0.5], substeps=1).final[0, 0] - reference)
    e2 = abs(integrate(f, u, [0.5], substeps=2).final[0, 0] - reference)
    assert 10.0 < e1 / e2 < 22.0


def test_divergence_names_time():
    blowup = VectorField(1, 1, lambda x, u: x * x, label="x^2")
    p = make_problem()
    with pytest.raises(DivergenceError) as info:
        integrate(blowup, constant_control(p, 0.0), [10.0])
    # x' = x^2 from 10 explodes at t = 0.1
    assert 0.05 < info.value.time <= 0.2
    cost = batch_cost(make_problem(), dirac(blowup), np.zeros((1, 100, 1)), np.array([[10.0]]))
    assert cost[0] == np.inf


def test_integration_is_deterministic():
    rng = np.random.default_rng(3)
    u = ControlSignal(0.0, 1.0, rng.uniform(-1, 1, size=(50, 1)))
    f = scalar_lambda_sin_field(-0.5)
    np.testing.assert_array_equal(integrate(f, u, [0.2]).states, integrate(f, u, [0.2]).states)


def test_cost_single_examples():
    p = make_problem(terminal=negative_state)
    assert cost_single(p, still, constant_control(p, 0.0), [1.0]) == pytest.approx(-1.0, abs=1e-15)
    p1 = make_test1_problem()
    assert cost_single(p1, builtin_test1_fields()[0], constant_control(p1, 0.0), [0.0]) == 0.0
    p2 = make_problem(control_energy)
    assert cost_single(p2, scalar_lambda_sin_field(-1.0), constant_control(p2, 0.5), [0.3]) == \
        pytest.approx(0.25, abs=1e-10)


def test_constant_shift_of_running_cost():
    base = make_test1_problem()
    shifted = make_problem(lambda x, u: control_energy(x, u) + 0.7, negative_state)
    f = scalar_lambda_sin_field(0.5)
    u = ControlSignal(0.0, 1.0, np.linspace(-1, 1, 100)[:, None])
    assert cost_single(shifted, f, u, [0.4]) - cost_single(base, f, u, [0.4]) == pytest.approx(0.7, abs=1e-12)


def test_cost_averaged_is_weighted_sum():
    p = make_test1_problem()
    f1, f2 = builtin_test1_fields()[:2]
    u = ControlSignal(0.0, 1.0, np.full((100, 1), 0.25))
    c1 = cost_single(p, f1, u, [0.5])
    c2 = cost_single(p, f2, u, [0.5])
    assert cost_averaged(p, dirac(f2), u, [0.5]) == c2
    assert cost_averaged(p, make_mixture([f1, f2], [0.5, 0.5]), u, [0.5]) == pytest.approx((c1 + c2) / 2, rel=1e-14)
    pi1 = make_mixture(builtin_test1_fields(), TEST1_SCHEDULE.weights(1))
    assert cost_averaged(p, pi1, constant_control(p, 0.0), [0.0]) == 0.0


def test_multi_trajectory_has_one_path_per_atom():
    p = make_test1_problem()
    pi1 = make_mixture(builtin_test1_fields(), TEST1_SCHEDULE.weights(1))
    traj = multi_trajectory(p, pi1, constant_control(p, 0.5), [1.0])
    assert traj.states.shape == (5, 101, 1)
    assert traj.labels == ("f1", "f2", "f3", "f4", "f5")
    np.testing.assert_array_equal(traj.states[:, 0, 0], np.ones(5))


def test_quadratic_control_gradient():
    p = make_problem(control_energy, intervals=20)
    rng = np.random.default_rng(5)
    u = ControlSignal(0.0, 1.0, rng.uniform(-1, 1, size=(20, 1)))
    grad = adjoint_gradient(p, dirac(still), u, [0.3])
    np.testing.assert_allclose(grad, 2.0 * u.values * p.dt, atol=1e-6)


def finite_difference_gradient(p, mix, u, x0, step=1e-5):
    grad = np.zeros_like(u.values)
    for k in range(u.values.shape[0]):
        for j in range(u.values.shape[1]):
            up = u.values.copy()
            um = u.values.copy()
            up[k, j] += step
            um[k, j] -= step
            grad[k, j] = (cost_averaged(p, mix, ControlSignal(u.s, u.T, up), x0)
                          - cost_averaged(p, mix, ControlSignal(u.s, u.T, um), x0)) / (2 * step)
    return grad


def test_adjoint_matches_finite_differences():
    rng = np.random.default_rng(2024)
    for trial in range(20):
        if trial % 2:
            n = 2
            p = make_problem(lambda x, u: np.sum(x * x, axis=1) + 0.1 * np.sum(u * u, axis=1),
                             lambda x: np.sum(x, axis=1) + 0.5 * np.sum(x * x, axis=1), intervals=10, n=2)
            atoms = [affine_field(rng.normal(0, 0.5, (2, 2)), B=rng.normal(0, 1, (2, 1)), c=rng.normal(0, 0.2, 2))
                     for _ in range(2)]
        else:
            n = 1
            p = make_problem(lambda x, u: np.sum(u * u, axis=1) + np.sum(x * x, axis=1), negative_state,
                             intervals=10)
            atoms = [scalar_lambda_sin_field(lam) for lam in rng.uniform(-1, 1, 3)]
        mix = make_mixture(atoms, rng.dirichlet(np.ones(len(atoms))))
        u = ControlSignal(0.0, 1.0, rng.uniform(-0.8, 0.8, size=(10, 1)))
        x0 = rng.uniform(-1, 1, n)
        adjoint = adjoint_gradient(p, mix, u, x0)
        reference = finite_difference_gradient(p, mix, u, x0)
        assert np.linalg.norm(adjoint - reference) <= 1e-4 * np.linalg.norm(reference)


def test_project_controls_clamps_and_wraps():
    p = ControlProblem(1, 2, 0.0, 1.0, (-1.0, 0.0), (1.0, 2 * np.pi), zero_running, zero_terminal,
                       periodic=(False, True))
    out = project_controls(p, np.array([[1.5, 2 * np.pi + 0.5], [-3.0, -0.5]]))
    np.testing.assert_allclose(out, [[1.0, 0.5], [-1.0, 2 * np.pi - 0.5]])


def test_check_admissible():
    p = make_problem()
    with pytest.raises(ValueError, match="leave the control set"):
        check_admissible(p, ControlSignal(0.0, 1.0, np.full((100, 1), 1.5)))
    with pytest.raises(ValueError, match="horizon"):
        check_admissible(p, ControlSignal(0.0, 2.0, np.zeros((100, 1))))
    periodic = ControlProblem(1, 1, 0.0, 1.0, (0.0,), (1.0,), zero_running, zero_terminal, periodic=(True,))
    check_admissible(periodic, ControlSignal(0.0, 1.0, np.full((10, 1), 4.2)))


def test_problem_requires_increasing_horizon():
    with pytest.raises(ValueError, match="s < T"):
        ControlProblem(1, 1, 1.0, 1.0, (-1.0,), (1.0,), zero_running, zero_terminal)


def test_validate_problem_checks_cost_constants():
    box = DomainBox((-3.0,), (3.0,), (-1.0,), (1.0,))
    est_l, est_h = validate_problem(make_test1_problem(), box)
    assert est_l == 0.0
    assert est_h == pytest.approx(1.0, rel=1e-9)
    understated = make_problem(control_energy, negative_state, lipschitz_l=0.0, lipschitz_h=0.5)
    with pytest.raises(ValueError, match="terminal cost"):
        validate_problem(understated, box)
