import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adjopt.fem import FieldFunction, FunctionSpace, rectangle_mesh
from adjopt.forms import Coefficient, TestFunction, dx
from adjopt.functional import (FINISH_TIME, START_TIME, FunctionalError, dt, nearest_level,
                               trapezoid_weights)


@pytest.fixture(scope="module")
def setup():
    mesh = rectangle_mesh(2)
    V = FunctionSpace(mesh, "P1")
    grid = [(k, 0.25 * k) for k in range(5)]
    traj = {("u", k): FieldFunction(V, np.full(V.dim, float(k))) for k in range(5)}
    return V, grid, traj


@given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=12))
def test_trapezoid_weights_integrate_affine_exactly(steps):
    t = np.concatenate([[0.0], np.cumsum(steps)])
    w = trapezoid_weights(t)
    assert w.sum() == pytest.approx(t[-1])
    assert (w * t).sum() == pytest.approx(t[-1] ** 2 / 2)


def test_point_measures_select_levels(setup):
    V, grid, traj = setup
    u = Coefficient("u", V)
    assert (u * dx * dt[FINISH_TIME]).evaluate(traj, grid) == pytest.approx(4.0)
    assert (u * dx * dt[START_TIME]).evaluate(traj, grid) == pytest.approx(0.0)
    assert (u * dx * dt[0.5]).evaluate(traj, grid) == pytest.approx(2.0)


def test_time_integral_is_trapezoidal(setup):
    V, grid, traj = setup
    u = Coefficient("u", V)
    # u = 4 t exactly, integral over [0, 1] is 2
    assert (u * dx * dt).evaluate(traj, grid) == pytest.approx(2.0)
    assert (u ** 2 * dx * dt).evaluate(traj, grid) == pytest.approx(
        sum(w * k ** 2 for w, k in zip(trapezoid_weights([0, .25, .5, .75, 1]), range(5))))


def test_sums_and_scaling(setup):
    V, grid, traj = setup
    u = Coefficient("u", V)
    J = 2.0 * (u * dx * dt[FINISH_TIME]) - u * dx * dt[START_TIME] + u * dx * dt
    assert J.evaluate(traj, grid) == pytest.approx(8.0 + 2.0)
    assert J.active_levels(grid) == [0, 1, 2, 3, 4]


def test_point_outside_grid_is_rejected(setup):
    _, grid, _ = setup
    with pytest.raises(FunctionalError):
        nearest_level([t for _, t in grid], 1.5)


def test_forms_with_test_functions_are_rejected(setup):
    V, _, _ = setup
    with pytest.raises(FunctionalError):
        TestFunction(V) * dx * dt


def test_derivative_is_weighted(setup):
    V, grid, traj = setup
    u = Coefficient("u", V)
    J = u ** 2 * dx * dt
    d = J.derivative("u", 2, grid, V)
    from adjopt.fem import assemble
    g = assemble(d, {"u": traj[("u", 2)]})
    # 0.25 * 2 * u * int(v) with u = 2
    assert g.sum() == pytest.approx(0.25 * 2 * 2 * 1.0)
