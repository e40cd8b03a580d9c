import numpy as np
import pytest

from adjopt.drivers import feasibility, l2_error, observed_orders
from adjopt.fem import FieldFunction
from adjopt.optimize import Bounds, ReducedFunctional, TerminationSpec, minimize
from adjopt.problems import MMS_EXACT, bump, chessboard, heat_control, mms, mpec, transient_control

from oracles import quadrature_norm


def test_bump_vanishes_on_boundary_and_peaks_at_centre():
    assert bump(0.0, 0.0) == pytest.approx(np.exp(-2))
    assert bump(1.0, 0.3) == 0.0 and bump(-0.2, -1.0) == 0.0


def test_heat_initial_value_is_half_target_norm():
    # m = 0 forces u = 0, so J = 1/2 |u_d|^2; compare against a fine midpoint rule
    ref = 0.5 * quadrature_norm(lambda x, y: bump(x, y) ** 2, 1024)
    assert ref == pytest.approx(0.5 * quadrature_norm(lambda x, y: bump(x, y) ** 2, 512),
                                rel=1e-5)
    p = heat_control(64)
    assert p.tape.evaluate(p.functional) == pytest.approx(ref, rel=5e-3)


def test_transient_with_zero_source_stays_at_rest():
    p = transient_control(4, steps=3)
    for var, f in p.tape.ensure_trajectory().items():
        assert not f.vector.any(), var


def test_smooth_mms_state_is_exact_solution_of_the_exact_control():
    # with m = m_opt on a fine mesh the state error is the plain FEM error
    p = mms(32, "smooth")
    m = p.control_space.interpolate(MMS_EXACT["smooth"]["m"])
    p.tape.substitute_controls({"m": m})
    err = l2_error(p.final_state, MMS_EXACT["smooth"]["u"])
    assert err < 2e-4


def test_bangbang_recovered_exactly_on_aligned_symmetric_mesh():
    p = mms(16, "bangbang", diagonal="alternating")
    rf = ReducedFunctional(p.tape, p.functional, p.control)
    x, _ = minimize(rf, Bounds.uniform(rf.size, -1, 1),
                    termination=TerminationSpec(gtol=1e-12, ftol=1e-15))
    c = p.control_space.mesh.centroids()
    assert np.array_equal(x, chessboard(c[:, 0], c[:, 1]))


def test_observed_orders():
    hs = [0.1, 0.05, 0.025]
    orders = observed_orders(hs, [1.0, 0.25, 0.0625])
    assert np.isnan(orders[0]) and orders[1:] == pytest.approx([2.0, 2.0])


def test_mpec_with_nonnegative_source_is_feasible():
    # f >= 0 and m = 0 give u >= 0 by the maximum principle
    p = mpec(8, f=10.0)
    u = p.final_state
    assert u.vector.min() >= -1e-10
    assert feasibility(u, 1e-4) < 1e-3


def test_mpec_warm_start_reuses_previous_stage():
    cold = mpec(4)
    warm = mpec(4, m0=cold.tape.control_value(cold.control),
                u_guess=cold.final_state)
    assert np.allclose(warm.final_state.vector, cold.final_state.vector, atol=1e-12)
    assert warm.tape.newton_iterations[0] < cold.tape.newton_iterations[0]
    assert isinstance(warm.tape.control_value(warm.control), FieldFunction)
