import numpy as np
import pytest

from adjopt.adjoint import (adjoint_cost_ratio, compute_adjoint, compute_gradient, riesz_l2,
                            taylor_test)
from adjopt.fem import DirichletCondition, FieldFunction, FunctionSpace, mass_matrix, rectangle_mesh
from adjopt.forms import (Coefficient, PointwiseData, TestFunction, TrialFunction, dx, grad,
                          inner)
from adjopt.functional import FINISH_TIME, dt
from adjopt.optimize import ReducedFunctional
from adjopt.problems import heat_control, mpec, transient_control
from adjopt.tape import FIELD, INITIAL, SCALAR, Tape, TapeError, VarId

from oracles import finite_difference_gradient, monolithic_gradient


def _random_control(p, seed, scale=0.5):
    rng = np.random.default_rng(seed)
    p.tape.substitute_controls({p.control.id: rng.uniform(0, scale, p.control.dim)})


def _coupled():
    """Two chained linear solves driven by a field and a scalar control."""
    mesh = rectangle_mesh(4)
    V, W = FunctionSpace(mesh, "P1"), FunctionSpace(mesh, "P0")
    tape = Tape()
    m = tape.add_control(FIELD, "m", FieldFunction(W, np.linspace(0.1, 1.0, W.dim)))
    k = tape.add_control(SCALAR, "k", 1.5)
    u, v = TrialFunction(V), TestFunction(V)
    bc = [DirichletCondition.on_boundary(V)]
    kc, mc = Coefficient("k", k.space), Coefficient("m", W)
    tape.solve_linear((1 + kc * kc) * inner(grad(u), grad(v)) * dx, mc * v * dx, ("u", 0),
                      conditions=bc)
    uc = Coefficient("u", V)
    tape.solve_linear(inner(grad(u), grad(v)) * dx + uc * u * v * dx, (uc + kc) * v * dx,
                      ("w", 0), conditions=bc, bindings={"u": VarId("u", 0)})
    wc = Coefficient("w", V)
    target = PointwiseData("d", lambda x, y: x * y)
    J = ((wc - target) ** 2 + 0.1 * uc ** 2 * kc) * dx * dt[FINISH_TIME]
    return tape, J, [m, k]


@pytest.mark.parametrize("build", [
    lambda: heat_control(4),
    lambda: transient_control(4, steps=3),
    lambda: mpec(4),
])
def test_sweep_matches_monolithic_oracle(build):
    p = build()
    _random_control(p, 0)
    g = compute_gradient(p.tape, p.functional, [p.control])[0]
    ref = monolithic_gradient(p.tape, p.functional, p.control.id)
    assert np.allclose(g, ref, rtol=1e-10, atol=1e-12 * np.abs(ref).max())


def test_coupled_tape_with_scalar_control_matches_oracle():
    tape, J, controls = _coupled()
    grads = compute_gradient(tape, J, controls)
    for c, g in zip(controls, grads):
        ref = monolithic_gradient(tape, J, c.id)
        assert g.shape == (c.dim,)
        assert np.allclose(g, ref, rtol=1e-10, atol=1e-14)


def test_coupled_gradient_against_finite_differences():
    tape, J, controls = _coupled()
    rf = ReducedFunctional(tape, J, controls)
    x = rf.initial_vector()
    assert np.allclose(rf.gradient(x), finite_difference_gradient(rf, x), rtol=1e-6, atol=1e-9)


def test_initial_condition_control():
    p = transient_control(4, steps=3)
    V = p.state
    p.tape.initial[VarId("u", 0)] = (V.interpolate(lambda x, y: 0.3 * (1 - x * x) * (1 - y * y)),
                                     0.0)
    ic = p.tape.add_control(INITIAL, ("u", 0))
    p.tape.substitute_controls({})
    g = compute_gradient(p.tape, p.functional, [ic])[0]
    ref = monolithic_gradient(p.tape, p.functional, ic.id)
    assert np.allclose(g, ref, rtol=1e-10, atol=1e-14)
    rf = ReducedFunctional(p.tape, p.functional, [ic])
    x = rf.initial_vector()
    fd = finite_difference_gradient(rf, x)
    assert np.allclose(rf.gradient(x), fd, rtol=1e-5, atol=1e-10)


@pytest.mark.parametrize("build", [lambda: heat_control(6), lambda: transient_control(4, steps=3),
                                   lambda: mpec(6)])
def test_taylor_remainders(build):
    p = build()
    rf = ReducedFunctional(p.tape, p.functional, p.control)
    x = np.random.default_rng(1).uniform(0, 0.5, rf.size)
    d = np.random.default_rng(2).standard_normal(rf.size)
    res = taylor_test(rf, x, d, h0=1e-2 if p.tape.records[0].kind == "linear" else 1e-3)
    assert min(res.first_orders) > 0.9
    assert min(res.second_orders) > 1.9


def test_wrong_gradient_fails_taylor():
    p = heat_control(4)
    rf = ReducedFunctional(p.tape, p.functional, p.control)

    class Broken:
        def __call__(self, x):
            return rf(x)

        def gradient(self, x):
            return 1.01 * rf.gradient(x)

    x = np.full(rf.size, 0.1)
    res = taylor_test(Broken(), x, np.ones(rf.size))
    assert res.second_orders[-1] < 1.5


def test_riesz_map_inverts_mass_matrix():
    p = heat_control(4)
    _random_control(p, 3)
    g_l2 = compute_gradient(p.tape, p.functional, [p.control])[0]
    g_L2 = compute_gradient(p.tape, p.functional, [p.control], riesz="L2")[0]
    assert np.allclose(mass_matrix(p.control_space) @ g_L2, g_l2)
    assert np.allclose(riesz_l2(p.control, g_l2), g_L2)
    with pytest.raises(ValueError):
        compute_gradient(p.tape, p.functional, [p.control], riesz="H1")


def test_adjoint_vanishes_on_prescribed_dofs():
    p = transient_control(4, steps=2, m0=0.4)
    lam = compute_adjoint(p.tape, p.functional, [p.control])
    bnd = p.state.mesh.boundary
    for k in (1, 2):
        assert not lam[("u", k)][bnd].any()


def test_unknown_control_is_rejected():
    p = heat_control(3)
    with pytest.raises(TapeError):
        compute_gradient(p.tape, p.functional, ["q"])


def test_cost_ratio_counts_linear_solves():
    p = heat_control(4)
    c = adjoint_cost_ratio(p.tape, p.functional, [p.control])
    assert (c.forward_solves, c.adjoint_solves) == (1, 1)
    assert c.ratio == 2.0

    p = transient_control(4, steps=3, m0=1.0)
    c = adjoint_cost_ratio(p.tape, p.functional, [p.control])
    iters = sum(p.tape.newton_iterations.values())
    assert c.forward_solves == iters and c.adjoint_solves == 3
    assert c.ratio == pytest.approx((iters + 3) / iters)
