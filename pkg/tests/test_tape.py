import numpy as np
import pytest

from adjopt.fem import DirichletCondition, FieldFunction, FunctionSpace, rectangle_mesh
from adjopt.forms import Coefficient, TestFunction, TrialFunction, dx, grad, inner
from adjopt.functional import FINISH_TIME, dt
from adjopt.problems import heat_control, transient_control
from adjopt.tape import FIELD, INITIAL, SCALAR, ReplayError, Tape, TapeError, VarId


def _poisson_tape(n=4):
    mesh = rectangle_mesh(n)
    V, W = FunctionSpace(mesh, "P1"), FunctionSpace(mesh, "P0")
    tape = Tape()
    ctrl = tape.add_control(FIELD, "m", FieldFunction(W, np.ones(W.dim)))
    u, v = TrialFunction(V), TestFunction(V)
    tape.solve_linear(inner(grad(u), grad(v)) * dx, Coefficient("m", W) * v * dx, ("u", 0),
                      conditions=[DirichletCondition.on_boundary(V)])
    return tape, ctrl, V, W


def test_replay_reproduces_recorded_trajectory():
    p = transient_control(4, steps=3, m0=0.5)
    recorded = {k: v.vector.copy() for k, v in p.tape.trajectory.items()}
    states, _ = p.tape.replay()
    for k, vec in recorded.items():
        assert np.array_equal(states[k].vector, vec)


def test_substitution_changes_replay_and_is_linear_for_linear_tapes():
    tape, ctrl, V, W = _poisson_tape()
    u1 = tape.trajectory[VarId("u", 0)].vector.copy()
    tape.substitute_controls({ctrl: FieldFunction(W, 3 * np.ones(W.dim))})
    assert tape.trajectory == {}
    states, _ = tape.replay()
    assert np.allclose(states[VarId("u", 0)].vector, 3 * u1)


def test_substitution_checks_space_and_size():
    tape, ctrl, V, W = _poisson_tape()
    with pytest.raises(TapeError):
        tape.substitute_controls({ctrl: FieldFunction(V)})
    with pytest.raises(TapeError):
        tape.substitute_controls({ctrl: np.zeros(3)})
    with pytest.raises(TapeError):
        tape.substitute_controls({"nope": 1.0})


def test_unresolved_and_unused_bindings_are_errors():
    mesh = rectangle_mesh(2)
    V = FunctionSpace(mesh, "P1")
    tape = Tape()
    u, v = TrialFunction(V), TestFunction(V)
    a = inner(grad(u), grad(v)) * dx
    with pytest.raises(TapeError, match="unresolved"):
        tape.solve_linear(a, Coefficient("f", V) * v * dx, ("u", 0))
    with pytest.raises(TapeError, match="do not appear"):
        tape.solve_linear(a, v * dx, ("u", 0), bindings={"g": 1.0})


def test_literal_bindings_are_frozen():
    mesh = rectangle_mesh(2)
    V = FunctionSpace(mesh, "P1")
    tape = Tape()
    f = FieldFunction(V, np.ones(V.dim))
    u, v = TrialFunction(V), TestFunction(V)
    tape.solve_linear(u * v * dx, Coefficient("f", V) * v * dx, ("u", 0), bindings={"f": f})
    f.vector[:] = 5.0
    states, _ = tape.replay()
    assert np.allclose(states[VarId("u", 0)].vector, 1.0)


def test_duplicate_unknown_rejected():
    tape, ctrl, V, W = _poisson_tape()
    u, v = TrialFunction(V), TestFunction(V)
    with pytest.raises(TapeError, match="duplicate"):
        tape.solve_linear(u * v * dx, v * dx, ("u", 0))


def test_control_kinds():
    mesh = rectangle_mesh(2)
    V = FunctionSpace(mesh, "P1")
    tape = Tape()
    tape.set_initial(("u", 0), FieldFunction(V, np.ones(V.dim)))
    ic = tape.add_control(INITIAL, ("u", 0))
    assert ic.id == "u@0" and np.allclose(tape.control_value(ic).vector, 1)
    k = tape.add_control(SCALAR, "k", 2.0)
    assert k.dim == 1 and tape.control_value(k).vector[0] == 2.0
    with pytest.raises(TapeError):
        tape.add_control(INITIAL, ("w", 0))
    with pytest.raises(TapeError):
        tape.add_control(SCALAR, "k", 1.0)


def test_chain_detection():
    assert transient_control(3, steps=2).tape.is_chain()
    assert not heat_control(3).tape.is_chain()


def test_dump_lists_records_and_edges():
    text = transient_control(2, steps=2).tape.dump()
    assert "initial u@0 P1 t=0.0" in text
    assert "record 1 nonlinear u@2 [u] t=0.2 <- m=control:m, u_prev=u@1" in text
    assert "guess u@1" in text


def test_replay_failure_names_the_record():
    from adjopt.fem import NewtonTolerances
    p = transient_control(3, steps=3, tolerances=NewtonTolerances(max_iter=1, atol=1e-30,
                                                                  rtol=1e-30))
    p.tape.records[0].tolerances = NewtonTolerances(max_iter=1, atol=1e-30, rtol=1e-30)
    with pytest.raises(ReplayError, match="record 0 \\(u@1\\)"):
        p.tape.substitute_controls({"m": np.full(p.control.dim, 5.0)})
        p.tape.replay()


def test_evaluate_functional_on_tape():
    tape, ctrl, V, W = _poisson_tape()
    u = Coefficient("u", V)
    J = u * dx * dt[FINISH_TIME]
    _, val = tape.replay(J)
    assert val == pytest.approx(tape.evaluate(J))
    assert val > 0


def test_linear_operator_is_cached_per_lhs():
    p = transient_control(3, steps=1)
    heat = heat_control(3)
    tape = heat.tape
    tape.replay()
    solves_before = len(tape._lu_cache)
    tape.substitute_controls({"m": np.full(heat.control.dim, 0.2)})
    tape.replay()
    assert len(tape._lu_cache) == solves_before
    assert p.tape.forward_linear_solves >= 1
