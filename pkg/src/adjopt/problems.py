"""Tape builders for the shipped example problems.

Each builder runs the forward model once to record a tape and returns a
:class:`Problem` bundling the tape, the objective and the control.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fem import (DirichletCondition, FieldFunction, FunctionSpace, NewtonTolerances,
                  rectangle_mesh)
from .forms import (Coefficient, PointwiseData, TestFunction, TrialFunction, dx, grad,
                    inner, smooth_max0)
from .functional import FINISH_TIME, dt
from .tape import FIELD, Tape, VarId


@dataclass
class Problem:
    tape: Tape
    functional: object
    control: object
    state: FunctionSpace
    control_space: FunctionSpace
    state_name: str = "u"
    extras: dict = field(default_factory=dict)

    @property
    def final_state(self) -> FieldFunction:
        last = self.tape.records[-1].unknown
        return self.tape.ensure_trajectory()[last]


# -- data -----------------------------------------------------------------------------------

def bump(x, y):
    """exp(-1/(1-x^2) - 1/(1-y^2)) inside the open unit square, zero outside."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    inside = (np.abs(x) < 1) & (np.abs(y) < 1)
    xs = np.where(inside, x, 0.0)
    ys = np.where(inside, y, 0.0)
    return np.where(inside, np.exp(-1.0 / (1.0 - xs ** 2) - 1.0 / (1.0 - ys ** 2)), 0.0)


def sinsin(x, y, k=1.0):
    return np.sin(k * np.pi * x) * np.sin(k * np.pi * y)


def chessboard(x, y):
    """sign(sin(8 pi x) sin(8 pi y))."""
    return np.sign(sinsin(x, y, 8.0))


MMS_EXACT = {
    "smooth": dict(
        m=lambda x, y: sinsin(x, y),
        u=lambda x, y: sinsin(x, y) / (2 * np.pi ** 2),
        u_d=lambda x, y: sinsin(x, y) / (2 * np.pi ** 2),
        s=None,
    ),
    # optimal control sign(ss); the adjoint then has the opposite sign of
    # the chessboard, which requires u_d = u_opt + sign(ss)
    "bangbang": dict(
        m=chessboard,
        u=lambda x, y: sinsin(x, y),
        u_d=lambda x, y: sinsin(x, y) + chessboard(x, y),
        s=lambda x, y: 2 * np.pi ** 2 * sinsin(x, y) - chessboard(x, y),
    ),
}


# -- builders --------------------------------------------------------------------------------

def heat_control(n: int = 64, alpha: float = 0.0, m0: float = 0.0) -> Problem:
    """Stationary heat equation on [-1, 1]^2 with a P0 heat source."""
    mesh = rectangle_mesh(n, -1.0, 1.0, -1.0, 1.0)
    V, W = FunctionSpace(mesh, "P1"), FunctionSpace(mesh, "P0")
    tape = Tape()
    tape.add_data("u_d", V.interpolate(bump))
    ctrl = tape.add_control(FIELD, "m", FieldFunction(W, np.full(W.dim, float(m0))))
    u, v = TrialFunction(V), TestFunction(V)
    m = Coefficient("m", W)
    tape.solve_linear(inner(grad(u), grad(v)) * dx, m * v * dx, VarId("u", 0),
                      conditions=[DirichletCondition.on_boundary(V)])
    uc, ud = Coefficient("u", V), Coefficient("u_d", V)
    J = 0.5 * (uc - ud) ** 2 * dx * dt[FINISH_TIME]
    if alpha:
        J = J + 0.5 * alpha * m ** 2 * dx * dt[FINISH_TIME]
    return Problem(tape, J, ctrl, V, W)


def mms(n: int, kind: str = "smooth", m0: float = 0.0, diagonal: str = "right") -> Problem:
    """Manufactured optimal control problem on [0, 1]^2 with -1 <= m <= 1."""
    exact = MMS_EXACT[kind]
    mesh = rectangle_mesh(n, 0.0, 1.0, 0.0, 1.0, diagonal=diagonal)
    V, W = FunctionSpace(mesh, "P1"), FunctionSpace(mesh, "P0")
    tape = Tape()
    ctrl = tape.add_control(FIELD, "m", FieldFunction(W, np.full(W.dim, float(m0))))
    u, v = TrialFunction(V), TestFunction(V)
    m = Coefficient("m", W)
    rhs = m * v
    if exact["s"] is not None:
        rhs = rhs + PointwiseData("s", exact["s"]) * v
    tape.solve_linear(inner(grad(u), grad(v)) * dx, rhs * dx, VarId("u", 0),
                      conditions=[DirichletCondition.on_boundary(V)])
    uc = Coefficient("u", V)
    J = (uc - PointwiseData("u_d", exact["u_d"])) ** 2 * dx * dt[FINISH_TIME]
    return Problem(tape, J, ctrl, V, W, extras={"exact": exact, "kind": kind})


def transient_control(n: int = 16, dt_step: float = 0.1, steps: int = 11, alpha: float = 0.0,
                      m0: float = 0.0, tolerances: NewtonTolerances | None = None) -> Problem:
    """Backward Euler for u_t - lap u + u^3 = m from u = 0, one Newton solve per step."""
    mesh = rectangle_mesh(n, -1.0, 1.0, -1.0, 1.0)
    V, W = FunctionSpace(mesh, "P1"), FunctionSpace(mesh, "P0")
    tape = Tape()
    tape.add_data("u_d", V.interpolate(bump))
    tape.set_initial(VarId("u", 0), FieldFunction(V), time=0.0)
    ctrl = tape.add_control(FIELD, "m", FieldFunction(W, np.full(W.dim, float(m0))))
    u, u_prev, v = Coefficient("u", V), Coefficient("u_prev", V), TestFunction(V)
    m = Coefficient("m", W)
    F = ((u - u_prev) * (1.0 / dt_step) * v + inner(grad(u), grad(v)) + u ** 3 * v - m * v) * dx
    bc = DirichletCondition.on_boundary(V)
    for k in range(1, steps + 1):
        tape.solve_nonlinear(F, VarId("u", k), V, bindings={"u_prev": VarId("u", k - 1)},
                             conditions=[bc], initial_guess=VarId("u", k - 1),
                             tolerances=tolerances, time=k * dt_step)
    ud = Coefficient("u_d", V)
    J = 0.5 * (u - ud) ** 2 * dx * dt[FINISH_TIME]
    if alpha:
        J = J + 0.5 * alpha * m ** 2 * dx * dt[FINISH_TIME]
    return Problem(tape, J, ctrl, V, W)


def _values(f):
    return np.array(f.vector if hasattr(f, "vector") else f, dtype=float)


def mpec_target(x, y):
    """Solution of -lap u = 50 sin(2 pi x) sin(pi y) with zero boundary values."""
    return 10.0 / np.pi ** 2 * np.sin(2 * np.pi * x) * np.sin(np.pi * y)


def mpec(n: int = 32, penalty: float = 1e-3, eps: float = 1e-4, nu: float = 1e-2,
         f: float = -10.0, m0=None, u_guess=None,
         tolerances: NewtonTolerances | None = None) -> Problem:
    """Penalised, smoothed obstacle constraint with P1 state and P1 control."""
    mesh = rectangle_mesh(n, 0.0, 1.0, 0.0, 1.0)
    V = FunctionSpace(mesh, "P1")
    tape = Tape()
    tape.add_data("u_d", V.interpolate(mpec_target))
    if m0 is None:
        m0 = FieldFunction(V)
    ctrl = tape.add_control(FIELD, "m", FieldFunction(V, _values(m0)))
    if u_guess is not None:
        u_guess = FieldFunction(V, _values(u_guess))
    u, v, m = Coefficient("u", V), TestFunction(V), Coefficient("m", V)
    F = (inner(grad(u), grad(v)) - (1.0 / penalty) * smooth_max0(-u, eps) * v
         - (f + m) * v) * dx
    tape.solve_nonlinear(F, VarId("u", 0), V, conditions=[DirichletCondition.on_boundary(V)],
                         initial_guess=u_guess, tolerances=tolerances)
    ud = Coefficient("u_d", V)
    J = (0.5 * (u - ud) ** 2 + 0.5 * nu * m ** 2) * dx * dt[FINISH_TIME]
    return Problem(tape, J, ctrl, V, V, extras={"penalty": penalty, "eps": eps})
