"""Discrete adjoint of a recorded tape, functional gradients and the Taylor test.

For every record ``F_k(u_k, deps) = 0`` taken in reverse order the sweep
solves ``A_k^T lam_k = -dJ/du_k - sum_j (dF_j/du_k)^T lam_j`` with ``A_k``
the Dirichlet-eliminated Jacobian, then pushes ``(dF_k/dd)^T lam_k`` to each
dependency ``d``: to pending right-hand sides for tape variables and to the
gradient for controls.  Rows of prescribed dofs are zero in every adjoint
right-hand side, so ``lam_k`` vanishes there.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .fem.assembly import assemble, mass_matrix
from .fem.solvers import LinearSolver, apply_dirichlet, zero_rows
from .forms import coefficients, derive_gateaux
from .tape import INITIAL, ControlSpec, Tape, TapeError, VarId

log = logging.getLogger(__name__)


@dataclass
class AdjointState:
    """Adjoint vectors keyed by tape variable."""

    lambdas: dict = field(default_factory=dict)

    def __getitem__(self, var):
        return self.lambdas[VarId(*var)]


@dataclass
class GradientReport:
    forward_linear_solves: int
    adjoint_linear_solves: int
    seconds: float

    def __str__(self):
        return (f"forward linear solves {self.forward_linear_solves}, adjoint linear solves "
                f"{self.adjoint_linear_solves}, {self.seconds:.3f} s")


class ReverseSweep:
    """State of one reverse pass; :meth:`step` handles one record.

    The checkpointed driver calls the same :meth:`step` in the same order,
    which is what makes both gradients bitwise identical.
    """

    def __init__(self, tape: Tape, functional, controls):
        self.tape = tape
        self.J = functional
        self.controls = list(controls)
        self.grid = tape.timegrid()
        self.pending: dict = {}
        self.lambdas: dict = {}
        self.grads = {c.id: np.zeros(c.dim) for c in self.controls}
        self.wanted = {c.id for c in self.controls}
        self.jnames = functional.names() if functional is not None else set()
        self.jlevels = set(functional.active_levels(self.grid)) if functional is not None else set()
        first = {}
        for rec in tape.records:
            first.setdefault(rec.unknown.level, rec.id)
        self.first_at_level = first
        self.done_levels: set = set()
        self._dcache = tape._derivative_cache

    # -- pieces --------------------------------------------------------------------------
    def _derivative(self, rec, name, space):
        key = (rec.id, name)
        hit = self._dcache.get(key)
        if hit is None:
            hit = self._dcache[key] = derive_gateaux(rec.residual, name, space)
        return hit

    def state_partial(self, var: VarId, space, states) -> np.ndarray:
        """dJ/d(var) as a coefficient vector (zero when J ignores it)."""
        if var.name not in self.jnames or var.level not in self.jlevels:
            return np.zeros(space.dim)
        form = self.J.derivative(var.name, var.level, self.grid, space)
        resolver = self.tape.functional_resolver(states)
        names = set(coefficients(form))
        return np.asarray(assemble(form, resolver(var.level, names), mesh=self.tape.mesh))

    def control_partials(self, level: int, states) -> None:
        """Add the explicit dJ/dm of one time level to the gradients."""
        if level in self.done_levels:
            return
        self.done_levels.add(level)
        if level not in self.jlevels:
            return
        resolver = self.tape.functional_resolver(states)
        for c in self.controls:
            if c.kind == INITIAL or c.id not in self.jnames:
                continue
            form = self.J.derivative(c.id, level, self.grid, c.space)
            binds = resolver(level, set(coefficients(form)))
            self.grads[c.id] += assemble(form, binds, mesh=self.tape.mesh)

    def _operator(self, rec, binds) -> LinearSolver:
        if rec.kind == "linear":
            return self.tape.linear_operator(rec, binds)[1]
        jac = self._derivative(rec, rec.unknown_name, rec.space)
        A = assemble(jac, binds)
        A, _ = apply_dirichlet(A, None, [bc.homogenized() for bc in rec.conditions])
        return LinearSolver(A)

    def step(self, index: int, states) -> np.ndarray:
        """Adjoint of record ``index``; ``states`` must hold its unknown and inputs."""
        tape = self.tape
        rec = tape.records[index]
        if rec.unknown not in states:
            raise TapeError(f"adjoint of record {rec.id}: value of {rec.unknown} unavailable")
        binds = tape.bindings_for(rec, states)
        binds[rec.unknown_name] = states[rec.unknown]
        rhs = -self.state_partial(rec.unknown, rec.space, states)
        back = self.pending.pop(rec.unknown, None)
        if back is not None:
            rhs = rhs - back
        rhs = zero_rows(rhs, rec.conditions)
        lam = self._operator(rec, binds).solve(rhs, transpose=True)
        tape.adjoint_linear_solves += 1
        self.lambdas[rec.unknown] = lam
        for name, src in rec.sources.items():
            if isinstance(src, VarId):
                space = states[src].space
            elif src[0] == "control" and src[1] in self.wanted:
                space = tape.controls[src[1]].space
            else:
                continue
            B = assemble(self._derivative(rec, name, space), binds)
            contrib = B.T @ lam
            if isinstance(src, VarId):
                prev = self.pending.get(src)
                self.pending[src] = contrib if prev is None else prev + contrib
            else:
                self.grads[src[1]] += contrib
        if self.first_at_level.get(rec.unknown.level) == rec.id:
            self.control_partials(rec.unknown.level, states)
        return lam

    def finish(self, states) -> None:
        """Initial variables and time levels that no record solves for."""
        tape = self.tape
        for var in sorted(tape.initial):
            space = tape.initial[var][0].space
            lam = self.state_partial(var, space, states)
            back = self.pending.pop(var, None)
            if back is not None:
                lam = lam + back
            self.lambdas[var] = lam
        for level, _ in self.grid:
            self.control_partials(level, states)
        for c in self.controls:
            if c.kind == INITIAL:
                self.grads[c.id] += self.lambdas[c.target]
        if self.pending:
            raise TapeError(f"adjoint contributions for unknown variables {sorted(map(str, self.pending))}")


def _check_controls(tape: Tape, controls):
    out = []
    for c in controls:
        cid = c.id if isinstance(c, ControlSpec) else str(c)
        if cid not in tape.controls:
            raise TapeError(f"control {cid!r} is not on the tape")
        out.append(tape.controls[cid])
    return out


def compute_adjoint(tape: Tape, functional, controls=()) -> AdjointState:
    """Run the reverse sweep and return every adjoint vector."""
    sweep = _run(tape, functional, _check_controls(tape, controls))
    return AdjointState(sweep.lambdas)


def _run(tape, functional, controls) -> ReverseSweep:
    states = tape.ensure_trajectory()
    sweep = ReverseSweep(tape, functional, controls)
    for rec in reversed(tape.records):
        sweep.step(rec.id, states)
    sweep.finish(states)
    return sweep


def riesz_l2(spec: ControlSpec, grad: np.ndarray) -> np.ndarray:
    """L2 representative of an l2 gradient (mass-matrix solve)."""
    M = mass_matrix(spec.space).tocsc()
    return spla.spsolve(M, grad) if M.shape[0] > 1 else grad / M.toarray()[0, 0]


def compute_gradient(tape: Tape, functional, controls, riesz: str = "l2",
                     verbose: bool = False):
    """dJ/dm for each control, in the l2 (coefficient vector) inner product.

    ``riesz="L2"`` maps each gradient to its L2 representative instead.
    Scalar controls give one-element arrays.
    """
    controls = _check_controls(tape, controls)
    f0, a0, t0 = tape.forward_linear_solves, tape.adjoint_linear_solves, time.perf_counter()
    sweep = _run(tape, functional, controls)
    grads = [sweep.grads[c.id] for c in controls]
    if riesz == "L2":
        grads = [riesz_l2(c, g) for c, g in zip(controls, grads)]
    elif riesz != "l2":
        raise ValueError(f"unknown inner product {riesz!r}")
    report = GradientReport(tape.forward_linear_solves - f0,
                            tape.adjoint_linear_solves - a0, time.perf_counter() - t0)
    if verbose:
        log.info("gradient: %s", report)
    tape.last_gradient_report = report
    return grads


@dataclass
class CostRatio:
    """Linear-solve counts of one forward replay and one adjoint sweep."""

    forward_solves: int
    adjoint_solves: int
    forward_seconds: float
    adjoint_seconds: float

    @property
    def ratio(self) -> float:
        return (self.forward_solves + self.adjoint_solves) / self.forward_solves

    @property
    def wall_ratio(self) -> float:
        return (self.forward_seconds + self.adjoint_seconds) / self.forward_seconds


def adjoint_cost_ratio(tape: Tape, functional, controls) -> CostRatio:
    """Replay ``tape`` once, then run one adjoint sweep, counting linear solves.

    A Newton record counts one linear solve per iteration; its adjoint is a
    single transposed solve.
    """
    f0, t0 = tape.forward_linear_solves, time.perf_counter()
    tape.replay(functional)
    fwd, t1 = tape.forward_linear_solves - f0, time.perf_counter()
    compute_gradient(tape, functional, controls)
    rep = tape.last_gradient_report
    return CostRatio(fwd, rep.adjoint_linear_solves, t1 - t0, rep.seconds)


@dataclass
class TaylorResult:
    hs: list
    first: list          # |J(m + h d) - J(m)|
    second: list         # |J(m + h d) - J(m) - h dJ.d|
    first_orders: list
    second_orders: list

    def __str__(self):
        rows = ["h first second order1 order2"]
        for i, h in enumerate(self.hs):
            o1 = self.first_orders[i - 1] if i else float("nan")
            o2 = self.second_orders[i - 1] if i else float("nan")
            rows.append(f"{h:.3e} {self.first[i]:.3e} {self.second[i]:.3e} {o1:.3f} {o2:.3f}")
        return "\n".join(rows)


def _orders(values, hs):
    out = []
    for i in range(1, len(values)):
        a, b = values[i - 1], values[i]
        if a <= 0 or b <= 0:
            out.append(float("inf") if b == 0 else float("nan"))
        else:
            out.append(float(np.log(a / b) / np.log(hs[i - 1] / hs[i])))
    return out


def taylor_test(rf, m, direction, hs=None, h0: float = 1e-2, steps: int = 4) -> TaylorResult:
    """Remainder convergence orders of ``rf`` at ``m`` along ``direction``.

    ``rf`` is any callable with a ``gradient`` method on flat vectors.  The
    default step sequence is ``h0 * 2**-k`` for ``k < steps``.
    """
    m = np.asarray(m, dtype=float)
    d = np.asarray(direction, dtype=float)
    if d.shape != m.shape:
        raise ValueError("direction and control have different shapes")
    hs = [h0 * 2.0 ** -k for k in range(steps)] if hs is None else list(hs)
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise ValueError("step sizes must be strictly decreasing")
    j0 = rf(m)
    slope = float(np.dot(rf.gradient(m), d))
    first, second = [], []
    for h in hs:
        jh = rf(m + h * d)
        first.append(abs(jh - j0))
        second.append(abs(jh - j0 - h * slope))
    rf(m)
    return TaylorResult(hs, first, second, _orders(first, hs), _orders(second, hs))
