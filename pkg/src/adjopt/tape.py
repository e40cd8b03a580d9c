"""Recording of equation solves and replay under new control values.

A forward run is written as calls to :meth:`Tape.solve_linear` and
:meth:`Tape.solve_nonlinear`.  Each call solves immediately and appends a
:class:`SolveRecord` holding the symbolic forms, how every coefficient name
in them is bound, boundary conditions and solver settings.  Replaying the
tape re-executes those records in order with whatever control values are
currently registered.

Coefficient names in a record resolve, in order, through the record's
explicit ``bindings`` (a :class:`VarId`, a control id, a frozen data name,
or a literal value), then a control with that id, then frozen data with that
name.  Anything else is an unresolved dependency.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from numbers import Real
from typing import NamedTuple

import numpy as np

from .fem.assembly import assemble
from .fem.solvers import (LinearSolver, NewtonTolerances, SolverError, apply_dirichlet,
                          solve_newton)
from .fem.space import REAL, FieldFunction, FunctionSpace
from .forms import (BILINEAR, LINEAR, Coefficient, Form, action, classify_arity,
                    coefficients, to_sexpr)

log = logging.getLogger(__name__)

INITIAL = "initial"
FIELD = "field"
SCALAR = "scalar"


class TapeError(ValueError):
    pass


class ReplayError(SolverError):
    """A solve failed while replaying; the message names the record."""


class VarId(NamedTuple):
    """A tape variable: a name at one time level."""

    name: str
    level: int

    def __str__(self):
        return f"{self.name}@{self.level}"


@dataclass(frozen=True)
class ControlSpec:
    """An optimisation parameter registered on a tape.

    ``kind`` is ``"initial"`` (``target`` is the VarId of an initial value),
    ``"field"`` (``target`` is a coefficient name) or ``"scalar"`` (a
    coefficient name bound to a one-dof constant space).
    """

    kind: str
    target: object
    space: FunctionSpace

    @property
    def id(self) -> str:
        return str(self.target)

    @property
    def dim(self) -> int:
        return self.space.dim


@dataclass
class SolveRecord:
    id: int
    kind: str                         # "linear" or "nonlinear"
    unknown: VarId
    unknown_name: str
    space: FunctionSpace
    residual: Form
    lhs: Form | None = None
    rhs: Form | None = None
    sources: dict = field(default_factory=dict)   # coefficient name -> VarId | ("control", id) | ("data", name)
    conditions: tuple = ()
    tolerances: NewtonTolerances | None = None
    initial_guess: object = None      # None, VarId or frozen FieldFunction
    time: float = 0.0

    @property
    def dependencies(self) -> list:
        """Variables and controls read by the record's forms."""
        out = []
        for src in self.sources.values():
            if isinstance(src, VarId):
                out.append(src)
            elif src[0] == "control":
                out.append(src[1])
        return out

    def forms(self):
        return [f for f in (self.lhs, self.rhs, self.residual) if f is not None]


class Tape:
    """Append-only log of solves plus control and data registries."""

    def __init__(self):
        self.records: list[SolveRecord] = []
        self.controls: dict[str, ControlSpec] = {}
        self.control_values: dict[str, FieldFunction] = {}
        self.data: dict[str, object] = {}
        self.initial: dict[VarId, tuple] = {}          # VarId -> (value, time)
        self.trajectory: dict[VarId, FieldFunction] = {}
        self.newton_iterations: dict[int, int] = {}
        self.forward_linear_solves = 0
        self.adjoint_linear_solves = 0
        self._lu_cache: dict[int, tuple] = {}
        self._derivative_cache: dict = {}
        self._unknowns: set = set()
        self.mesh = None

    def __len__(self):
        return len(self.records)

    # -- registration ----------------------------------------------------------------
    def _note_mesh(self, space):
        if self.mesh is None and space is not None:
            self.mesh = space.mesh

    def set_initial(self, var: VarId, value: FieldFunction, time: float = 0.0) -> VarId:
        """Register the value of a variable that is not computed by a solve."""
        var = VarId(*var)
        if var in self._unknowns or var in self.initial:
            raise TapeError(f"variable {var} already defined on the tape")
        self.initial[var] = (value.copy(), float(time))
        self.trajectory[var] = value.copy()
        self._note_mesh(value.space)
        return var

    def add_data(self, name: str, value) -> None:
        """Freeze a coefficient value (snapshot) under ``name``."""
        self.data[name] = value.copy() if isinstance(value, FieldFunction) else float(value)
        if isinstance(value, FieldFunction):
            self._note_mesh(value.space)

    def add_control(self, kind: str, target, value=None, space=None) -> ControlSpec:
        """Register a control and its current value.

        Initial-condition controls take their value and space from the
        registered initial variable.  Scalar controls live on a one-dof
        constant space, which is created on the tape's mesh when not given.
        """
        if kind == INITIAL:
            target = VarId(*target)
            if target not in self.initial:
                raise TapeError(f"initial-condition control {target} is not an initial variable")
            value = self.initial[target][0]
            space = value.space
        elif kind == FIELD:
            if not isinstance(value, FieldFunction):
                raise TapeError("a field control needs a FieldFunction value")
            space = value.space
        elif kind == SCALAR:
            if space is None:
                if self.mesh is None:
                    raise TapeError("scalar control needs a space or a tape with a mesh")
                space = FunctionSpace(self.mesh, REAL)
            if space.family != REAL:
                raise TapeError("scalar controls live on the constant space")
            value = value if isinstance(value, FieldFunction) else FieldFunction(space, [float(value)])
        else:
            raise TapeError(f"unknown control kind {kind!r}")
        spec = ControlSpec(kind, target, space)
        if spec.id in self.controls:
            raise TapeError(f"control {spec.id} already registered")
        self.controls[spec.id] = spec
        self.control_values[spec.id] = value.copy()
        self._note_mesh(space)
        return spec

    def control_value(self, spec) -> FieldFunction:
        cid = spec.id if isinstance(spec, ControlSpec) else str(spec)
        return self.control_values[cid]

    # -- recording ----------------------------------------------------------------------
    def solve_linear(self, lhs: Form, rhs: Form, unknown, unknown_name: str | None = None,
                     bindings=None, conditions=(), time: float = 0.0) -> FieldFunction:
        """Solve ``lhs(u, v) = rhs(v)``, record it and return the solution."""
        unknown = VarId(*unknown)
        if classify_arity(lhs) != BILINEAR:
            raise TapeError("lhs of a linear solve must be bilinear")
        if classify_arity(rhs) != LINEAR or rhs.test_space is None:
            raise TapeError("rhs of a linear solve must be linear in the test function")
        space = lhs.trial_space
        name = unknown_name or unknown.name
        residual = action(lhs, Coefficient(name, space)) - rhs
        rec = SolveRecord(len(self.records), "linear", unknown, name, space, residual,
                          lhs=lhs, rhs=rhs, conditions=tuple(conditions), time=float(time))
        return self._record(rec, bindings)

    def solve_nonlinear(self, residual: Form, unknown, space: FunctionSpace,
                        unknown_name: str | None = None, bindings=None, conditions=(),
                        initial_guess=None, tolerances: NewtonTolerances | None = None,
                        time: float = 0.0) -> FieldFunction:
        """Solve ``residual(u; v) = 0`` by Newton's method and record it.

        ``initial_guess`` may be a frozen field, a VarId (read at replay
        time) or None for zero.  Replays start from the same guess.
        """
        unknown = VarId(*unknown)
        if classify_arity(residual) != LINEAR or residual.test_space is None:
            raise TapeError("a residual must be linear in the test function")
        if isinstance(initial_guess, FieldFunction):
            initial_guess = initial_guess.copy()
        elif initial_guess is not None:
            initial_guess = VarId(*initial_guess)
        rec = SolveRecord(len(self.records), "nonlinear", unknown, unknown_name or unknown.name,
                          space, residual, conditions=tuple(conditions),
                          tolerances=tolerances or NewtonTolerances(),
                          initial_guess=initial_guess, time=float(time))
        return self._record(rec, bindings)

    def record_solve(self, record: SolveRecord, bindings=None) -> int:
        """Append an already constructed record (solving it) and return its id."""
        record.id = len(self.records)
        self._record(record, bindings)
        return record.id

    def _record(self, rec: SolveRecord, bindings) -> FieldFunction:
        if rec.unknown in self._unknowns or rec.unknown in self.initial:
            raise TapeError(f"duplicate unknown {rec.unknown}")
        rec.sources = self._resolve_sources(rec, bindings or {})
        if isinstance(rec.initial_guess, VarId):
            self._check_available(rec.initial_guess, rec)
        self._note_mesh(rec.space)
        sol = self._execute(rec, self.trajectory)
        self.records.append(rec)
        self._unknowns.add(rec.unknown)
        self.trajectory[rec.unknown] = sol
        return sol.copy()

    def _check_available(self, var: VarId, rec: SolveRecord):
        if var not in self.trajectory:
            raise TapeError(f"record for {rec.unknown}: unresolved dependency {var}")

    def _resolve_sources(self, rec: SolveRecord, bindings: dict) -> dict:
        names = {}
        for form in rec.forms():
            names.update(coefficients(form))
        names.pop(rec.unknown_name, None)
        sources = {}
        for name in sorted(names):
            src = bindings.get(name, name)
            if isinstance(src, tuple) and len(src) == 2 and not isinstance(src, VarId) \
                    and isinstance(src[1], int):
                src = VarId(*src)
            if isinstance(src, VarId):
                self._check_available(src, rec)
                sources[name] = src
            elif isinstance(src, ControlSpec):
                sources[name] = ("control", src.id)
            elif isinstance(src, str):
                if src in self.controls:
                    sources[name] = ("control", src)
                elif src in self.data:
                    sources[name] = ("data", src)
                else:
                    raise TapeError(f"record for {rec.unknown}: unresolved dependency {src!r}")
            elif isinstance(src, (FieldFunction, Real)):
                key = f"{name}#{len(self.records)}"
                self.add_data(key, src)
                sources[name] = ("data", key)
            else:
                raise TapeError(f"cannot bind {name!r} to {type(src).__name__}")
        unused = set(bindings) - set(names) - {rec.unknown_name}
        if unused:
            raise TapeError(f"bindings {sorted(unused)} do not appear in the forms")
        return sources

    # -- execution ----------------------------------------------------------------------
    def bindings_for(self, rec: SolveRecord, states) -> dict:
        """Coefficient values of ``rec``'s dependencies (not its unknown)."""
        out = {}
        for name, src in rec.sources.items():
            if isinstance(src, VarId):
                if src not in states:
                    raise TapeError(f"record {rec.id}: value of {src} unavailable")
                out[name] = states[src]
            elif src[0] == "control":
                out[name] = self.control_values[src[1]]
            else:
                out[name] = self.data[src[1]]
        return out

    def _lhs_key(self, rec, binds):
        parts = []
        for name in sorted(coefficients(rec.lhs)):
            v = binds[name]
            parts.append(v.vector.tobytes() if isinstance(v, FieldFunction) else repr(v).encode())
        return b"|".join(parts)

    def linear_operator(self, rec: SolveRecord, binds):
        """Assembled lhs and the factorised eliminated lhs of a linear record.

        Cached per record and keyed by the values the lhs reads, so replays
        that only change the right-hand side reuse the factorisation.
        """
        key = self._lhs_key(rec, binds)
        hit = self._lu_cache.get(rec.id)
        if hit is not None and hit[0] == key:
            return hit[1], hit[2]
        A = assemble(rec.lhs, binds)
        A_bc, _ = apply_dirichlet(A, None, [bc.homogenized() for bc in rec.conditions])
        lu = LinearSolver(A_bc)
        self._lu_cache[rec.id] = (key, A, lu)
        return A, lu

    def _execute(self, rec: SolveRecord, states) -> FieldFunction:
        binds = self.bindings_for(rec, states)
        try:
            if rec.kind == "linear":
                A, lu = self.linear_operator(rec, binds)
                _, b = apply_dirichlet(A, assemble(rec.rhs, binds), rec.conditions)
                x = lu.solve(b)
                self.forward_linear_solves += 1
                return FieldFunction(rec.space, x)
            guess = rec.initial_guess
            if guess is None:
                guess = FieldFunction(rec.space)
            elif isinstance(guess, VarId):
                guess = states[guess]
            res = solve_newton(rec.residual, guess, rec.unknown_name, rec.conditions,
                               binds, rec.tolerances)
        except SolverError as exc:
            raise ReplayError(f"record {rec.id} ({rec.unknown}): {exc}") from exc
        self.forward_linear_solves += res.iterations
        self.newton_iterations[rec.id] = res.iterations
        return res.solution

    def initial_states(self) -> dict:
        """Initial variables with initial-condition controls substituted."""
        out = {var: val.copy() for var, (val, _) in self.initial.items()}
        for cid, spec in self.controls.items():
            if spec.kind == INITIAL:
                out[spec.target] = self.control_values[cid].copy()
        return out

    def run_record(self, index: int, states) -> FieldFunction:
        return self._execute(self.records[index], states)

    # -- substitution and replay ------------------------------------------------------
    def substitute_controls(self, values: dict) -> None:
        """Replace control values; ``values`` maps control id (or spec) to a value."""
        for key, val in values.items():
            cid = key.id if isinstance(key, ControlSpec) else str(key)
            spec = self.controls.get(cid)
            if spec is None:
                raise TapeError(f"unknown control {cid!r}")
            if isinstance(val, FieldFunction):
                if not spec.space.compatible(val.space):
                    raise TapeError(f"control {cid} lives on {spec.space.label}, "
                                    f"got a {val.space.label} field")
                vec = val.vector
            elif isinstance(val, Real):
                vec = np.array([float(val)])
            else:
                vec = np.asarray(val, dtype=float).reshape(-1)
            if vec.shape != (spec.dim,):
                raise TapeError(f"control {cid} expects {spec.dim} values, got {vec.size}")
            self.control_values[cid] = FieldFunction(spec.space, vec.copy())
        self.trajectory = {}

    def timegrid(self) -> list:
        """Sorted ``(level, time)`` pairs of every variable on the tape."""
        grid = {}
        for var, (_, t) in self.initial.items():
            grid.setdefault(var.level, t)
        for rec in self.records:
            grid.setdefault(rec.unknown.level, rec.time)
        return sorted(grid.items())

    def functional_bindings(self) -> dict:
        out = dict(self.data)
        for cid, spec in self.controls.items():
            if spec.kind != INITIAL:
                out[cid] = self.control_values[cid]
        return out

    def functional_resolver(self, states):
        from .functional import trajectory_resolver
        return trajectory_resolver(states, self.functional_bindings())

    def replay(self, functional=None):
        """Re-execute every record; return ``(trajectory, J or None)``."""
        states = self.initial_states()
        for rec in self.records:
            states[rec.unknown] = self._execute(rec, states)
        self.trajectory = states
        if functional is None:
            return states, None
        return states, self.evaluate(functional, states)

    def evaluate(self, functional, states=None) -> float:
        states = self.trajectory if states is None else states
        grid = self.timegrid()
        resolver = self.functional_resolver(states)
        return float(sum(functional.level_value(lv, grid, resolver, self.mesh)
                         for lv in functional.active_levels(grid)))

    def ensure_trajectory(self):
        if not self.trajectory:
            self.replay()
        return self.trajectory

    # -- inspection ---------------------------------------------------------------------
    def is_chain(self) -> bool:
        """True when record k solves level k+1 from level k of one variable."""
        if not self.records:
            return False
        name = self.records[0].unknown.name
        if VarId(name, 0) not in self.initial:
            return False
        for k, rec in enumerate(self.records):
            if rec.unknown != VarId(name, k + 1):
                return False
            for dep in rec.dependencies:
                if isinstance(dep, VarId) and dep != VarId(name, k):
                    return False
            if isinstance(rec.initial_guess, VarId) and rec.initial_guess != VarId(name, k):
                return False
        return True

    def dump(self) -> str:
        """Text listing of every record with its forms and dependency edges."""
        lines = []
        for var, (val, t) in sorted(self.initial.items()):
            lines.append(f"initial {var} {val.space.label} t={t!r}")
        for cid, spec in self.controls.items():
            lines.append(f"control {cid} {spec.kind} {spec.space.label}")
        for rec in self.records:
            deps = ", ".join(f"{n}={_src_str(s)}" for n, s in rec.sources.items())
            lines.append(f"record {rec.id} {rec.kind} {rec.unknown} "
                         f"[{rec.unknown_name}] t={rec.time!r} <- {deps or '-'}")
            if rec.kind == "linear":
                lines.append(f"  lhs {to_sexpr(rec.lhs)}")
                lines.append(f"  rhs {to_sexpr(rec.rhs)}")
            else:
                lines.append(f"  residual {to_sexpr(rec.residual)}")
                guess = rec.initial_guess
                if guess is None:
                    guess = "zero"
                elif not isinstance(guess, VarId):
                    guess = "frozen"
                lines.append(f"  guess {guess}")
            ndofs = sum(len(bc.dofs) for bc in rec.conditions)
            lines.append(f"  dirichlet {len(rec.conditions)} condition(s), {ndofs} dofs")
        return "\n".join(lines) + "\n"


def _src_str(src):
    if isinstance(src, VarId):
        return str(src)
    return f"{src[0]}:{src[1]}"
