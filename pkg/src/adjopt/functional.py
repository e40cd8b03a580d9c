"""Time-dependent objective functionals.

A functional is a sum of terms ``form * measure``::

    J = inner(u - u_obs, u - u_obs) * dx * dt + inner(grad(u), grad(u)) * dx * dt[0]
    J = 0.5 * (u - u_d) ** 2 * dx * dt[FINISH_TIME]

``dt`` integrates over the recorded time levels with the trapezoidal rule;
``dt[t]`` evaluates at the level nearest to ``t`` (ties go to the earlier
level); ``dt[START_TIME]`` and ``dt[FINISH_TIME]`` pick the first and last
levels.  Coefficient names in a term resolve to tape variables of that name
at each level, otherwise to controls or frozen data.
"""
from __future__ import annotations

from dataclasses import dataclass
from numbers import Real

import numpy as np

from .forms import FUNCTIONAL, Form, FormError, classify_arity, coefficients, derive_gateaux

START_TIME = "start"
FINISH_TIME = "finish"


class FunctionalError(ValueError):
    pass


class TimeMeasure:
    """``dt`` (integral over [0, T]) or a point measure ``dt[t]``."""

    def __init__(self, kind: str = "integral", time=None):
        self.kind = kind
        self.time = time

    def __getitem__(self, t):
        if t == START_TIME:
            return TimeMeasure("start")
        if t == FINISH_TIME:
            return TimeMeasure("finish")
        if not isinstance(t, Real):
            raise FunctionalError(f"bad time {t!r}")
        return TimeMeasure("point", float(t))

    def __rmul__(self, form):
        if not isinstance(form, Form):
            return NotImplemented
        if classify_arity(form) != FUNCTIONAL:
            raise FunctionalError("functional terms must not contain test or trial functions")
        return TimeFunctional([Term(form, self)])

    def __repr__(self):
        if self.kind == "integral":
            return "dt"
        if self.kind == "point":
            return f"dt[{self.time!r}]"
        return f"dt[{self.kind.upper()}_TIME]"


dt = TimeMeasure()


@dataclass
class Term:
    form: Form
    measure: TimeMeasure
    scale: float = 1.0


def trapezoid_weights(times) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    w = np.zeros_like(t)
    if len(t) > 1:
        d = np.diff(t)
        w[:-1] += 0.5 * d
        w[1:] += 0.5 * d
    return w


def nearest_level(times, t: float) -> int:
    times = np.asarray(times, dtype=float)
    span = max(times[-1] - times[0], 1.0)
    if t < times[0] - 1e-12 * span or t > times[-1] + 1e-12 * span:
        raise FunctionalError(f"time {t} outside [{times[0]}, {times[-1]}]")
    d = np.abs(times - t)
    return int(np.flatnonzero(d <= d.min() + 1e-12 * span)[0])


class TimeFunctional:
    """Sum of (form, time measure) terms."""

    def __init__(self, terms):
        self.terms = list(terms)

    def __add__(self, other):
        if isinstance(other, Real) and other == 0:
            return self
        if not isinstance(other, TimeFunctional):
            return NotImplemented
        return TimeFunctional(self.terms + other.terms)

    __radd__ = __add__

    def __rmul__(self, c):
        if not isinstance(c, Real):
            return NotImplemented
        return TimeFunctional([Term(t.form, t.measure, t.scale * float(c)) for t in self.terms])

    __mul__ = __rmul__

    def __neg__(self):
        return (-1.0) * self

    def __sub__(self, other):
        return self + (-1.0) * other

    def names(self) -> set:
        out = set()
        for t in self.terms:
            out |= set(coefficients(t.form))
        return out

    # -- time weights ---------------------------------------------------------
    def term_weights(self, term: Term, timegrid) -> dict:
        """Level -> weight for one term on ``timegrid`` (list of (level, time))."""
        levels = [lv for lv, _ in timegrid]
        times = [t for _, t in timegrid]
        m = term.measure
        if m.kind == "integral":
            w = trapezoid_weights(times)
            return {lv: term.scale * wi for lv, wi in zip(levels, w) if wi != 0.0}
        if m.kind == "start":
            idx = 0
        elif m.kind == "finish":
            idx = len(levels) - 1
        else:
            idx = nearest_level(times, m.time)
        return {levels[idx]: term.scale}

    def active_levels(self, timegrid) -> list:
        out = set()
        for t in self.terms:
            out |= set(self.term_weights(t, timegrid))
        return sorted(out)

    # -- evaluation --------------------------------------------------------------
    def level_value(self, level: int, timegrid, bindings_at, mesh=None) -> float:
        """Contribution of one time level; ``bindings_at(level, names)`` -> dict."""
        total = 0.0
        from .fem.assembly import assemble
        for term in self.terms:
            w = self.term_weights(term, timegrid).get(level)
            if w is None:
                continue
            binds = bindings_at(level, coefficients(term.form))
            total += w * assemble(term.form, binds, mesh=_term_mesh(term.form, binds, mesh))
        return total

    def evaluate(self, trajectory, timegrid, bindings=None, mesh=None) -> float:
        """Value of the functional on a recorded trajectory.

        ``trajectory`` maps ``VarId``-like ``(name, level)`` keys to fields;
        ``bindings`` supplies controls and frozen data by name.
        """
        resolver = trajectory_resolver(trajectory, bindings)
        return sum(self.level_value(lv, timegrid, resolver, mesh)
                   for lv in self.active_levels(timegrid))

    # -- derivatives ------------------------------------------------------------------
    def derivative(self, name: str, level: int, timegrid, space) -> Form:
        """Gradient form of the level-``level`` contribution w.r.t. ``name``.

        Returns a linear form in a test function on ``space``, weighted by the
        time quadrature weight of that level.  Zero when nothing depends on it.
        """
        out = None
        for term in self.terms:
            w = self.term_weights(term, timegrid).get(level)
            if w is None or name not in coefficients(term.form):
                continue
            d = w * derive_gateaux(term.form, name, space)
            out = d if out is None else out + d
        if out is None:
            from .forms import Constant, TestFunction
            out = Form(Constant(0.0) * TestFunction(space), space)
        return out


def derivative_wrt_state(J: TimeFunctional, var, timegrid, space) -> Form:
    return J.derivative(var[0], var[1], timegrid, space)


def _term_mesh(form, binds, mesh=None):
    from .fem.space import FieldFunction
    for s in coefficients(form).values():
        if s is not None:
            return s.mesh
    for v in binds.values():
        if isinstance(v, FieldFunction):
            return v.space.mesh
    if mesh is None:
        raise FormError("cannot integrate a constant functional term without a mesh")
    return mesh


def trajectory_resolver(trajectory, bindings=None):
    bindings = dict(bindings or {})
    state_names = {k[0] for k in trajectory}

    def resolve(level, names):
        out = {}
        for n in names:
            if n in state_names:
                key = next((k for k in trajectory if k[0] == n and k[1] == level), None)
                if key is None:
                    raise FunctionalError(f"variable {n!r} has no value at level {level}")
                out[n] = trajectory[key]
            elif n in bindings:
                out[n] = bindings[n]
            else:
                raise FunctionalError(f"unresolved coefficient {n!r} in functional")
        return out

    return resolve
