"""Reduced functionals and bound-constrained minimisation.

Two methods are available: a projected limited-memory BFGS with an Armijo
search along the projection arc, and Nelder-Mead with vertices clipped into
the box.  Both work on flat control vectors; :class:`ReducedFunctional`
maps those onto the controls of a tape.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .adjoint import compute_gradient
from .tape import ControlSpec, Tape

log = logging.getLogger(__name__)

PROJECTED_LBFGS = "projected-lbfgs"
NELDER_MEAD = "nelder-mead"


class OptimizationError(RuntimeError):
    """Raised with the last accepted iterate and the history so far."""

    def __init__(self, message, x=None, history=None):
        super().__init__(message)
        self.x = x
        self.history = history


class LineSearchError(OptimizationError):
    pass


# -- objectives -----------------------------------------------------------------------

class ReducedFunctional:
    """``J(u(m), m)`` as a function of the flattened control vector.

    Evaluation substitutes the controls on the tape and replays it; the
    gradient reuses that replay when called at the same point.  With a
    checkpoint ``plan`` the gradient runs its own checkpointed sweep.
    """

    def __init__(self, tape: Tape, functional, controls, plan=None, scale: float = 1.0,
                 riesz: str = "l2"):
        if isinstance(controls, (ControlSpec, str)):
            controls = [controls]
        self.tape = tape
        self.functional = functional
        self.controls = [tape.controls[c.id if isinstance(c, ControlSpec) else c]
                         for c in controls]
        self.plan = plan
        self.scale = float(scale)
        self.riesz = riesz
        self.n_eval = 0
        self.n_grad = 0
        self.sizes = [c.dim for c in self.controls]
        self._x = None
        self._value = None

    @property
    def size(self) -> int:
        return sum(self.sizes)

    def initial_vector(self) -> np.ndarray:
        return np.concatenate([self.tape.control_value(c).vector for c in self.controls])

    def split(self, x) -> list:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.size,):
            raise ValueError(f"control vector has shape {x.shape}, expected ({self.size},)")
        return np.split(x, np.cumsum(self.sizes)[:-1])

    def _load(self, x):
        x = np.asarray(x, dtype=float)
        if self._x is not None and np.array_equal(x, self._x) and self.tape.trajectory:
            return False
        self.tape.substitute_controls({c.id: part for c, part in zip(self.controls, self.split(x))})
        self._x = x.copy()
        self._value = None
        return True

    def __call__(self, x) -> float:
        self._load(x)
        if self._value is None or not self.tape.trajectory:
            self.n_eval += 1
            _, value = self.tape.replay(self.functional)
            self._value = value
        return self.scale * self._value

    def gradient(self, x) -> np.ndarray:
        self.n_grad += 1
        if self.plan is not None:
            from .checkpointing import adjoint_with_checkpoints
            self._load(x)
            run = adjoint_with_checkpoints(self.tape, self.functional, self.controls,
                                           self.plan, self.riesz)
            grads = run.gradients
        else:
            self(x)
            grads = compute_gradient(self.tape, self.functional, self.controls, self.riesz)
        return self.scale * np.concatenate(grads)

    def scaled(self, factor: float) -> "ReducedFunctional":
        """Same tape and functional with the value multiplied by ``factor``."""
        out = ReducedFunctional(self.tape, self.functional, self.controls, self.plan,
                                self.scale * factor, self.riesz)
        return out


class CallableFunctional:
    """Adapter for plain ``f(x)`` / ``grad(x)`` callables."""

    def __init__(self, f, grad=None, x0=None):
        self.f = f
        self.grad = grad
        self.x0 = None if x0 is None else np.asarray(x0, dtype=float)
        self.n_eval = 0
        self.n_grad = 0

    def initial_vector(self):
        return self.x0.copy()

    def __call__(self, x):
        self.n_eval += 1
        return float(self.f(np.asarray(x, dtype=float)))

    def gradient(self, x):
        if self.grad is None:
            raise OptimizationError("this functional has no gradient")
        self.n_grad += 1
        return np.asarray(self.grad(np.asarray(x, dtype=float)), dtype=float)


class _Negated:
    def __init__(self, rf):
        self.rf = rf

    def initial_vector(self):
        return self.rf.initial_vector()

    def __call__(self, x):
        return -self.rf(x)

    def gradient(self, x):
        return -self.rf.gradient(x)

    @property
    def n_eval(self):
        return self.rf.n_eval

    @property
    def n_grad(self):
        return self.rf.n_grad


# -- problem description ------------------------------------------------------------------

@dataclass
class Bounds:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float).reshape(-1)
        self.upper = np.asarray(self.upper, dtype=float).reshape(-1)
        if self.lower.shape != self.upper.shape:
            raise ValueError("lower and upper bounds differ in length")
        if np.any(self.lower > self.upper):
            raise OptimizationError("infeasible bounds: lower > upper")

    @classmethod
    def uniform(cls, n: int, lower=-np.inf, upper=np.inf) -> "Bounds":
        return cls(np.full(n, float(lower)), np.full(n, float(upper)))

    def project(self, x):
        return np.minimum(np.maximum(x, self.lower), self.upper)


@dataclass(frozen=True)
class TerminationSpec:
    gtol: float = 1e-8          # projected gradient, infinity norm
    ftol: float = 1e-9          # relative change of J over one iteration
    max_iter: int = 500
    max_eval: int = 5000

    def __post_init__(self):
        if min(self.gtol, self.ftol) <= 0 or self.max_iter <= 0 or self.max_eval <= 0:
            raise ValueError("termination tolerances and limits must be positive")


class InequalityConstraint:
    """Declared for API completeness; only box constraints are supported."""

    def __init__(self, *args, **kwargs):
        raise NotImplementedError("general inequality constraints are not implemented; "
                                  "use Bounds for box constraints")


class EqualityConstraint:
    def __init__(self, *args, **kwargs):
        raise NotImplementedError("equality constraints are not implemented")


@dataclass
class History:
    rows: list = field(default_factory=list)   # (iter, J, proj_grad_inf, n_eval, n_grad)
    status: str = ""

    def add(self, it, J, pg, n_eval, n_grad):
        self.rows.append((int(it), float(J), float(pg), int(n_eval), int(n_grad)))

    @property
    def values(self):
        return [r[1] for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "J", "proj_grad_inf", "n_eval", "n_grad"])
        for it, J, pg, ne, ng in self.rows:
            w.writerow([it, repr(J), repr(pg), ne, ng])
        return buf.getvalue()


def projected_gradient(x, g, bounds: Bounds | None):
    if bounds is None:
        return g.copy()
    return x - bounds.project(x - g)


# -- projected L-BFGS -------------------------------------------------------------------

def _two_loop(g, pairs, free):
    """L-BFGS direction on the free variables, with curvature pairs restricted to them."""
    q = np.where(free, g, 0.0)
    used = []
    for s, y, _ in pairs:
        sf, yf = s[free], y[free]
        sy = np.dot(sf, yf)
        if sy > 1e-12 * np.linalg.norm(sf) * np.linalg.norm(yf):
            used.append((sf, yf, 1.0 / sy))
    qf = q[free]
    alphas = []
    for sf, yf, rho in reversed(used):
        a = rho * np.dot(sf, qf)
        qf = qf - a * yf
        alphas.append(a)
    gamma = np.dot(used[-1][0], used[-1][1]) / np.dot(used[-1][1], used[-1][1]) if used else 1.0
    r = gamma * qf
    for (sf, yf, rho), a in zip(used, reversed(alphas)):
        b = rho * np.dot(yf, r)
        r = r + (a - b) * sf
    d = np.zeros_like(g)
    d[free] = -r
    return d


def _lbfgs(obj, x0, bounds, term: TerminationSpec, memory: int, sign: float, callback):
    c1 = 1e-4
    project = bounds.project if bounds is not None else (lambda z: z)
    x = project(np.asarray(x0, dtype=float))
    f = obj(x)
    g = obj.gradient(x)
    hist = History()
    pg = np.abs(projected_gradient(x, g, bounds)).max(initial=0.0)
    hist.add(0, sign * f, pg, obj.n_eval, obj.n_grad)
    pairs = []
    for it in range(1, term.max_iter + 1):
        if pg <= term.gtol:
            hist.status = "projected gradient below tolerance"
            return x, hist
        if bounds is not None:
            active = ((x <= bounds.lower) & (g > 0)) | ((x >= bounds.upper) & (g < 0))
        else:
            active = np.zeros(x.shape, dtype=bool)
        free = ~active
        d = _two_loop(g, pairs, free)
        slope = np.dot(g, d)
        if not slope < 0:
            pairs.clear()
            d = np.where(free, -g, 0.0)
            slope = np.dot(g, d)
        t = 1.0 if pairs else 1.0 / max(np.abs(d).max(), 1e-300)
        for _ in range(60):
            x_new = project(x + t * d)
            step = x_new - x
            f_new = obj(x_new)
            if np.isfinite(f_new) and f_new <= f + c1 * np.dot(g, step):
                break
            t *= 0.5
            if obj.n_eval >= term.max_eval:
                break
        else:
            x_new = None
        if x_new is None or not (np.isfinite(f_new) and f_new <= f + c1 * np.dot(g, step)):
            hist.status = "line search failed"
            raise LineSearchError(f"line search failed at iteration {it}", x, hist)
        g_new = obj.gradient(x_new)
        s, y = x_new - x, g_new - g
        sy = np.dot(s, y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            pairs.append((s, y, 1.0 / sy))
            if len(pairs) > memory:
                pairs.pop(0)
        f_old = f
        x, f, g = x_new, f_new, g_new
        pg = np.abs(projected_gradient(x, g, bounds)).max(initial=0.0)
        hist.add(it, sign * f, pg, obj.n_eval, obj.n_grad)
        log.info("iter %d  J=%.6e  |pg|=%.3e", it, sign * f, pg)
        if callback is not None:
            callback(it, x, sign * f)
        if pg <= term.gtol:
            hist.status = "projected gradient below tolerance"
            return x, hist
        if abs(f_old - f) <= term.ftol * max(abs(f_old), abs(f), 1e-300):
            hist.status = "relative change of J below tolerance"
            return x, hist
        if obj.n_eval >= term.max_eval:
            hist.status = "evaluation limit"
            return x, hist
    hist.status = "iteration limit"
    return x, hist


# -- Nelder-Mead ------------------------------------------------------------------------

def _nelder_mead(obj, x0, bounds, term: TerminationSpec, sign: float, callback):
    """Standard reflection/expansion/contraction/shrink with clipped vertices."""
    project = bounds.project if bounds is not None else (lambda z: z)
    x0 = project(np.asarray(x0, dtype=float))
    n = x0.size
    pts = [x0]
    for i in range(n):
        p = x0.copy()
        step = 0.05 * p[i] if p[i] != 0 else 2.5e-4
        p[i] += step
        if bounds is not None and project(p)[i] != p[i]:
            p[i] -= 2 * step           # step inward when the start sits on a bound
        pts.append(project(p))
    pts = np.array(pts)
    vals = np.array([obj(p) for p in pts])
    hist = History()
    hist.add(0, sign * vals.min(), math.nan, obj.n_eval, obj.n_grad)
    for it in range(1, term.max_iter + 1):
        order = np.argsort(vals, kind="stable")
        pts, vals = pts[order], vals[order]
        spread = abs(vals[-1] - vals[0])
        width = np.abs(pts[1:] - pts[0]).max()
        # a simplex at floating-point resolution cannot shrink any further
        collapsed = width <= 4 * np.finfo(float).eps * max(1.0, np.abs(pts[0]).max())
        if collapsed or (spread <= term.ftol * max(abs(vals[0]), 1e-300)
                         and width <= np.sqrt(term.ftol)):
            hist.status = "simplex converged"
            break
        centroid = pts[:-1].mean(axis=0)
        xr = project(centroid + (centroid - pts[-1]))
        fr = obj(xr)
        if fr < vals[0]:
            xe = project(centroid + 2.0 * (centroid - pts[-1]))
            fe = obj(xe)
            pts[-1], vals[-1] = (xe, fe) if fe < fr else (xr, fr)
        elif fr < vals[-2]:
            pts[-1], vals[-1] = xr, fr
        else:
            if fr < vals[-1]:
                xc = project(centroid + 0.5 * (xr - centroid))
            else:
                xc = project(centroid + 0.5 * (pts[-1] - centroid))
            fc = obj(xc)
            if fc < min(fr, vals[-1]):
                pts[-1], vals[-1] = xc, fc
            else:
                for i in range(1, n + 1):
                    pts[i] = project(pts[0] + 0.5 * (pts[i] - pts[0]))
                    vals[i] = obj(pts[i])
        best = vals.min()
        hist.add(it, sign * best, math.nan, obj.n_eval, obj.n_grad)
        if callback is not None:
            callback(it, pts[np.argmin(vals)], sign * best)
        if obj.n_eval >= term.max_eval:
            hist.status = "evaluation limit"
            break
    else:
        hist.status = "iteration limit"
    return pts[np.argmin(vals)].copy(), hist


# -- front doors --------------------------------------------------------------------------

def _run(obj, bounds, method, termination, x0, memory, constraints, sign, callback):
    if constraints:
        raise NotImplementedError("only box constraints are supported")
    term = termination or TerminationSpec()
    x0 = obj.initial_vector() if x0 is None else np.asarray(x0, dtype=float)
    if bounds is not None and bounds.lower.shape != x0.shape:
        raise ValueError(f"bounds have {bounds.lower.size} entries, controls {x0.size}")
    if method == PROJECTED_LBFGS:
        x, hist = _lbfgs(obj, x0, bounds, term, memory, sign, callback)
    elif method == NELDER_MEAD:
        x, hist = _nelder_mead(obj, x0, bounds, term, sign, callback)
    else:
        raise ValueError(f"unknown method {method!r}")
    obj(x)    # leave the tape holding the returned iterate
    return x, hist


def minimize(rf, bounds: Bounds | None = None, method: str = PROJECTED_LBFGS,
             termination: TerminationSpec | None = None, x0=None, memory: int = 10,
             constraints=None, callback=None):
    """Minimise ``rf`` from ``x0`` (default: its current control values).

    Returns ``(x_opt, history)``; every evaluated point satisfies ``bounds``.
    """
    return _run(rf, bounds, method, termination, x0, memory, constraints, 1.0, callback)


def maximize(rf, bounds: Bounds | None = None, method: str = PROJECTED_LBFGS,
             termination: TerminationSpec | None = None, x0=None, memory: int = 10,
             constraints=None, callback=None):
    """Maximise ``rf``; the history reports values of ``rf`` itself."""
    return _run(_Negated(rf), bounds, method, termination, x0, memory, constraints, -1.0,
                callback)
