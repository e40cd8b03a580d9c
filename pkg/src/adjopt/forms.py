"""Symbolic variational forms.

Integrands are trees of :class:`Expr` nodes built with ordinary Python
operators::

    u, v = TrialFunction(V), TestFunction(V)
    a = inner(grad(u), grad(v)) * dx
    F = (inner(grad(w), grad(v)) + w**3 * v - m * v) * dx

Gradients are pushed down to terminals at construction time, so a ``grad``
node only ever wraps a test function, trial function or coefficient.  Apart
from flattening sums and folding constant subtrees no simplification is
attempted.

The canonical text form (see :func:`to_sexpr`) is described in
``docs/formats.md``.
"""
from __future__ import annotations

import math
from numbers import Real
from typing import Callable

__all__ = [
    "FormError", "Expr", "Form", "Measure", "dx",
    "Constant", "SpatialCoordinate", "TestFunction", "TrialFunction",
    "Coefficient", "PointwiseData", "grad", "inner", "sin", "cos", "exp",
    "smooth_max0", "classify_arity", "derive_gateaux", "adjoint_form",
    "action", "replace", "coefficients", "estimate_quadrature_degree",
    "to_sexpr",
]

FUNCTIONAL, LINEAR, BILINEAR = "functional", "linear", "bilinear"


class FormError(ValueError):
    """Malformed form or unsupported symbolic operation."""


class Expr:
    """One node of an integrand expression tree.

    ``kind`` is one of ``const coord test trial coef grad sum diff prod quot
    pow inner smax sstep data sin cos exp``.  ``data`` holds the per-kind
    payload (constant value, coordinate index, space, ``(name, space)``,
    exponent, smoothing width or ``(name, callable)``).
    """

    __slots__ = ("kind", "children", "data", "rank")

    def __init__(self, kind: str, children: tuple = (), data=None, rank: int = 0):
        self.kind = kind
        self.children = tuple(children)
        self.data = data
        self.rank = rank

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Measure):
            return NotImplemented
        return _sum(self, _wrap(other))

    def __radd__(self, other):
        return _sum(_wrap(other), self)

    def __sub__(self, other):
        return _diff(self, _wrap(other))

    def __rsub__(self, other):
        return _diff(_wrap(other), self)

    def __mul__(self, other):
        if isinstance(other, Measure):
            return NotImplemented
        return _prod(self, _wrap(other))

    def __rmul__(self, other):
        return _prod(_wrap(other), self)

    def __truediv__(self, other):
        return _quot(self, _wrap(other))

    def __rtruediv__(self, other):
        return _quot(_wrap(other), self)

    def __pow__(self, k):
        return _pow(self, k)

    def __neg__(self):
        return _prod(Constant(-1.0), self)

    def __getitem__(self, i):
        if self.rank != 1 or i not in (0, 1):
            raise FormError("only components 0 and 1 of a vector can be taken")
        return inner(self, _vec_const(1.0, 0.0) if i == 0 else _vec_const(0.0, 1.0))

    def __repr__(self):
        return to_sexpr(self)

    def key(self):
        """Hashable structural identity (spaces and data callables by id)."""
        if self.kind in ("test", "trial"):
            payload = id(self.data)
        elif self.kind == "coef":
            payload = (self.data[0], id(self.data[1]))
        elif self.kind == "data":
            payload = (self.data[0], id(self.data[1]))
        else:
            payload = self.data
        return (self.kind, payload, tuple(c.key() for c in self.children))


class Measure:
    """Cell integral over the whole mesh; ``expr * dx`` builds a Form."""

    def __rmul__(self, other):
        return Form(_wrap(other))

    def __repr__(self):
        return "dx"


dx = Measure()


class Form:
    """A scalar integrand integrated over every cell of the mesh.

    ``test_space``/``trial_space`` only need to be given for forms whose
    integrand has folded to zero, so that assembly still knows the shape.
    ``degree`` pins the quadrature degree; derivatives, actions and
    adjoints inherit it from their parent so that an assembled Jacobian is
    the exact derivative of the assembled residual.
    """

    def __init__(self, integrand: Expr, test_space=None, trial_space=None,
                 degree: int | None = None):
        self.degree = degree
        integrand = _wrap(integrand)
        if integrand.rank != 0:
            raise FormError("form integrands must be scalar")
        self.integrand = integrand
        tests, trials = _arguments(integrand)
        if len(tests) > 1 or len(trials) > 1:
            raise FormError("form has more than one test or trial lineage")
        self.test_space = tests[0] if tests else test_space
        self.trial_space = trials[0] if trials else trial_space

    def __add__(self, other):
        if isinstance(other, (int, float)) and other == 0:
            return self
        if not isinstance(other, Form):
            return NotImplemented
        return Form(self.integrand + other.integrand,
                    _first(self.test_space, other.test_space),
                    _first(self.trial_space, other.trial_space), _joint_degree(self, other))

    __radd__ = __add__

    def __sub__(self, other):
        if not isinstance(other, Form):
            return NotImplemented
        return Form(self.integrand - other.integrand,
                    _first(self.test_space, other.test_space),
                    _first(self.trial_space, other.trial_space), _joint_degree(self, other))

    def __neg__(self):
        return Form(-self.integrand, self.test_space, self.trial_space, self.degree)

    def __rmul__(self, scalar):
        if isinstance(scalar, Real):
            return Form(Constant(float(scalar)) * self.integrand,
                        self.test_space, self.trial_space, self.degree)
        return NotImplemented

    def __mul__(self, other):
        if isinstance(other, Real):
            return self.__rmul__(other)
        return NotImplemented

    @property
    def is_zero(self):
        return _is_zero(self.integrand)

    def __repr__(self):
        return to_sexpr(self)


def _joint_degree(a: "Form", b: "Form"):
    if a.degree is None and b.degree is None:
        return None
    return max(estimate_quadrature_degree(a), estimate_quadrature_degree(b))


def _first(a, b):
    return a if a is not None else b


# -- terminals ----------------------------------------------------------------

def Constant(value) -> Expr:
    return Expr("const", data=float(value))


def _vec_const(a, b) -> Expr:
    return Expr("const", data=(float(a), float(b)), rank=1)


def _zero(rank=0) -> Expr:
    return Constant(0.0) if rank == 0 else _vec_const(0.0, 0.0)


def SpatialCoordinate():
    """Return the pair of coordinate component nodes ``(x, y)``."""
    return Expr("coord", data=0), Expr("coord", data=1)


def TestFunction(space) -> Expr:
    return Expr("test", data=space)


def TrialFunction(space) -> Expr:
    return Expr("trial", data=space)


def Coefficient(name: str, space) -> Expr:
    return Expr("coef", data=(str(name), space))


def PointwiseData(name: str, func: Callable) -> Expr:
    """Opaque data ``func(x, y)`` evaluated at quadrature points only.

    Never differentiated; used for non-smooth manufactured data.
    """
    return Expr("data", data=(str(name), func))


# -- constructors with constant folding --------------------------------------

def _wrap(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, Real):
        return Constant(value)
    raise FormError(f"cannot use {type(value).__name__} in a form")


def _is_zero(e: Expr) -> bool:
    if e.kind != "const":
        return False
    return e.data == 0.0 if e.rank == 0 else e.data == (0.0, 0.0)


def _is_one(e: Expr) -> bool:
    return e.kind == "const" and e.rank == 0 and e.data == 1.0


def _sum(*terms: Expr) -> Expr:
    rank = terms[0].rank
    flat = []
    for t in terms:
        if t.rank != rank:
            raise FormError("cannot add expressions of different rank")
        flat.extend(t.children if t.kind == "sum" else (t,))
    consts = [t for t in flat if t.kind == "const"]
    rest = [t for t in flat if t.kind != "const"]
    if consts:
        if rank == 0:
            c = Constant(sum(t.data for t in consts))
        else:
            c = _vec_const(sum(t.data[0] for t in consts), sum(t.data[1] for t in consts))
        if not _is_zero(c):
            rest.append(c)
    if not rest:
        return _zero(rank)
    if len(rest) == 1:
        return rest[0]
    return Expr("sum", rest, rank=rank)


def _diff(a: Expr, b: Expr) -> Expr:
    if a.rank != b.rank:
        raise FormError("cannot subtract expressions of different rank")
    if _is_zero(b):
        return a
    if _is_zero(a):
        return _prod(Constant(-1.0), b)
    if a.kind == "const" and b.kind == "const":
        if a.rank == 0:
            return Constant(a.data - b.data)
        return _vec_const(a.data[0] - b.data[0], a.data[1] - b.data[1])
    return Expr("diff", (a, b), rank=a.rank)


def _prod(a: Expr, b: Expr) -> Expr:
    if a.rank and b.rank:
        raise FormError("use inner() for vector-vector products")
    rank = a.rank or b.rank
    if _is_zero(a) or _is_zero(b):
        return _zero(rank)
    if _is_one(a):
        return b
    if _is_one(b):
        return a
    if a.kind == "const" and b.kind == "const":
        if rank == 0:
            return Constant(a.data * b.data)
        s, v = (a, b) if a.rank == 0 else (b, a)
        return _vec_const(s.data * v.data[0], s.data * v.data[1])
    return Expr("prod", (a, b), rank=rank)


def _quot(a: Expr, b: Expr) -> Expr:
    if b.rank:
        raise FormError("cannot divide by a vector")
    if _is_zero(b):
        raise FormError("division by constant zero")
    if _is_zero(a):
        return _zero(a.rank)
    if _is_one(b):
        return a
    if a.kind == "const" and b.kind == "const" and a.rank == 0:
        return Constant(a.data / b.data)
    return Expr("quot", (a, b), rank=a.rank)


def _pow(a: Expr, k) -> Expr:
    if not isinstance(k, int) or isinstance(k, bool) or k < 1:
        raise FormError("only integer powers with exponent >= 1 are supported")
    if a.rank:
        raise FormError("cannot raise a vector to a power")
    if k == 1:
        return a
    if a.kind == "const":
        return Constant(a.data ** k)
    return Expr("pow", (a,), data=k)


def inner(a, b) -> Expr:
    a, b = _wrap(a), _wrap(b)
    if a.rank != b.rank:
        raise FormError("inner() of expressions with different rank")
    if a.rank == 0:
        return _prod(a, b)
    if _is_zero(a) or _is_zero(b):
        return Constant(0.0)
    if a.kind == "const" and b.kind == "const":
        return Constant(a.data[0] * b.data[0] + a.data[1] * b.data[1])
    return Expr("inner", (a, b))


def _scalar_fn(kind, fn):
    def build(a) -> Expr:
        a = _wrap(a)
        if a.rank:
            raise FormError(f"{kind}() of a vector")
        if a.kind == "const":
            return Constant(fn(a.data))
        return Expr(kind, (a,))
    build.__name__ = kind
    return build


sin = _scalar_fn("sin", math.sin)
cos = _scalar_fn("cos", math.cos)
exp = _scalar_fn("exp", math.exp)


def _smax_value(x, eps):
    return 0.5 * (math.sqrt(x * x + eps * eps) + x)


def _sstep_value(x, eps):
    return 0.5 * (x / math.sqrt(x * x + eps * eps) + 1.0)


def smooth_max0(a, eps: float) -> Expr:
    """Smoothed ``max(0, a)``: ``(sqrt(a**2 + eps**2) + a) / 2``."""
    a = _wrap(a)
    if eps <= 0:
        raise FormError("smoothing width must be positive")
    if a.rank:
        raise FormError("smooth_max0() of a vector")
    if a.kind == "const":
        return Constant(_smax_value(a.data, eps))
    return Expr("smax", (a,), data=float(eps))


def _smooth_step(a: Expr, eps: float) -> Expr:
    # derivative of smooth_max0: (a / sqrt(a**2 + eps**2) + 1) / 2
    if a.kind == "const":
        return Constant(_sstep_value(a.data, eps))
    return Expr("sstep", (a,), data=float(eps))


def grad(a) -> Expr:
    """Gradient, expanded by the chain rule down to the terminals."""
    a = _wrap(a)
    if a.rank:
        raise FormError("second derivatives are not supported")
    k = a.kind
    if k == "const":
        return _zero(1)
    if k == "coord":
        return _vec_const(1.0, 0.0) if a.data == 0 else _vec_const(0.0, 1.0)
    if k in ("test", "trial", "coef"):
        space = a.data if k != "coef" else a.data[1]
        if space is not None and getattr(space, "degree", 1) == 0:
            return _zero(1)
        return Expr("grad", (a,), rank=1)
    if k == "sum":
        return _sum(*(grad(c) for c in a.children))
    if k == "diff":
        return _diff(grad(a.children[0]), grad(a.children[1]))
    if k == "prod":
        p, q = a.children
        return _sum(_prod(grad(p), q), _prod(p, grad(q)))
    if k == "quot":
        p, q = a.children
        return _quot(_diff(_prod(grad(p), q), _prod(p, grad(q))), _pow(q, 2))
    if k == "pow":
        (p,) = a.children
        n = a.data
        return _prod(_prod(Constant(float(n)), _pow(p, n - 1)), grad(p))
    if k == "inner":
        raise FormError("gradient of an inner product is not supported")
    if k == "sin":
        return _prod(cos(a.children[0]), grad(a.children[0]))
    if k == "cos":
        return _prod(-sin(a.children[0]), grad(a.children[0]))
    if k == "exp":
        return _prod(a, grad(a.children[0]))
    if k == "smax":
        return _prod(_smooth_step(a.children[0], a.data), grad(a.children[0]))
    raise FormError(f"cannot take the gradient of a {k} node")


# -- traversal ----------------------------------------------------------------

def _walk(e: Expr):
    stack = [e]
    while stack:
        n = stack.pop()
        yield n
        stack.extend(n.children)


def _arguments(e: Expr):
    tests, trials = [], []
    for n in _walk(e):
        if n.kind == "test" and all(n.data is not s for s in tests):
            tests.append(n.data)
        elif n.kind == "trial" and all(n.data is not s for s in trials):
            trials.append(n.data)
    return tests, trials


def coefficients(form) -> dict:
    """Map coefficient name -> space for every coefficient in ``form``."""
    e = form.integrand if isinstance(form, Form) else form
    out = {}
    for n in _walk(e):
        if n.kind == "coef":
            name, space = n.data
            if name in out and out[name] is not space:
                raise FormError(f"coefficient {name!r} used with two spaces")
            out[name] = space
    return out


def classify_arity(form: Form) -> str:
    """Return ``'functional'``, ``'linear'`` or ``'bilinear'``.

    A form with a trial function but no test function counts as linear.
    """
    tests, trials = _arguments(form.integrand)
    if len(tests) > 1 or len(trials) > 1:
        raise FormError("form has more than one test or trial lineage")
    has_test = bool(tests) or form.test_space is not None
    has_trial = bool(trials) or form.trial_space is not None
    if has_test and has_trial:
        return BILINEAR
    if has_test or has_trial:
        return LINEAR
    return FUNCTIONAL


# -- substitution ---------------------------------------------------------------

def _map(e: Expr, fn) -> Expr:
    """Rebuild ``e`` bottom-up; ``fn(node)`` may return a replacement or None."""
    hit = fn(e)
    if hit is not None:
        return hit
    if not e.children:
        return e
    kids = [_map(c, fn) for c in e.children]
    return _rebuild(e, kids)


def _rebuild(e: Expr, kids) -> Expr:
    k = e.kind
    if k == "sum":
        return _sum(*kids)
    if k == "diff":
        return _diff(*kids)
    if k == "prod":
        return _prod(*kids)
    if k == "quot":
        return _quot(*kids)
    if k == "pow":
        return _pow(kids[0], e.data)
    if k == "inner":
        return inner(*kids)
    if k == "grad":
        return grad(kids[0])
    if k in ("sin", "cos", "exp"):
        return {"sin": sin, "cos": cos, "exp": exp}[k](kids[0])
    if k == "smax":
        return smooth_max0(kids[0], e.data)
    if k == "sstep":
        return _smooth_step(kids[0], e.data)
    raise FormError(f"cannot rebuild {k} node")


def replace(form: Form, mapping: dict) -> Form:
    """Substitute coefficients by name with other expressions."""
    mapping = {k: _wrap(v) for k, v in mapping.items()}

    def fn(n):
        if n.kind == "coef" and n.data[0] in mapping:
            return mapping[n.data[0]]
        return None

    return Form(_map(form.integrand, fn), form.test_space, form.trial_space, form.degree)


def action(form: Form, coefficient: Expr) -> Form:
    """Replace the trial function of ``form`` by ``coefficient``."""
    if form.trial_space is None:
        raise FormError("action() needs a form with a trial function")

    def fn(n):
        return coefficient if n.kind == "trial" else None

    return Form(_map(form.integrand, fn), form.test_space, degree=_inherited(form))


def adjoint_form(form: Form) -> Form:
    """Transpose a bilinear form by swapping its test and trial functions."""
    if classify_arity(form) != BILINEAR:
        raise FormError("adjoint_form() needs a bilinear form")
    Vt, Vu = form.test_space, form.trial_space
    new_test, new_trial = TestFunction(Vu), TrialFunction(Vt)

    def fn(n):
        if n.kind == "test":
            return new_trial
        if n.kind == "trial":
            return new_test
        return None

    return Form(_map(form.integrand, fn), Vu, Vt, form.degree)


# -- differentiation --------------------------------------------------------------

def derive_gateaux(form: Form, wrt: str, space=None) -> Form:
    """Directional derivative of ``form`` with respect to coefficient ``wrt``.

    The direction is a new trial function when ``form`` already has a test
    function (residual -> Jacobian) and a new test function otherwise
    (functional -> gradient form).  ``space`` is required only when ``wrt``
    does not occur in the form.
    """
    if form.trial_space is not None:
        raise FormError("cannot differentiate a form that already has a trial function")
    found = coefficients(form).get(wrt)
    if found is not None:
        space = found
    if space is None:
        raise FormError(f"coefficient {wrt!r} not in form; pass its space")
    make_dir = TrialFunction if form.test_space is not None else TestFunction
    direction = make_dir(space)
    d = _derive(form.integrand, wrt, direction)
    if form.test_space is not None:
        return Form(d, form.test_space, space, _inherited(form))
    return Form(d, space, degree=_inherited(form))


def _inherited(form: Form) -> int:
    return estimate_quadrature_degree(form)


def _derive(e: Expr, wrt: str, w: Expr) -> Expr:
    k = e.kind
    if k in ("const", "coord", "test", "trial", "data"):
        return _zero(e.rank)
    if k == "coef":
        return w if e.data[0] == wrt else _zero(e.rank)
    if k == "grad":
        inner_d = _derive(e.children[0], wrt, w)
        return _zero(1) if _is_zero(inner_d) else grad(inner_d)
    if k == "sum":
        return _sum(*(_derive(c, wrt, w) for c in e.children))
    if k == "diff":
        a, b = e.children
        return _diff(_derive(a, wrt, w), _derive(b, wrt, w))
    if k == "prod":
        a, b = e.children
        return _sum(_prod(_derive(a, wrt, w), b), _prod(a, _derive(b, wrt, w)))
    if k == "quot":
        a, b = e.children
        da, db = _derive(a, wrt, w), _derive(b, wrt, w)
        return _diff(_quot(da, b), _quot(_prod(a, db), _pow(b, 2)))
    if k == "pow":
        (a,) = e.children
        n = e.data
        return _prod(_prod(Constant(float(n)), _pow(a, n - 1)), _derive(a, wrt, w))
    if k == "inner":
        a, b = e.children
        return _sum(inner(_derive(a, wrt, w), b), inner(a, _derive(b, wrt, w)))
    if k == "sin":
        (a,) = e.children
        return _prod(cos(a), _derive(a, wrt, w))
    if k == "cos":
        (a,) = e.children
        return _prod(-sin(a), _derive(a, wrt, w))
    if k == "exp":
        (a,) = e.children
        return _prod(e, _derive(a, wrt, w))
    if k == "smax":
        (a,) = e.children
        return _prod(_smooth_step(a, e.data), _derive(a, wrt, w))
    if k == "sstep":
        (a,) = e.children
        if _is_zero(_derive(a, wrt, w)):
            return Constant(0.0)
        raise FormError("second derivative of smooth_max0 is not supported")
    raise FormError(f"unknown node kind {k!r}")


# -- quadrature degree -------------------------------------------------------------

_NONPOLY_BUMP = 2


def _degree(e: Expr) -> int:
    k = e.kind
    if k == "const":
        return 0
    if k == "coord":
        return 1
    if k in ("test", "trial"):
        return getattr(e.data, "degree", 1)
    if k == "coef":
        space = e.data[1]
        return 0 if space is None else getattr(space, "degree", 1)
    if k == "grad":
        return max(_degree(e.children[0]) - 1, 0)
    if k in ("sum", "diff"):
        return max(_degree(c) for c in e.children)
    if k in ("prod", "inner"):
        return sum(_degree(c) for c in e.children)
    if k == "pow":
        return e.data * _degree(e.children[0])
    if k == "quot":
        num, den = e.children
        d = _degree(den)
        return _degree(num) + (0 if d == 0 else d + _NONPOLY_BUMP)
    if k == "data":
        return _NONPOLY_BUMP
    # sin cos exp smax sstep
    return max(_degree(e.children[0]) + _NONPOLY_BUMP, _NONPOLY_BUMP)


def estimate_quadrature_degree(form) -> int:
    """Polynomial degree estimate of the integrand.

    Factor degrees add up; every non-polynomial node adds 2 to the degree of
    its argument, with a floor of 2.  A pinned ``Form.degree`` wins.
    """
    if isinstance(form, Form):
        return form.degree if form.degree is not None else _degree(form.integrand)
    return _degree(form)


def has_nonpolynomial(form) -> bool:
    e = form.integrand if isinstance(form, Form) else form
    for n in _walk(e):
        if n.kind in ("sin", "cos", "exp", "smax", "sstep", "data"):
            return True
        if n.kind == "quot" and _degree(n.children[1]) > 0:
            return True
    return False


# -- text serialisation --------------------------------------------------------------

def _space_label(space) -> str:
    if space is None:
        return "R"
    return getattr(space, "label", str(space))


def _fmt(x: float) -> str:
    return repr(float(x))


def to_sexpr(obj) -> str:
    """Canonical one-line s-expression of a Form or Expr."""
    if isinstance(obj, Form):
        return f"(form dx {to_sexpr(obj.integrand)})"
    e = obj
    k = e.kind
    if k == "const":
        if e.rank == 0:
            return f"(const {_fmt(e.data)})"
        return f"(vconst {_fmt(e.data[0])} {_fmt(e.data[1])})"
    if k == "coord":
        return f"(coord {e.data})"
    if k in ("test", "trial"):
        return f"({k} {_space_label(e.data)})"
    if k == "coef":
        return f"(coef {e.data[0]} {_space_label(e.data[1])})"
    if k == "data":
        return f"(data {e.data[0]})"
    if k == "pow":
        return f"(pow {to_sexpr(e.children[0])} {e.data})"
    if k in ("smax", "sstep"):
        return f"({k} {_fmt(e.data)} {to_sexpr(e.children[0])})"
    return "(" + " ".join([k] + [to_sexpr(c) for c in e.children]) + ")"
