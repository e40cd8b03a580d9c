"""Interpretation of forms over quadrature points and global assembly."""
from __future__ import annotations

from numbers import Real

import numpy as np
import scipy.sparse as sp

from ..forms import (BILINEAR, FUNCTIONAL, Form, FormError, classify_arity,
                     estimate_quadrature_degree, has_nonpolynomial)
from .quadrature import AVAILABLE_DEGREES, gauss_triangle
from .space import P1_CG, FieldFunction, FunctionSpace

_REF_GRADS = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


def quadrature_degree(form: Form) -> int:
    """Degree used for ``form``: the estimate, capped at the largest rule when
    the integrand is not polynomial anyway."""
    est = estimate_quadrature_degree(form)
    top = AVAILABLE_DEGREES[-1]
    if form.degree is not None:
        return min(est, top)
    if est > top:
        if has_nonpolynomial(form):
            return top
        raise FormError(f"quadrature degree {est} unavailable (max {top})")
    return est


class _Basis:
    """Reference basis values and physical gradients of one space."""

    def __init__(self, space: FunctionSpace, pts: np.ndarray):
        self.space = space
        self.ndofs = space.cell_dofs.shape[1]
        if space.family == P1_CG:
            xi, eta = pts[:, 0], pts[:, 1]
            self.values = np.stack([1.0 - xi - eta, xi, eta])[:, None, :]   # (3, 1, nq)
            inv = space.mesh.geometry()[3]
            # grad phi_i = inv^T grad_ref phi_i -> (3, 2, nc, 1)
            g = np.einsum("cji,kj->kic", inv, _REF_GRADS)
            self.grads = g[..., None]
        else:
            self.values = np.ones((1, 1, 1))
            self.grads = np.zeros((1, 2, 1, 1))


class _Evaluator:
    def __init__(self, mesh, pts, bindings):
        self.mesh = mesh
        self.pts = pts
        self.bindings = bindings
        self.cache = {}
        self.deps = {}
        self.bases = {}
        origin, jac, _, _ = mesh.geometry()
        # physical quadrature points (2, nc, nq)
        self.X = (origin.T[:, :, None] + np.einsum("cij,qj->icq", jac, pts))
        self.args = {}

    def basis(self, space):
        b = self.bases.get(id(space))
        if b is None:
            b = self.bases[id(space)] = _Basis(space, self.pts)
        return b

    def coefficient(self, node, want_grad):
        name, space = node.data
        if name not in self.bindings:
            raise FormError(f"coefficient {name!r} is not bound")
        val = self.bindings[name]
        if isinstance(val, Real):
            if space is not None and space.dim != 1:
                raise FormError(f"coefficient {name!r} is a field but bound to a number")
            return np.zeros((2, 1, 1)) if want_grad else float(val)
        if not isinstance(val, FieldFunction):
            raise FormError(f"coefficient {name!r} bound to unsupported {type(val).__name__}")
        vspace = val.space
        if space is not None and not space.compatible(vspace):
            raise FormError(f"coefficient {name!r} bound to a {vspace.label} field, "
                            f"form expects {space.label}")
        b = self.basis(vspace)
        local = val.vector[vspace.cell_dofs]                  # (nc, k)
        if want_grad:
            return np.einsum("ck,kicq->icq", local, b.grads)  # (2, nc, 1)
        if vspace.family == P1_CG:
            return local @ b.values[:, 0, :]                  # (nc, nq)
        return local                                          # (nc, 1)

    def eval(self, e):
        if e.kind == "const" or self._depends_on_args(e):
            return self._eval(e)
        hit = self.cache.get(id(e))
        if hit is None:
            hit = self.cache[id(e)] = self._eval(e)
        return hit

    def _depends_on_args(self, e):
        hit = self.deps.get(id(e))
        if hit is None:
            hit = e.kind in ("test", "trial") or any(self._depends_on_args(c) for c in e.children)
            self.deps[id(e)] = hit
        return hit

    def _eval(self, e):
        k = e.kind
        if k == "const":
            return e.data if e.rank == 0 else np.array(e.data).reshape(2, 1, 1)
        if k == "coord":
            return self.X[e.data]
        if k in ("test", "trial"):
            return self.args[k][0]
        if k == "coef":
            return self.coefficient(e, False)
        if k == "grad":
            c = e.children[0]
            if c.kind in ("test", "trial"):
                return self.args[c.kind][1]
            return self.coefficient(c, True)
        if k == "data":
            return np.asarray(e.data[1](self.X[0], self.X[1]), dtype=float)
        vals = [self.eval(c) for c in e.children]
        if k == "sum":
            out = vals[0]
            for v in vals[1:]:
                out = out + v
            return out
        if k == "diff":
            return vals[0] - vals[1]
        if k == "prod":
            return vals[0] * vals[1]
        if k == "quot":
            return vals[0] / vals[1]
        if k == "pow":
            return vals[0] ** e.data
        if k == "inner":
            return (vals[0] * vals[1]).sum(axis=0)
        if k == "sin":
            return np.sin(vals[0])
        if k == "cos":
            return np.cos(vals[0])
        if k == "exp":
            return np.exp(vals[0])
        if k == "smax":
            a = vals[0]
            return 0.5 * (np.sqrt(a * a + e.data ** 2) + a)
        if k == "sstep":
            a = vals[0]
            return 0.5 * (a / np.sqrt(a * a + e.data ** 2) + 1.0)
        raise FormError(f"cannot evaluate {k!r} node")


def _mesh_of(form: Form, bindings):
    for s in (form.test_space, form.trial_space):
        if s is not None:
            return s.mesh
    for v in bindings.values():
        if isinstance(v, FieldFunction):
            return v.space.mesh
    from ..forms import coefficients
    for s in coefficients(form).values():
        if s is not None:
            return s.mesh
    raise FormError("cannot determine the mesh of a form without spaces; pass mesh=")


def _bind(bindings):
    out = {}
    for k, v in (bindings or {}).items():
        if isinstance(v, (np.ndarray, list, tuple)):
            raise FormError(f"bind {k!r} to a FieldFunction or a number, not a raw array")
        out[k] = v
    return out


def assemble(form: Form, bindings: dict | None = None, degree: int | None = None,
             mesh=None):
    """Assemble ``form`` into a sparse matrix, a vector or a float.

    Rows of a matrix follow the test space, columns the trial space.
    """
    bindings = _bind(bindings)
    arity = classify_arity(form)
    mesh = mesh if mesh is not None else _mesh_of(form, bindings)
    q = quadrature_degree(form) if degree is None else degree
    pts, wts = gauss_triangle(q)
    ev = _Evaluator(mesh, pts, bindings)
    scale = mesh.cell_areas()[:, None] * wts[None, :]       # (nc, nq)
    nc = mesh.num_cells

    def integrate(val):
        return (np.broadcast_to(val, (nc, len(wts))) * scale).sum(axis=1)

    if arity == FUNCTIONAL:
        return float(integrate(ev.eval(form.integrand)).sum())

    if arity == BILINEAR:
        Vt, Vu = form.test_space, form.trial_space
        bt, bu = ev.basis(Vt), ev.basis(Vu)
        local = np.empty((nc, bt.ndofs, bu.ndofs))
        for i in range(bt.ndofs):
            for j in range(bu.ndofs):
                ev.args = {"test": (bt.values[i], bt.grads[i]),
                           "trial": (bu.values[j], bu.grads[j])}
                local[:, i, j] = integrate(ev.eval(form.integrand))
        rows = np.repeat(Vt.cell_dofs, bu.ndofs, axis=1).ravel()
        cols = np.tile(Vu.cell_dofs, (1, bt.ndofs)).ravel()
        A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(Vt.dim, Vu.dim))
        return A.tocsr()

    # linear: whichever argument is present
    kind = "test" if form.test_space is not None else "trial"
    V = form.test_space if kind == "test" else form.trial_space
    b = ev.basis(V)
    local = np.empty((nc, b.ndofs))
    for i in range(b.ndofs):
        ev.args = {kind: (b.values[i], b.grads[i])}
        local[:, i] = integrate(ev.eval(form.integrand))
    return np.bincount(V.cell_dofs.ravel(), weights=local.ravel(), minlength=V.dim)


def mass_matrix(space: FunctionSpace):
    from ..forms import TestFunction, TrialFunction, dx
    return assemble(TrialFunction(space) * TestFunction(space) * dx)
