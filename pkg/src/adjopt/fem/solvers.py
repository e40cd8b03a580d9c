"""Dirichlet elimination, sparse direct solves and Newton's method."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..forms import Form, derive_gateaux
from .assembly import assemble
from .space import FieldFunction

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Base class for failed solves."""


class LinearSolveError(SolverError):
    pass


class NewtonError(SolverError):
    pass


def _bc_arrays(conditions, n):
    dofs, vals = [], []
    for bc in conditions or ():
        dofs.append(bc.dofs)
        vals.append(bc.values)
    if not dofs:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    dofs, vals = np.concatenate(dofs), np.concatenate(vals)
    if dofs.size and (dofs.min() < 0 or dofs.max() >= n):
        raise ValueError("Dirichlet dof out of range")
    return dofs, vals


def apply_dirichlet(matrix, rhs, conditions):
    """Symmetric elimination of prescribed dofs.

    Constrained rows and columns are zeroed with a unit diagonal; the right
    hand side is lifted so the solution takes the prescribed values exactly.
    Returns new ``(matrix, rhs)``; inputs are not modified.
    """
    A = sp.csr_matrix(matrix)
    n = A.shape[0]
    if A.shape[1] != n:
        raise ValueError("Dirichlet elimination needs a square matrix")
    b = np.array(rhs, dtype=float) if rhs is not None else None
    dofs, vals = _bc_arrays(conditions, n)
    if dofs.size == 0:
        return A.copy(), b
    g = np.zeros(n)
    g[dofs] = vals
    keep = np.ones(n)
    keep[dofs] = 0.0
    if b is not None:
        b = b - A @ g
        b[dofs] = vals
    P = sp.diags(keep)
    D = sp.diags(1.0 - keep)
    A = (P @ A @ P + D).tocsr()
    A.eliminate_zeros()
    return A, b


def zero_rows(vector, conditions):
    dofs, _ = _bc_arrays(conditions, len(vector))
    out = np.array(vector, dtype=float)
    out[dofs] = 0.0
    return out


class LinearSolver:
    """Sparse LU factorisation of one matrix, reusable for transposed solves."""

    def __init__(self, matrix):
        A = sp.csc_matrix(matrix)
        if A.shape[0] != A.shape[1]:
            raise LinearSolveError(f"matrix is not square: {A.shape}")
        self.shape = A.shape
        self.matrix = A
        try:
            self.lu = spla.splu(A)
        except RuntimeError as exc:
            raise LinearSolveError(f"singular matrix ({exc}){_pivot_hint(A)}") from None

    def solve(self, rhs, transpose: bool = False):
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape != (self.shape[0],):
            raise LinearSolveError(f"rhs has shape {rhs.shape}, matrix {self.shape}")
        x = self.lu.solve(rhs, trans="T" if transpose else "N")
        if not np.all(np.isfinite(x)):
            raise LinearSolveError(f"non-finite solution{_pivot_hint(self.matrix)}")
        return x


def _pivot_hint(A):
    A = sp.csr_matrix(A)
    empty = np.flatnonzero(np.diff(A.indptr) == 0)
    if empty.size:
        return f"; zero pivot at row {empty[0]}"
    Ac = sp.csc_matrix(A)
    empty = np.flatnonzero(np.diff(Ac.indptr) == 0)
    if empty.size:
        return f"; zero pivot at column {empty[0]}"
    return ""


def solve_linear(matrix, rhs):
    """Direct sparse solve of ``matrix @ x = rhs``."""
    return LinearSolver(matrix).solve(rhs)


@dataclass(frozen=True)
class NewtonTolerances:
    atol: float = 1e-10
    rtol: float = 1e-9
    max_iter: int = 50
    max_backtracks: int = 10


@dataclass
class NewtonResult:
    solution: FieldFunction
    iterations: int
    residual_norms: list


def solve_newton(residual: Form, unknown: FieldFunction, name: str,
                 conditions=(), coefficients: dict | None = None,
                 tolerances: NewtonTolerances = NewtonTolerances()) -> NewtonResult:
    """Solve ``residual(u; v) = 0`` for ``u`` starting from ``unknown``.

    ``name`` is the coefficient name of the unknown in ``residual``.  At least
    one Newton step is always taken, so an affine residual reports exactly one
    iteration.  Steps are halved while they fail to reduce the residual norm.
    """
    jac_form = derive_gateaux(residual, name, unknown.space)
    u = unknown.copy()
    dofs, vals = _bc_arrays(conditions, u.space.dim)
    u.vector[dofs] = vals
    homog = [bc.homogenized() for bc in conditions or ()]
    binds = dict(coefficients or {})

    def res(vec):
        binds[name] = FieldFunction(u.space, vec)
        r = assemble(residual, binds)
        r[dofs] = 0.0
        return r

    r = res(u.vector)
    norms = [float(np.linalg.norm(r))]
    r0 = norms[0]
    for it in range(1, tolerances.max_iter + 1):
        binds[name] = FieldFunction(u.space, u.vector)
        J = assemble(jac_form, binds)
        J, rhs = apply_dirichlet(J, -r, homog)
        du = LinearSolver(J).solve(rhs)
        step = 1.0
        for _ in range(tolerances.max_backtracks):
            trial = u.vector + step * du
            r_new = res(trial)
            n_new = float(np.linalg.norm(r_new))
            if np.isfinite(n_new) and (n_new < norms[-1] or n_new <= tolerances.atol):
                break
            step *= 0.5
        else:
            trial = u.vector + step * du
            r_new = res(trial)
            n_new = float(np.linalg.norm(r_new))
        u.vector = trial
        r = r_new
        norms.append(n_new)
        log.debug("newton %d: |r| = %.3e (step %.3g)", it, n_new, step)
        if not np.isfinite(n_new):
            raise NewtonError(f"residual became non-finite at iteration {it}")
        if n_new <= tolerances.atol or n_new <= tolerances.rtol * r0:
            return NewtonResult(u, it, norms)
    raise NewtonError(f"no convergence after {tolerances.max_iter} iterations "
                      f"(|r| = {norms[-1]:.3e}, initial {r0:.3e})")
