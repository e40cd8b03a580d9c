"""Independent reference computations used by the tests.

None of these share control flow with the library routine they check: the
monolithic gradient solves one dense block system instead of sweeping
record by record, and the checkpoint oracle searches schedules directly.
"""
from collections import deque
from functools import lru_cache

import numpy as np

from adjopt.fem import assemble
from adjopt.forms import coefficients, derive_gateaux
from adjopt.tape import INITIAL, VarId


def _dense(M):
    return M.toarray() if hasattr(M, "toarray") else np.atleast_2d(np.asarray(M))


def monolithic_gradient(tape, J, control_id):
    """dJ/dm from the transpose of the full block Jacobian of all records.

    Dirichlet rows of every residual are replaced by ``u_i - g_i``, so the
    Jacobian gets identity rows there and zero rows in every other block.
    """
    states = tape.ensure_trajectory()
    grid = tape.timegrid()
    spec = tape.controls[control_id]
    offsets, n = {}, 0
    for rec in tape.records:
        offsets[rec.unknown] = n
        n += rec.space.dim
    K = np.zeros((n, n))
    B = np.zeros((n, spec.dim))
    for rec in tape.records:
        r0 = offsets[rec.unknown]
        rows = slice(r0, r0 + rec.space.dim)
        binds = tape.bindings_for(rec, states)
        binds[rec.unknown_name] = states[rec.unknown]
        bc = np.concatenate([c.dofs for c in rec.conditions]) if rec.conditions else []
        deps = list(rec.sources.items()) + [(rec.unknown_name, rec.unknown)]
        for name, src in deps:
            if isinstance(src, VarId):
                space = states[src].space
            elif src[0] == "control" and src[1] == control_id:
                space = spec.space
            else:
                continue
            D = _dense(assemble(derive_gateaux(rec.residual, name, space), binds))
            D[bc, :] = 0.0
            if isinstance(src, VarId) and src == rec.unknown:
                D[bc, bc] = 1.0
            if isinstance(src, VarId) and src in offsets:
                c0 = offsets[src]
                K[rows, c0:c0 + space.dim] += D
            elif isinstance(src, VarId):
                if spec.kind == INITIAL and spec.target == src:
                    B[rows] += D
            else:
                B[rows] += D

    resolver = tape.functional_resolver(states)
    dJdU = np.zeros(n)
    dJdm = np.zeros(spec.dim)
    names = J.names()
    for level, _ in grid:
        for var, r0 in offsets.items():
            if var.level == level and var.name in names:
                space = states[var].space
                form = J.derivative(var.name, level, grid, space)
                dJdU[r0:r0 + space.dim] += assemble(
                    form, resolver(level, set(coefficients(form))), mesh=tape.mesh)
        if spec.kind != INITIAL and control_id in names:
            form = J.derivative(control_id, level, grid, spec.space)
            dJdm += assemble(form, resolver(level, set(coefficients(form))), mesh=tape.mesh)
    if spec.kind == INITIAL and spec.target.name in names:
        var = spec.target
        form = J.derivative(var.name, var.level, grid, spec.space)
        dJdm += assemble(form, resolver(var.level, set(coefficients(form))), mesh=tape.mesh)
    lam = np.linalg.solve(K.T, dJdU)
    return dJdm - B.T @ lam


def finite_difference_gradient(rf, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (rf(x + e) - rf(x - e)) / (2 * h)
    rf(x)
    return g


def brute_force_re_advances(n, s):
    """Fewest re-advances for an n-step adjoint with s snapshot slots.

    Zero-one BFS over (next adjoint step, two-state buffer, stored steps):
    advancing costs one, storing, restoring, discarding and running an
    adjoint (when both states it needs are available) are free.  State 0
    is always available.  Returns total advances minus n.
    """
    def canon(k, cur, prev, slots):
        slots = frozenset(x for x in slots if x <= k and x != 0)
        cur = None if cur is not None and cur > k else cur
        prev = None if prev is not None and prev > k else prev
        while k >= 1:
            have = {0} | slots | {x for x in (cur, prev) if x is not None}
            if k not in have or k - 1 not in have:
                break
            k -= 1
            slots = frozenset(x for x in slots if x <= k)
            cur = None if cur is not None and cur > k else cur
            prev = None if prev is not None and prev > k else prev
        return k, cur, prev, slots

    start = canon(n, 0, None, frozenset())
    dist = {start: 0}
    queue = deque([start])
    while queue:
        st = queue.popleft()
        d = dist[st]
        k, cur, prev, slots = st
        if k == 0:
            return d - n
        moves = []
        if cur is not None and cur < k:
            moves.append((1, canon(k, cur + 1, cur, slots)))
        for x in (cur, prev):
            if x is not None and x != 0 and x not in slots and len(slots) < s:
                moves.append((0, canon(k, cur, prev, slots | {x})))
        for x in slots | {0}:
            moves.append((0, canon(k, x, None, slots)))
        for x in slots:
            moves.append((0, canon(k, cur, prev, slots - {x})))
        for cost, nxt in moves:
            nd = d + cost
            if nxt not in dist or nd < dist[nxt]:
                dist[nxt] = nd
                (queue.appendleft if cost == 0 else queue.append)(nxt)
    raise AssertionError("no schedule found")


@lru_cache(None)
def re_advance_table():
    """Brute-force minima for steps 1..20 and 1..5 slots, computed once offline.

    Produced by :func:`brute_force_re_advances`; the largest cases take
    minutes, so the values are stored here and spot-checked live in tests.
    """
    rows = {
        1: [0, 0, 0, 1, 2, 4, 6, 8, 11, 14, 17, 21, 25, 29, 33, 37, 42, 47, 52, 57],
        2: [0, 0, 0, 0, 1, 2, 3, 4, 5, 7, 9, 11, 13, 15, 17, 19, 21, 24, 27, 30],
        3: [0, 0, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 11, 13, 15, 17, 19, 21],
        4: [0, 0, 0, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14],
        5: [0, 0, 0, 0, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13],
    }
    return {(n, s): rows[s][n - 1] for s in rows for n in range(1, 21)}


def quadrature_norm(f, n_sub=512, a=-1.0, b=1.0):
    """Midpoint-rule integral of f over [a, b]^2 on an n_sub^2 grid."""
    h = (b - a) / n_sub
    c = a + h * (np.arange(n_sub) + 0.5)
    X, Y = np.meshgrid(c, c)
    return float(np.sum(f(X, Y)) * h * h)
