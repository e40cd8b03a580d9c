"""Structured triangulations of rectangles."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(eq=False)
class TriMesh:
    """Triangle mesh with counter-clockwise cells.

    Vertices are numbered row-major (x fastest).
    """

    vertices: np.ndarray          # (nv, 2)
    cells: np.ndarray             # (nc, 3) vertex ids, counter-clockwise
    boundary: np.ndarray          # (nv,) bool
    h: float = float("nan")
    _geometry: dict = field(default_factory=dict, repr=False)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    def geometry(self):
        """Per-cell Jacobian data: ``(origin, jac, det, inv)``.

        ``jac[c]`` maps reference coordinates to physical ones,
        ``x = origin[c] + jac[c] @ xi``.
        """
        if not self._geometry:
            p = self.vertices[self.cells]                  # (nc, 3, 2)
            origin = p[:, 0, :]
            jac = np.stack([p[:, 1, :] - origin, p[:, 2, :] - origin], axis=2)
            det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
            inv = np.empty_like(jac)
            inv[:, 0, 0] = jac[:, 1, 1] / det
            inv[:, 1, 1] = jac[:, 0, 0] / det
            inv[:, 0, 1] = -jac[:, 0, 1] / det
            inv[:, 1, 0] = -jac[:, 1, 0] / det
            self._geometry.update(origin=origin, jac=jac, det=det, inv=inv)
        g = self._geometry
        return g["origin"], g["jac"], g["det"], g["inv"]

    def cell_areas(self) -> np.ndarray:
        return 0.5 * self.geometry()[2]

    def centroids(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)


def rectangle_mesh(n: int, x0: float = 0.0, x1: float = 1.0,
                   y0: float = 0.0, y1: float = 1.0, diagonal: str = "right") -> TriMesh:
    """``2 n**2`` triangles on ``[x0, x1] x [y0, y1]``.

    ``diagonal="right"`` splits every grid square along its lower-left to
    upper-right diagonal.  ``"alternating"`` flips the diagonal on every other
    square (a union-jack pattern), so vertices with even ``i + j`` see a
    patch that is symmetric under reflection in both axes.
    """
    if diagonal not in ("right", "alternating"):
        raise ValueError(f"unknown diagonal pattern {diagonal!r}")
    if int(n) != n or n < 1:
        raise ValueError(f"need at least one cell per side, got n={n}")
    n = int(n)
    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    X, Y = np.meshgrid(xs, ys)                         # row-major: x fastest
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i, j = i.ravel(), j.ravel()
    v00 = j * (n + 1) + i
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    if diagonal == "alternating":
        flip = (i + j) % 2 == 1
        lower[flip] = np.column_stack([v00, v10, v01])[flip]
        upper[flip] = np.column_stack([v10, v11, v01])[flip]
    cells = np.empty((2 * n * n, 3), dtype=np.int64)
    cells[0::2] = lower
    cells[1::2] = upper

    ii = np.arange(n + 1)
    I, J = np.meshgrid(ii, ii)
    boundary = ((I == 0) | (I == n) | (J == 0) | (J == n)).ravel()
    h = max((x1 - x0) / n, (y1 - y0) / n)
    return TriMesh(vertices, cells, boundary, h=h)


def unit_square_mesh(n: int) -> TriMesh:
    return rectangle_mesh(n, 0.0, 1.0, 0.0, 1.0)
