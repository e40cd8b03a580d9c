"""Discrete function spaces, fields and Dirichlet conditions."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mesh import TriMesh

P1_CG = "P1_CG"
P0_DG = "P0_DG"
REAL = "R"

_LABELS = {P1_CG: "P1", P0_DG: "P0", REAL: "R"}
_DEGREES = {P1_CG: 1, P0_DG: 0, REAL: 0}


class FunctionSpace:
    """Continuous P1, discontinuous P0, or the one-dof space of constants."""

    def __init__(self, mesh: TriMesh, family: str):
        family = {"P1": P1_CG, "P0": P0_DG, "CG1": P1_CG, "DG0": P0_DG}.get(family, family)
        if family not in _LABELS:
            raise ValueError(f"unknown element family {family!r}")
        self.mesh = mesh
        self.family = family
        self.degree = _DEGREES[family]
        self.label = _LABELS[family]
        nc = mesh.num_cells
        if family == P1_CG:
            self.dim = mesh.num_vertices
            self.cell_dofs = mesh.cells
        elif family == P0_DG:
            self.dim = nc
            self.cell_dofs = np.arange(nc, dtype=np.int64)[:, None]
        else:
            self.dim = 1
            self.cell_dofs = np.zeros((nc, 1), dtype=np.int64)

    def __repr__(self):
        return f"FunctionSpace({self.label}, dim={self.dim})"

    def compatible(self, other: "FunctionSpace") -> bool:
        return (other is self) or (other.family == self.family and other.mesh is self.mesh)

    def dof_coordinates(self) -> np.ndarray:
        if self.family == P1_CG:
            return self.mesh.vertices
        if self.family == P0_DG:
            return self.mesh.centroids()
        return np.zeros((1, 2))

    def boundary_dofs(self) -> np.ndarray:
        if self.family != P1_CG:
            return np.zeros(0, dtype=np.int64)
        return np.flatnonzero(self.mesh.boundary)

    def interpolate(self, func) -> "FieldFunction":
        """Nodal interpolation (cell centroid values for P0)."""
        xy = self.dof_coordinates()
        return FieldFunction(self, np.asarray(func(xy[:, 0], xy[:, 1]), dtype=float)
                             * np.ones(self.dim))


class FieldFunction:
    """A coefficient vector on a FunctionSpace."""

    def __init__(self, space: FunctionSpace, values=None):
        self.space = space
        if values is None:
            values = np.zeros(space.dim)
        values = np.array(values, dtype=float).reshape(-1)
        if values.shape != (space.dim,):
            raise ValueError(f"expected {space.dim} values for {space.label}, got {values.size}")
        self.vector = values

    def copy(self) -> "FieldFunction":
        return FieldFunction(self.space, self.vector.copy())

    def __repr__(self):
        return f"FieldFunction({self.space.label}, dim={self.space.dim})"

    def __call__(self, x: float, y: float) -> float:
        """Point evaluation by the local basis expansion (slow; for checks)."""
        mesh = self.space.mesh
        origin, _, _, inv = mesh.geometry()
        xi = np.einsum("cij,cj->ci", inv, np.array([x, y]) - origin)
        bary = np.column_stack([1 - xi.sum(axis=1), xi])
        inside = np.flatnonzero((bary >= -1e-12).all(axis=1))
        if inside.size == 0:
            raise ValueError(f"point ({x}, {y}) outside the mesh")
        c = inside[0]
        dofs = self.space.cell_dofs[c]
        if self.space.family == P1_CG:
            return float(bary[c] @ self.vector[dofs])
        return float(self.vector[dofs[0]])


@dataclass
class DirichletCondition:
    """Prescribed values on a subset of boundary dofs."""

    space: FunctionSpace
    dofs: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.dofs = np.asarray(self.dofs, dtype=np.int64).reshape(-1)
        self.values = np.broadcast_to(np.asarray(self.values, dtype=float),
                                      self.dofs.shape).copy()
        bdofs = self.space.boundary_dofs()
        if not np.isin(self.dofs, bdofs).all():
            raise ValueError("Dirichlet dofs must lie on the boundary")

    @classmethod
    def on_boundary(cls, space: FunctionSpace, value: float = 0.0) -> "DirichletCondition":
        dofs = space.boundary_dofs()
        return cls(space, dofs, np.full(dofs.shape, float(value)))

    def homogenized(self) -> "DirichletCondition":
        return DirichletCondition(self.space, self.dofs, np.zeros_like(self.values))


# -- field dumps ----------------------------------------------------------------

def write_field(path, f: FieldFunction) -> None:
    """Write ``npoints ncells family degree`` then ``x y value`` per dof."""
    space = f.space
    xy = space.dof_coordinates()
    lines = [f"{space.dim} {space.mesh.num_cells} {space.family} {space.degree}"]
    lines += [f"{x!r} {y!r} {v!r}" for (x, y), v in zip(xy.tolist(), f.vector.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def read_field(path):
    """Parse a field dump into ``(header, xy, values)``."""
    with open(path) as fh:
        npts, ncells, family, degree = fh.readline().split()
        data = np.loadtxt(fh, ndmin=2)
    if len(data) != int(npts):
        raise ValueError(f"{path}: header promises {npts} dofs, found {len(data)}")
    header = {"npoints": int(npts), "ncells": int(ncells), "family": family,
              "degree": int(degree)}
    return header, data[:, :2], data[:, 2]
