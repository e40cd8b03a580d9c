from .assembly import assemble, mass_matrix, quadrature_degree
from .mesh import TriMesh, rectangle_mesh, unit_square_mesh
from .quadrature import gauss_triangle
from .solvers import (LinearSolveError, LinearSolver, NewtonError, NewtonResult,
                      NewtonTolerances, SolverError, apply_dirichlet, solve_linear,
                      solve_newton)
from .space import (P0_DG, P1_CG, REAL, DirichletCondition, FieldFunction,
                    FunctionSpace, read_field, write_field)

__all__ = [
    "assemble", "mass_matrix", "quadrature_degree", "TriMesh", "rectangle_mesh",
    "unit_square_mesh", "gauss_triangle", "LinearSolveError", "LinearSolver",
    "NewtonError", "NewtonResult", "NewtonTolerances", "SolverError",
    "apply_dirichlet", "solve_linear", "solve_newton", "P0_DG", "P1_CG", "REAL",
    "DirichletCondition", "FieldFunction", "FunctionSpace", "read_field",
    "write_field",
]
