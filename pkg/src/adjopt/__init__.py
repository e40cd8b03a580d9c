"""Tape-based discrete adjoints and bound-constrained optimisation for small
finite element problems on triangulated rectangles."""
from .adjoint import (CostRatio, TaylorResult, adjoint_cost_ratio, compute_adjoint,
                      compute_gradient, taylor_test)
from .checkpointing import (CheckpointPlan, PlanError, adjoint_with_checkpoints,
                            minimal_advances, plan_multistage, simulate)
from .fem import (DirichletCondition, FieldFunction, FunctionSpace, NewtonTolerances,
                  assemble, rectangle_mesh)
from .forms import (Coefficient, Constant, PointwiseData, TestFunction, TrialFunction,
                    action, adjoint_form, derive_gateaux, dx, grad, inner, smooth_max0,
                    to_sexpr)
from .functional import FINISH_TIME, START_TIME, TimeFunctional, dt
from .optimize import (Bounds, ReducedFunctional, TerminationSpec, maximize, minimize)
from .tape import FIELD, INITIAL, SCALAR, Tape, VarId

__all__ = [
    "CostRatio", "TaylorResult", "adjoint_cost_ratio", "compute_adjoint", "compute_gradient",
    "taylor_test", "CheckpointPlan", "PlanError", "adjoint_with_checkpoints",
    "minimal_advances", "plan_multistage", "simulate", "DirichletCondition", "FieldFunction",
    "FunctionSpace", "NewtonTolerances", "assemble", "rectangle_mesh", "Coefficient",
    "Constant", "PointwiseData", "TestFunction", "TrialFunction", "action", "adjoint_form",
    "derive_gateaux", "dx", "grad", "inner", "smooth_max0", "to_sexpr", "FINISH_TIME",
    "START_TIME", "TimeFunctional", "dt", "Bounds", "ReducedFunctional", "TerminationSpec",
    "maximize", "minimize", "FIELD", "INITIAL", "SCALAR", "Tape", "VarId",
]
