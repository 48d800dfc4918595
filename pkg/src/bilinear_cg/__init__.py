"""Bilinear (velocity) optimal control of advection-reaction-diffusion.

The control enters the state equation through the advection term
``v . grad y``. The discrete problem is solved by a nested conjugate
gradient method: an outer Fletcher-Reeves iteration on the control, and,
for divergence-free velocity fields, an inner preconditioned CG that
projects each gradient slice onto discretely divergence-free fields.
"""

from .fem import (
    FineOperators,
    SparseOperator,
    assemble_advection,
    assemble_coarse_laplacian,
    assemble_divergence_coupling,
    assemble_mass,
    assemble_stiffness,
)
from .linalg import Factorization, FactorizationError, factorize, solve
from .mesh import TwoLevelMesh, build_unit_square_mesh, interior_dof_map
from .optimizer import (
    ControlSpace,
    DegenerateDirection,
    RunConfig,
    RunReport,
    compute_gradient,
    compute_stepsize,
    evaluate_objective,
    run,
)
from .pde import (
    Discretization,
    InstabilityError,
    ProblemData,
    TimeGrid,
    solve_adjoint,
    solve_linearized,
    solve_state,
)
from .problems import Manufactured, error_norms, example1_data, example2_data
from .projection import (
    ProjectionNotConverged,
    ProjectionWorkspace,
    dense_saddle_oracle,
    project,
    project_many,
)

__version__ = "0.1.0"

__all__ = [
    "ControlSpace",
    "DegenerateDirection",
    "Discretization",
    "Factorization",
    "FactorizationError",
    "FineOperators",
    "InstabilityError",
    "Manufactured",
    "ProblemData",
    "ProjectionNotConverged",
    "ProjectionWorkspace",
    "RunConfig",
    "RunReport",
    "SparseOperator",
    "TimeGrid",
    "TwoLevelMesh",
    "assemble_advection",
    "assemble_coarse_laplacian",
    "assemble_divergence_coupling",
    "assemble_mass",
    "assemble_stiffness",
    "build_unit_square_mesh",
    "compute_gradient",
    "compute_stepsize",
    "dense_saddle_oracle",
    "error_norms",
    "evaluate_objective",
    "example1_data",
    "example2_data",
    "factorize",
    "interior_dof_map",
    "project",
    "project_many",
    "run",
    "solve",
    "solve_adjoint",
    "solve_linearized",
    "solve_state",
]
