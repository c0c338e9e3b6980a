"""Source-term reconstruction for unsteady penalized Stokes flow."""

from .fem import (
    AssembledOperators,
    SolverConfig,
    SolverError,
    TimeSeries,
    adjoint_solve,
    adjoint_source_integral,
    assemble,
    assemble_load,
    forward_solve,
    march_forward,
)
from .mesh import DEFAULT_DOMAIN, DEFAULT_OMEGA, DofMap, Mesh, build_rect_mesh, tag_omega
from .data import (
    NoiseModel,
    PortableUniform,
    SourceSpec,
    initial_guess,
    interpolate_on_support,
    load_observations,
    make_observations,
    save_observations,
    true_source,
)
from .inverse import (
    ReconstructionDiverged,
    ReconstructionState,
    cost,
    gradient,
    minimize_cost_cg,
    reconstruct,
    relative_error,
    support_dofs,
)
from .oracles import (
    convergence_study,
    counterexample_general,
    counterexample_report,
    counterexample_separated,
    heat_kernel_fem_check,
    heat_kernel_solution,
)
from .validate import run_validation_suite

__all__ = [
    "AssembledOperators",
    "DEFAULT_DOMAIN",
    "DEFAULT_OMEGA",
    "DofMap",
    "Mesh",
    "NoiseModel",
    "PortableUniform",
    "ReconstructionDiverged",
    "ReconstructionState",
    "SolverConfig",
    "SolverError",
    "SourceSpec",
    "TimeSeries",
    "adjoint_solve",
    "adjoint_source_integral",
    "assemble",
    "assemble_load",
    "build_rect_mesh",
    "convergence_study",
    "cost",
    "counterexample_general",
    "counterexample_report",
    "counterexample_separated",
    "forward_solve",
    "gradient",
    "heat_kernel_fem_check",
    "heat_kernel_solution",
    "initial_guess",
    "interpolate_on_support",
    "load_observations",
    "make_observations",
    "march_forward",
    "minimize_cost_cg",
    "reconstruct",
    "relative_error",
    "run_validation_suite",
    "save_observations",
    "support_dofs",
    "tag_omega",
    "true_source",
]

__version__ = "0.1.0"
