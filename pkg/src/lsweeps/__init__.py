"""L-sweeps preconditioner for the PML-truncated 2D Helmholtz equation."""
from .cdd import CDDLayout, WindowSet, build_cdd, build_windows
from .discretization import (
    Grid2D,
    PmlSpec,
    SlownessModel,
    Stencil,
    assemble_helmholtz,
    extend_slowness,
    global_stencil,
    pml_points,
)
from .experiments import (
    ExperimentConfig,
    build_problem,
    compare_against_oracle,
    run_experiment,
    solve_problem,
)
from .krylov import SolveReport, gmres
from .models import generate_model, standard_sources
from .runtime import Runtime, build_schedule, check_schedule
from .sparse_direct import Factorization, FactorizationCache, SingularMatrixError, factorize, solve
from .sweeps import LSweepsPreconditioner, apply_preconditioner, compute_scenario3

__all__ = [
    "CDDLayout", "WindowSet", "build_cdd", "build_windows",
    "Grid2D", "PmlSpec", "SlownessModel", "Stencil", "assemble_helmholtz",
    "extend_slowness", "global_stencil", "pml_points",
    "ExperimentConfig", "build_problem", "compare_against_oracle", "run_experiment",
    "solve_problem", "SolveReport", "gmres", "generate_model", "standard_sources",
    "Runtime", "build_schedule", "check_schedule",
    "Factorization", "FactorizationCache", "SingularMatrixError", "factorize", "solve",
    "LSweepsPreconditioner", "apply_preconditioner", "compute_scenario3",
]
