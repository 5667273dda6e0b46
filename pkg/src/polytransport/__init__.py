"""Polydisperse impurity transport: asymptotic construction and direct solver."""
from __future__ import annotations

from .assembly import (
    CompositeSolution,
    ErrorTable,
    asymptotic_solution,
    compare_fields,
    compose_asymptotic,
    convergence_study,
    generalized_mass,
    residual_of,
)
from .coefficients import EffectiveCoefficients, Profiles, effective_coefficients
from .errors import (
    Condition1Error,
    Condition2Violated,
    ConfigError,
    NumericalFailure,
    PolyTransportError,
)
from .full_solver import FullTrajectory, solve_full
from .grids import SpatialGrid
from .problem import REFERENCE_CONFIG, Problem, build_problem, reference_config
from .reduced_solver import ReducedTrajectory, solve_phi0
from .size_space import (
    ParticleGrid,
    SizeOperator,
    Spectrum,
    build_conservative_operator,
    inner_product,
    project_onto_modes,
    spectral_decompose,
)
from .transport import StepControl

__version__ = "0.1.0"

__all__ = [
    "CompositeSolution",
    "Condition1Error",
    "Condition2Violated",
    "ConfigError",
    "EffectiveCoefficients",
    "ErrorTable",
    "FullTrajectory",
    "NumericalFailure",
    "ParticleGrid",
    "PolyTransportError",
    "Problem",
    "Profiles",
    "REFERENCE_CONFIG",
    "ReducedTrajectory",
    "SizeOperator",
    "SpatialGrid",
    "Spectrum",
    "StepControl",
    "asymptotic_solution",
    "build_conservative_operator",
    "build_problem",
    "compare_fields",
    "compose_asymptotic",
    "convergence_study",
    "effective_coefficients",
    "generalized_mass",
    "inner_product",
    "project_onto_modes",
    "reference_config",
    "residual_of",
    "solve_full",
    "solve_phi0",
    "spectral_decompose",
]
