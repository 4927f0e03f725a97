"""Pseudo-spectral mild-formulation Navier-Stokes on the unit torus, with numerical checks of its estimates."""

from .diagnostics import (
    StabilityReport,
    beta_quadrature,
    kappa,
    smoothing_functional,
    stability_experiment,
    volterra_check,
)
from .lorentz import RearrangementProfile, decreasing_rearrangement, embedding_ratio_check, lorentz_norm, product_l1_check
from .oseen import OseenKernel, apply_oseen, assemble_oseen_kernel, estimate_kernel_constant, kernel_norm_profile
from .solver import SolverConfig, Trajectory, evolve, random_divfree, restart_consistency, step, taylor_green
from .spectral import (
    CONVENTION,
    PhysicalTensorField,
    PhysicalVectorField,
    SpectralVectorField,
    TorusGrid,
    heat_semigroup,
    leray_project,
    to_physical,
    to_spectral,
    torus_grid,
)

__version__ = "0.1.0"

__all__ = [
    "CONVENTION",
    "OseenKernel",
    "PhysicalTensorField",
    "PhysicalVectorField",
    "RearrangementProfile",
    "SolverConfig",
    "SpectralVectorField",
    "StabilityReport",
    "TorusGrid",
    "Trajectory",
    "apply_oseen",
    "assemble_oseen_kernel",
    "beta_quadrature",
    "decreasing_rearrangement",
    "embedding_ratio_check",
    "estimate_kernel_constant",
    "evolve",
    "heat_semigroup",
    "kappa",
    "kernel_norm_profile",
    "leray_project",
    "lorentz_norm",
    "product_l1_check",
    "random_divfree",
    "restart_consistency",
    "smoothing_functional",
    "stability_experiment",
    "step",
    "taylor_green",
    "to_physical",
    "to_spectral",
    "torus_grid",
    "volterra_check",
]
