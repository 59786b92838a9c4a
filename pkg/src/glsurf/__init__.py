"""Ginzburg-Landau surface/bulk energy toolkit.

Gauge-covariant discretization of the two-dimensional Ginzburg-Landau
functional near the second critical field, the half-strip problem defining
the surface energy constant E1, the flux-quantized cell problem defining the
Abrikosov constant E2, and a verification harness for the energy expansion,
the quartic identity, and the bulk sup-norm scaling.
"""

__version__ = "0.1.0"

from .geometry import DomainSpec, Grid, BoundaryChart, build_grid, boundary_chart, build_F
from .fields import (
    GLParams,
    ComplexField,
    GaugeField,
    covariant_gradient,
    gauge_transform,
    lll_project,
)
from .functional import energy, energy_density, gradient, residual_report, GLProblem
from .minimizer import SolverConfig, ConvergenceReport, minimize, default_init
from .surface_energy import solve_halfstrip, estimate_E1, boundary_trial, SurfaceResult
from .bulk_energy import (
    MagneticCell,
    LLLBasis,
    AbrikosovResult,
    build_PR,
    lowest_eigenspace,
    minimize_abrikosov,
    estimate_E2_lll,
    estimate_E2_thermo,
    gap_filter_check,
    bulk_trial,
)
from .harness import (
    ExperimentPlan,
    ResolutionPolicy,
    RunRecord,
    run_expansion_experiment,
    run_quartic_identity,
    run_linfty_scaling,
    run_curl_smallness,
    persist,
    load_manifest,
    load_records,
)

__all__ = [
    "DomainSpec", "Grid", "BoundaryChart", "build_grid", "boundary_chart", "build_F",
    "GLParams", "ComplexField", "GaugeField", "covariant_gradient", "gauge_transform",
    "lll_project", "energy", "energy_density", "gradient", "residual_report",
    "GLProblem", "SolverConfig", "ConvergenceReport", "minimize", "default_init",
    "solve_halfstrip", "estimate_E1", "boundary_trial", "SurfaceResult",
    "MagneticCell", "LLLBasis", "AbrikosovResult", "build_PR", "lowest_eigenspace",
    "minimize_abrikosov", "estimate_E2_lll", "estimate_E2_thermo", "gap_filter_check",
    "bulk_trial", "ExperimentPlan", "ResolutionPolicy", "RunRecord",
    "run_expansion_experiment", "run_quartic_identity", "run_linfty_scaling",
    "run_curl_smallness", "persist", "load_manifest", "load_records",
]
