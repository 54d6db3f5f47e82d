"""Density and observable propagation for guard-reset stochastic hybrid systems.

A mass-conservative finite-volume solver (WENO5 upwind advection, central
diffusion, implicit Newton-Krylov or explicit SSP-RK3 stepping) for the
forward density equation on chart-described manifolds, its backward
observable counterpart, and an Euler-Maruyama particle oracle for
cross-validation.
"""

from ._kernels import NUMBA_ENABLED, backend_name
from .fields import DensityField, ObservableField, pairing
from .fv import DensityOperator, advective_face_flux, diffusive_face_flux, weno5_reconstruct
from .geometry import ChartGeometry, GridSpec, interval_geometry, torus_geometry
from .koopman import KoopmanOperator
from .model import (
    Absorbing,
    Face,
    Guard,
    HybridSystem,
    Identification,
    Mode,
    Reflecting,
    ResetImage,
    ResetMap,
    validate,
)
from .montecarlo import ParticleEnsemble, em_step, histogram_density, mc_koopman
from .scenarios import SCENARIO_NAMES, Scenario, builtin_scenario
from .stepping import (
    CFLError,
    SolverConfig,
    cfl_estimate,
    evolve_density,
    evolve_observable,
    step_explicit,
    step_implicit,
)
from .diagnostics import (
    RunReport,
    compare_fields,
    duality_residual,
    flux_balance_report,
    total_mass,
)

__version__ = "0.1.0"

__all__ = [
    "NUMBA_ENABLED",
    "backend_name",
    "DensityField",
    "ObservableField",
    "pairing",
    "DensityOperator",
    "KoopmanOperator",
    "advective_face_flux",
    "diffusive_face_flux",
    "weno5_reconstruct",
    "ChartGeometry",
    "GridSpec",
    "interval_geometry",
    "torus_geometry",
    "Absorbing",
    "Face",
    "Guard",
    "HybridSystem",
    "Identification",
    "Mode",
    "Reflecting",
    "ResetImage",
    "ResetMap",
    "validate",
    "ParticleEnsemble",
    "em_step",
    "histogram_density",
    "mc_koopman",
    "SCENARIO_NAMES",
    "Scenario",
    "builtin_scenario",
    "CFLError",
    "SolverConfig",
    "cfl_estimate",
    "evolve_density",
    "evolve_observable",
    "step_explicit",
    "step_implicit",
    "RunReport",
    "compare_fields",
    "duality_residual",
    "flux_balance_report",
    "total_mass",
]
