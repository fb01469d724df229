"""Nonlinear Markov processes at desk scale: nonlinear FPKE solvers, DDSDE particle
systems with density feedback, and statistical checks of their structure."""

from .coefficients import CoefficientSet, Kind, diffusion_at, drift_at, registry_lookup
from .grid import Grid, GridDensity, MarginalFlow
from .initial import Dirac, FromDensity, Gaussian, Uniform
from .oracles import barenblatt, barenblatt_normalization, cole_hopf_burgers, heat_kernel
from .particles import (
    KdeSpec,
    ParticleEnsemble,
    PathStore,
    estimate_density,
    resample_from_marginal,
    simulate_ddsde,
    simulate_linearized_sde,
)
from .pde import (
    DominationReport,
    check_domination,
    perturb_initial,
    solve_linearized_fpke,
    solve_nlfpke,
)

__version__ = "0.1.0"

__all__ = [
    "CoefficientSet",
    "Dirac",
    "DominationReport",
    "FromDensity",
    "Gaussian",
    "Grid",
    "GridDensity",
    "KdeSpec",
    "Kind",
    "MarginalFlow",
    "ParticleEnsemble",
    "PathStore",
    "Uniform",
    "barenblatt",
    "barenblatt_normalization",
    "check_domination",
    "cole_hopf_burgers",
    "diffusion_at",
    "drift_at",
    "estimate_density",
    "heat_kernel",
    "perturb_initial",
    "registry_lookup",
    "resample_from_marginal",
    "simulate_ddsde",
    "simulate_linearized_sde",
    "solve_linearized_fpke",
    "solve_nlfpke",
]
