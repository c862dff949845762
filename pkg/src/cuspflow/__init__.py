"""Axisymmetric Navier-Stokes on staircase cusp domains, reduced variables.

The evolved unknowns are h = v_theta / r (pure Neumann data) and
Omega = omega_theta / r (Dirichlet-zero data); the meridional velocity
b = (v_r, v_3) is recovered from Omega by two mixed elliptic solves.
"""

__version__ = "0.1.0"

from .domain import StaircaseDomain, Grid, build_domain, generate_grid, thinness_ratios
from .field import GridField, integrate, lp_norm, grad, laplacian_cyl
from .errors import (
    CuspflowError,
    ParameterError,
    UsageError,
    ResourceError,
    SolverError,
    StepSizeError,
    NumericError,
    ConfigError,
)

__all__ = [
    "StaircaseDomain",
    "Grid",
    "build_domain",
    "generate_grid",
    "thinness_ratios",
    "GridField",
    "integrate",
    "lp_norm",
    "grad",
    "laplacian_cyl",
    "CuspflowError",
    "ParameterError",
    "UsageError",
    "ResourceError",
    "SolverError",
    "StepSizeError",
    "NumericError",
    "ConfigError",
]
