"""Fractional Pucci operators, convex envelopes, barriers and ABP experiments on lattices."""
from .constants import ConstantLedger, c0, calA, gamma
from .envelope import EnvelopeResult, compute_envelope, envelope_residuals
from .grid import Domain, Exterior, GridFunction, ln_norm, region_inf, sublevel_measure, superlevel_measure
from .operators import (PucciEllipticity, first_eigenvalue, fractional_hessian, kernel_moment,
                        m_extremal, m_extremal_field, pucci_extremal_eigs, second_difference)
from .supersolution import Supersolution, solve_dirichlet

__all__ = [
    "ConstantLedger", "c0", "calA", "gamma",
    "EnvelopeResult", "compute_envelope", "envelope_residuals",
    "Domain", "Exterior", "GridFunction", "ln_norm", "region_inf", "sublevel_measure",
    "superlevel_measure",
    "PucciEllipticity", "first_eigenvalue", "fractional_hessian", "kernel_moment", "m_extremal",
    "m_extremal_field", "pucci_extremal_eigs", "second_difference",
    "Supersolution", "solve_dirichlet",
]
__version__ = "0.1.0"
