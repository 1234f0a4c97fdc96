"""Numerical lab for entropy/Fisher dissipation along JKO flows with general convex costs."""

__version__ = "0.1.0"

from .costs import CostSystem, RadialProfile, make_profile
from .grid import Grid, GridMeasure, Potential, free_energy, make_gibbs
from .jko import JkoConfig, jko_step, run_flow
from .moduli import Modulus, make_modulus, ppower_C, ppower_tp
from .transport import solve_transport

__all__ = [
    "CostSystem", "Grid", "GridMeasure", "JkoConfig", "Modulus", "Potential", "RadialProfile",
    "free_energy", "jko_step", "make_gibbs", "make_modulus", "make_profile", "ppower_C",
    "ppower_tp", "run_flow", "solve_transport",
]
