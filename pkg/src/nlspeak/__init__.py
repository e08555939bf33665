"""Penalized min-max solver for concentrating bound states of semiclassical NLS."""

from .domain import GaussianBump, Params, PowerNonlinearity, Problem, make_grid, grid_for_spacing
from .limit import build_S0, ground_state
from .minmax import path_level, solve
from .flow import StopRule, descend

__all__ = [
    "GaussianBump", "Params", "PowerNonlinearity", "Problem", "make_grid", "grid_for_spacing",
    "build_S0", "ground_state", "path_level", "solve", "StopRule", "descend",
]
