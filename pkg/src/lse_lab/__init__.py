"""Simulation and phase criteria for linear stochastic evolutions on Z^d."""

from .lattice import SiteField, convolve, fourier_eval
from .models import ModelSpec, MomentTable, mean_kernel, moment_tables, pair_moment, pair_weight

__all__ = [
    "SiteField",
    "convolve",
    "fourier_eval",
    "ModelSpec",
    "MomentTable",
    "mean_kernel",
    "moment_tables",
    "pair_moment",
    "pair_weight",
]

__version__ = "0.1.0"
