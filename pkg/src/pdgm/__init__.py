"""Piecewise-deterministic generative models.

Exact forward simulation of zig-zag, bouncy-particle and randomised-HMC
processes toward a Gaussian base law, learned time-reversal characteristics
(ratio network or conditional velocity density), splitting-scheme backward
samplers, and evaluation metrics with a computable total-variation bound.
"""

__version__ = "0.1.0"

from .backward import BackwardConfig, TimeGrid, run_backward, time_grid_quadratic
from .datasets import DATASET_NAMES, DatasetSpec, generate
from .density import CondDensityModel, train_density
from .metrics import mmd, tv_bound_eq9, wasserstein2, zzp_g_integral
from .pdmp import ProcessSpec, Schedule, State, Trajectory, simulate_forward
from .ratio import RatioModel, TrainConfig, train_ratio

__all__ = [
    "__version__",
    "BackwardConfig",
    "TimeGrid",
    "run_backward",
    "time_grid_quadratic",
    "DATASET_NAMES",
    "DatasetSpec",
    "generate",
    "CondDensityModel",
    "train_density",
    "mmd",
    "tv_bound_eq9",
    "wasserstein2",
    "zzp_g_integral",
    "ProcessSpec",
    "Schedule",
    "State",
    "Trajectory",
    "simulate_forward",
    "RatioModel",
    "TrainConfig",
    "train_ratio",
]
