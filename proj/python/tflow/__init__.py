"""Multistage traffic equilibrium: assignment, entropy trip distribution and the combined model."""

from ._core import (
    ConfigError,
    ConvergenceError,
    InfeasibleError,
    Network,
    TflowError,
    assign,
    bpr_sigma,
    bpr_sigma_conjugate,
    bpr_time,
    calibrate_beta,
    read_network,
    read_trips,
    sinkhorn,
    twostage,
)

__all__ = [
    "ConfigError",
    "ConvergenceError",
    "InfeasibleError",
    "Network",
    "TflowError",
    "assign",
    "bpr_sigma",
    "bpr_sigma_conjugate",
    "bpr_time",
    "calibrate_beta",
    "read_network",
    "read_trips",
    "sinkhorn",
    "twostage",
]
