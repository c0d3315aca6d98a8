"""Python bindings for the iskd C++ core."""

from ._iskd import (
    ConfigError,
    DimensionError,
    Error,
    FormatError,
    Network,
    NumericError,
    cross_entropy,
    kd_total,
    kl_distill,
    linear_fit,
    matmul,
    parse_config,
    run_iskd,
    softmax,
    split_indices_7_3,
    stop_decision,
    synth_pothole,
)

__all__ = [
    "ConfigError",
    "DimensionError",
    "Error",
    "FormatError",
    "Network",
    "NumericError",
    "cross_entropy",
    "kd_total",
    "kl_distill",
    "linear_fit",
    "matmul",
    "parse_config",
    "run_iskd",
    "softmax",
    "split_indices_7_3",
    "stop_decision",
    "synth_pothole",
]
