"""Spectral channel-patch dependency plugin for multivariate forecasting.

The plugin refines the ``(C, T')`` output of a frozen forecaster: it cuts the
forecast into channel-patches, builds a cosine graph over them, analyzes the
graph in a shared Fourier basis, routes each patch to frequency-band experts,
and adds a gated residual correction.
"""

from .errors import (
    ConfigurationError,
    ConvergenceError,
    DimensionError,
    IngestionError,
    UsageError,
    XcpdError,
)
from .model import PluginConfig, PluginParameters, forward, init_params
from .spectral import SharedBasis, fit_shared_basis
from .train import TrainSettings, train

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "ConvergenceError",
    "DimensionError",
    "IngestionError",
    "PluginConfig",
    "PluginParameters",
    "SharedBasis",
    "TrainSettings",
    "UsageError",
    "XcpdError",
    "fit_shared_basis",
    "forward",
    "init_params",
    "train",
]
