"""Datasets, windows, stand-in backbones, and forecast metrics."""

from .backbones import RidgeBackbone, backbone_naive, backbone_ridge
from .dataset import SPLITS, SeriesDataset, Window, WindowSet, window_count, windowize
from .io import load_csv, write_csv, write_json, write_predictions
from .metrics import MetricsReport, metrics, seasonal_naive
from .synthetic import SynthSpec, planted_groups, synth_generate

__all__ = [
    "SPLITS", "MetricsReport", "RidgeBackbone", "SeriesDataset", "SynthSpec", "Window",
    "WindowSet", "backbone_naive", "backbone_ridge", "load_csv", "metrics",
    "planted_groups", "seasonal_naive", "synth_generate", "window_count", "windowize", "write_csv",
    "write_json", "write_predictions",
]
