"""End-to-end runs: backbone fitting, shared-basis fitting, training, evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import (
    SPLITS,
    RidgeBackbone,
    SeriesDataset,
    backbone_naive,
    backbone_ridge,
    metrics,
    seasonal_naive,
    windowize,
)
from .errors import ConfigurationError
from .graph import cosine_adjacency, nonneg_shift, normalized_laplacian, patch
from .model import PluginConfig, PluginParameters, forward, init_params
from .spectral import SharedBasis, fit_shared_basis
from .train import TrainSettings, train

BACKBONES = ("ridge", "naive")


@dataclass(frozen=True)
class Split:
    lookback: np.ndarray
    target: np.ndarray
    backbone: np.ndarray
    starts: np.ndarray


@dataclass(frozen=True)
class Prepared:
    splits: dict
    backbone: RidgeBackbone | None
    backbone_name: str


def prepare(ds: SeriesDataset, lookback: int, horizon: int, stride: int = 1,
            backbone: str = "ridge", ridge_lambda: float = 1.0,
            ridge: RidgeBackbone | None = None) -> Prepared:
    """Window every split and run the frozen backbone on it.

    The ridge backbone is fit on training windows only, unless an already
    fitted one is supplied.
    """
    if backbone not in BACKBONES:
        raise ConfigurationError(f"unknown backbone {backbone!r}; choose from {BACKBONES}")
    windows = {s: windowize(ds, lookback, horizon, stride, split=s) for s in SPLITS}
    if backbone == "ridge" and ridge is None:
        tr = windows["train"]
        ridge = backbone_ridge(tr.lookback, tr.target, ridge_lambda)
    splits = {}
    for s, w in windows.items():
        pred = ridge.predict(w.lookback) if backbone == "ridge" else backbone_naive(w.lookback, horizon)
        splits[s] = Split(w.lookback, w.target, pred, w.starts)
    return Prepared(splits, ridge if backbone == "ridge" else None, backbone)


def window_laplacians(preds, params: PluginParameters, config: PluginConfig) -> np.ndarray:
    """Normalized Laplacians of the shifted cosine graphs, one per window."""
    _, patches = patch(preds, config.patch_len)
    emb = patches @ params["embed.w"] + params["embed.b"]
    return normalized_laplacian(nonneg_shift(cosine_adjacency(emb)))


def fit_basis_on_windows(preds, params: PluginParameters, config: PluginConfig,
                         rng, max_windows: int = 256) -> SharedBasis:
    """Fit the shared basis on at most ``max_windows`` uniformly drawn windows."""
    preds = np.asarray(preds)
    if len(preds) > max_windows:
        idx = np.sort(rng.choice(len(preds), size=max_windows, replace=False))
        preds = preds[idx]
    laps = window_laplacians(preds, params, config)
    return fit_shared_basis(list(laps))


def predict(params, config, basis, preds, batch_size: int = 256) -> np.ndarray:
    out = np.empty_like(np.asarray(preds, dtype=np.float64))
    for start in range(0, len(preds), batch_size):
        sl = slice(start, start + batch_size)
        out[sl] = forward(preds[sl], params, config, basis, training=False).prediction
    return out


def evaluate_split(split: Split, plugin_pred, season: int):
    """Metrics of backbone alone and backbone + plugin on one split."""
    naive2 = seasonal_naive(split.lookback, split.target.shape[-1], season) \
        if split.lookback.shape[-1] > season else None
    insample = split.lookback if split.lookback.shape[-1] > season else None
    base = metrics(split.backbone, split.target, insample, season, naive2)
    plug = metrics(plugin_pred, split.target, insample, season, naive2)
    return base, plug


def relative_improvement(base: float, plug: float) -> float:
    return (base - plug) / base if base else 0.0


@dataclass
class RunResult:
    report: object
    params: PluginParameters
    basis: SharedBasis
    prepared: Prepared
    test_backbone_mse: float
    test_plugin_mse: float
    val_backbone_mse: float
    val_plugin_mse: float


def run(ds: SeriesDataset, config: PluginConfig, settings: TrainSettings,
        lookback: int = 96, stride: int = 1, backbone: str = "ridge",
        ridge_lambda: float = 1.0, basis_windows: int = 256) -> RunResult:
    """Fit backbone and basis, train the plugin, and score it on val and test."""
    prep = prepare(ds, lookback, config.horizon, stride, backbone, ridge_lambda)
    # children 0-2 match the streams train() derives from the same seed
    init_seed, _, _, basis_seed = np.random.SeedSequence(settings.seed).spawn(4)
    params = init_params(config, np.random.default_rng(init_seed))
    tr, va, te = (prep.splits[s] for s in SPLITS)
    basis = fit_basis_on_windows(tr.backbone, params, config,
                                 np.random.default_rng(basis_seed), basis_windows)
    report, best = train(tr.backbone, tr.target, va.backbone, va.target, config, basis,
                         settings, params=params)
    season = ds.season()
    out = {}
    for name, split in (("val", va), ("test", te)):
        base, plug = evaluate_split(split, predict(best, config, basis, split.backbone), season)
        out[name] = (base.mse, plug.mse)
    return RunResult(report, best, basis, prep, out["test"][0], out["test"][1],
                     out["val"][0], out["val"][1])
