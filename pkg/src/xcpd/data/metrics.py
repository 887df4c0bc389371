"""MAE, MSE, SMAPE, MASE and OWA over sets of forecasts.

All reductions use :func:`math.fsum`, so results do not depend on the order
of the windows.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigurationError, DimensionError


@dataclass(frozen=True)
class MetricsReport:
    mae: float
    mse: float
    smape: float
    mase: float | None
    owa: float | None
    season: int

    def to_dict(self) -> dict:
        return asdict(self)


def _mean(a) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    return math.fsum(a.tolist()) / a.size


def smape_terms(pred, truth) -> np.ndarray:
    """``200 |x - x_hat| / (|x| + |x_hat|)``; zero where both values are zero."""
    num = np.abs(truth - pred)
    den = np.abs(truth) + np.abs(pred)
    return np.where(den > 0, 200.0 * num / np.where(den > 0, den, 1.0), 0.0)


def mase_scale(insample, season: int) -> np.ndarray:
    """Mean absolute seasonal difference of the in-sample series (last axis)."""
    x = np.asarray(insample, dtype=np.float64)
    if x.shape[-1] <= season:
        raise DimensionError(f"in-sample length {x.shape[-1]} must exceed season {season}")
    diffs = np.abs(x[..., season:] - x[..., :-season])
    return np.apply_along_axis(lambda r: math.fsum(r.tolist()) / r.size, -1, diffs)


def seasonal_naive(insample, horizon: int, season: int) -> np.ndarray:
    """Repeat the last observed season (stand-in for the Naive2 benchmark)."""
    x = np.asarray(insample, dtype=np.float64)
    last = x[..., -season:]
    reps = math.ceil(horizon / season)
    return np.concatenate([last] * reps, axis=-1)[..., :horizon]


def _smape_mase(pred, truth, scale):
    smape = _mean(smape_terms(pred, truth))
    if scale is None or np.any(scale == 0):
        return smape, None
    mase = _mean(np.abs(truth - pred) / scale[..., None])
    return smape, mase


def metrics(pred, truth, insample=None, season: int = 1, naive2=None) -> MetricsReport:
    """Forecast accuracy metrics.

    Parameters
    ----------
    pred, truth : (..., C, T') forecasts and targets
    insample : (..., C, T_in) history used for the MASE scale; broadcast
        against ``pred`` without its last axis. MASE is ``None`` without it
        or when the scale is zero.
    season : seasonal period ``s`` for MASE and the naive reference
    naive2 : reference forecast with ``pred``'s shape; OWA is ``None``
        without it or when a reference metric is zero or undefined.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DimensionError(f"prediction {pred.shape} and truth {truth.shape} differ")
    if season < 1:
        raise ConfigurationError("season must be >= 1")
    err = truth - pred
    mae = _mean(np.abs(err))
    mse = _mean(err * err)
    scale = None
    if insample is not None:
        scale = np.broadcast_to(mase_scale(insample, season), pred.shape[:-1])
    smape, mase = _smape_mase(pred, truth, scale)
    owa = None
    if naive2 is not None and mase is not None:
        ref_smape, ref_mase = _smape_mase(np.asarray(naive2, dtype=np.float64), truth, scale)
        if ref_smape > 0 and ref_mase:
            owa = 0.5 * (smape / ref_smape + mase / ref_mase)
    return MetricsReport(mae, mse, smape, mase, owa, season)
