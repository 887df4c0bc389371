"""Frozen stand-in forecasters whose output the plugin refines."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, DimensionError


def backbone_naive(lookback, horizon: int) -> np.ndarray:
    """Persistence: repeat the last observed value of each channel."""
    x = np.asarray(lookback, dtype=np.float64)
    if x.shape[-1] < 1:
        raise DimensionError("lookback must contain at least one step")
    return np.repeat(x[..., -1:], horizon, axis=-1)


@dataclass(frozen=True)
class RidgeBackbone:
    """Channel-independent linear map ``lookback (T) -> forecast (T')`` per channel."""

    weights: np.ndarray  # (C, T, T')
    intercept: np.ndarray  # (C, T')

    @property
    def horizon(self) -> int:
        return self.weights.shape[-1]

    def predict(self, lookback) -> np.ndarray:
        x = np.asarray(lookback, dtype=np.float64)
        if x.shape[-2:] != self.weights.shape[:2]:
            raise DimensionError(
                f"lookback {x.shape[-2:]} does not match backbone {self.weights.shape[:2]}"
            )
        return np.einsum("...ct,ctk->...ck", x, self.weights) + self.intercept


def backbone_ridge(lookback, target, lam: float) -> RidgeBackbone:
    """Closed-form ridge per channel with an unpenalized intercept.

    Parameters
    ----------
    lookback : (W, C, T) training inputs
    target : (W, C, T') training targets
    lam : ridge strength, must be positive
    """
    if lam <= 0:
        raise ConfigurationError("ridge strength must be positive")
    x = np.asarray(lookback, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if x.ndim != 3 or y.ndim != 3 or x.shape[:2] != y.shape[:2]:
        raise DimensionError(f"incompatible window arrays {x.shape} and {y.shape}")
    n_win, c, t = x.shape
    if n_win < t:
        raise ConfigurationError(f"ridge needs at least {t} windows, got {n_win}")
    weights = np.empty((c, t, y.shape[2]))
    intercept = np.empty((c, y.shape[2]))
    eye = np.eye(t)
    for ch in range(c):
        xc, yc = x[:, ch, :], y[:, ch, :]
        xm, ym = xc.mean(axis=0), yc.mean(axis=0)
        xc = xc - xm
        w = np.linalg.solve(xc.T @ xc + lam * eye, xc.T @ (yc - ym))
        weights[ch] = w
        intercept[ch] = ym - xm @ w
    return RidgeBackbone(weights, intercept)
