"""Series container, train/val/test splits, and sliding windows."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, DimensionError

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class SeriesDataset:
    """A ``(C, T_total)`` multivariate series with contiguous splits.

    Normalization statistics are computed from the train split only.
    """

    values: np.ndarray
    channel_names: tuple
    sampling: str = "hourly"
    train_frac: float = 0.7
    val_frac: float = 0.1
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise DimensionError("values must have shape (C, T)")
        if len(self.channel_names) != v.shape[0]:
            raise DimensionError("one name per channel is required")
        if not (0 < self.train_frac and 0 <= self.val_frac and self.train_frac + self.val_frac < 1):
            raise ConfigurationError("split fractions must be positive and sum below 1")
        object.__setattr__(self, "values", v)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]

    def bounds(self) -> dict[str, tuple[int, int]]:
        t = self.length
        a = int(t * self.train_frac)
        b = int(t * (self.train_frac + self.val_frac))
        return {"train": (0, a), "val": (a, b), "test": (b, t)}

    @property
    def mean(self) -> np.ndarray:
        a, b = self.bounds()["train"]
        return self.values[:, a:b].mean(axis=1)

    @property
    def std(self) -> np.ndarray:
        a, b = self.bounds()["train"]
        s = self.values[:, a:b].std(axis=1)
        return np.where(s > 0, s, 1.0)

    def normalized(self) -> np.ndarray:
        return (self.values - self.mean[:, None]) / self.std[:, None]

    def season(self) -> int:
        return 24 if self.sampling.lower().startswith("hour") else 1


@dataclass(frozen=True)
class Window:
    lookback: np.ndarray
    target: np.ndarray
    start: int


@dataclass(frozen=True)
class WindowSet:
    """Stacked windows of one split; ``starts`` are target start indices."""

    lookback: np.ndarray
    target: np.ndarray
    starts: np.ndarray
    split: str

    def __len__(self):
        return len(self.starts)

    def __getitem__(self, i) -> Window:
        return Window(self.lookback[i], self.target[i], int(self.starts[i]))


def window_count(length: int, lookback: int, horizon: int, stride: int) -> int:
    if length < lookback + horizon:
        return 0
    return (length - lookback - horizon) // stride + 1


def windowize(ds: SeriesDataset, lookback: int, horizon: int, stride: int = 1,
              split: str = "train", normalize: bool = True) -> WindowSet:
    """Sliding windows lying entirely inside one split."""
    if split not in SPLITS:
        raise ConfigurationError(f"unknown split {split!r}")
    if lookback < 1 or horizon < 1 or stride < 1:
        raise ConfigurationError("lookback, horizon and stride must be >= 1")
    lo, hi = ds.bounds()[split]
    count = window_count(hi - lo, lookback, horizon, stride)
    if count == 0:
        raise ConfigurationError(
            f"{split} split of length {hi - lo} is shorter than lookback + horizon "
            f"= {lookback + horizon}"
        )
    data = ds.normalized() if normalize else ds.values
    offsets = lo + np.arange(count) * stride
    span = np.arange(lookback + horizon)
    block = data[:, offsets[:, None] + span[None, :]]  # (C, W, T + T')
    block = np.transpose(block, (1, 0, 2))
    return WindowSet(
        np.ascontiguousarray(block[:, :, :lookback]),
        np.ascontiguousarray(block[:, :, lookback:]),
        offsets + lookback,
        split,
    )
