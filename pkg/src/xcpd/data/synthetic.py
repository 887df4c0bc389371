"""Synthetic series with planted frequency-specific cross-channel coupling.

Each channel is the sum of

* a shared low-frequency family of sinusoids with a per-channel phase,
* for channels in a planted group, a shared mid-frequency carrier whose
  amplitude drifts randomly; the group's first channel leads and every other
  member sees the carrier ``lag`` steps later,
* independent high-frequency noise.

Every random draw is recorded in :attr:`SeriesDataset.meta` so tests can
rebuild components exactly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigurationError
from .dataset import SeriesDataset


@dataclass(frozen=True)
class SynthSpec:
    channels: int = 8
    length: int = 8000
    low_periods: tuple = (168.0, 24.0)
    low_amplitude: float = 1.0
    mid_period: float = 6.0
    mid_amplitude: float = 2.5
    mid_groups: tuple = ((0, 1, 2, 3), (4, 5, 6, 7))
    mid_lag: int = 24
    # AR(1) coefficient of the carrier's amplitude envelope
    envelope_memory: float = 0.95
    noise_std: float = 0.3
    sampling: str = "hourly"
    train_frac: float = 0.7
    val_frac: float = 0.1
    extra: dict = field(default_factory=dict)

    def validate(self):
        if self.channels < 2:
            raise ConfigurationError("synthetic data needs at least 2 channels")
        if self.length < 2000:
            raise ConfigurationError("synthetic data needs at least 2000 steps")
        seen = set()
        for group in self.mid_groups:
            if len(group) < 2 or len(set(group)) != len(group):
                raise ConfigurationError(f"planted group {group} needs >= 2 distinct channels")
            if any(not 0 <= ch < self.channels for ch in group) or seen & set(group):
                raise ConfigurationError(f"invalid planted group {group}")
            seen |= set(group)
        if self.noise_std < 0 or self.mid_lag < 0:
            raise ConfigurationError("noise_std and mid_lag must be nonnegative")
        if not 0 <= self.envelope_memory < 1:
            raise ConfigurationError("envelope_memory must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["low_periods"] = list(self.low_periods)
        d["mid_groups"] = [list(g) for g in self.mid_groups]
        return d


def planted_groups(channels: int, size: int = 4) -> tuple:
    """Consecutive channel groups of ``size``; a leftover single channel joins the last group."""
    groups = [list(range(i, min(i + size, channels))) for i in range(0, channels, size)]
    if len(groups) > 1 and len(groups[-1]) == 1:
        tail = groups.pop()
        groups[-1] += tail
    return tuple(tuple(g) for g in groups if len(g) >= 2)


def _envelope(rng, length: int, memory: float) -> np.ndarray:
    """Positive, slowly varying amplitude: ``1 + 0.5 * AR(1)`` clipped at 0."""
    shocks = rng.standard_normal(length) * np.sqrt(1.0 - memory**2)
    z = np.empty(length)
    z[0] = rng.standard_normal()
    for t in range(1, length):
        z[t] = memory * z[t - 1] + shocks[t]
    return np.maximum(1.0 + 0.5 * z, 0.0)


def synth_generate(spec: SynthSpec = SynthSpec(), seed: int = 0) -> SeriesDataset:
    spec.validate()
    rng = np.random.default_rng(seed)
    c, n = spec.channels, spec.length
    t = np.arange(n, dtype=np.float64)

    phases = rng.uniform(0.0, 2 * np.pi, size=(c, len(spec.low_periods)))
    values = np.zeros((c, n))
    for k, period in enumerate(spec.low_periods):
        values += spec.low_amplitude * np.sin(2 * np.pi * t / period + phases[:, k : k + 1])

    carriers = []
    for group in spec.mid_groups:
        lead, followers = group[0], group[1:]
        span = n + spec.mid_lag
        env = _envelope(rng, span, spec.envelope_memory)
        phase = rng.uniform(0.0, 2 * np.pi)
        ts = np.arange(span, dtype=np.float64)
        carrier = spec.mid_amplitude * env * np.sin(2 * np.pi * ts / spec.mid_period + phase)
        values[lead] += carrier[spec.mid_lag : spec.mid_lag + n]
        for ch in followers:
            values[ch] += carrier[:n]
        carriers.append({"group": list(group), "phase": phase})

    noise = spec.noise_std * rng.standard_normal((c, n))
    values += noise

    meta = {
        "generator": "xcpd.synthetic",
        "seed": seed,
        "spec": spec.to_dict(),
        "low_phases": phases.tolist(),
        "carriers": carriers,
    }
    names = tuple(f"ch{i}" for i in range(c))
    return SeriesDataset(values, names, spec.sampling, spec.train_frac, spec.val_frac, meta)
