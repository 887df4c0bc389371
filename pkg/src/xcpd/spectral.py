"""Shared graph Fourier basis, spectral energy, and frequency-band grouping."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError
from .linalg import frobenius_norm, jacobi_eigh, procrustes_align

LOW, MID, HIGH = 0, 1, 2
BAND_NAMES = ("low", "mid", "high")
DISTINCT_TOL = 1e-9
VACUOUS_GAP = 1e-6

# Test hook: names of deliberately injected faults (see xcpd.verify.injected_fault).
FAULTS: set[str] = set()


@dataclass(frozen=True)
class SharedBasis:
    """Eigenbasis of the mean Laplacian; column ``j`` is graph frequency ``j``."""

    basis: np.ndarray
    eigenvalues: np.ndarray
    mean_laplacian: np.ndarray
    eigengap: float

    @property
    def n(self) -> int:
        return self.basis.shape[0]


def eigengap(eigenvalues) -> float:
    """Smallest difference between adjacent distinct eigenvalues (0 if none)."""
    diffs = np.diff(np.sort(np.asarray(eigenvalues, dtype=np.float64)))
    diffs = diffs[diffs > DISTINCT_TOL]
    return float(diffs.min()) if diffs.size else 0.0


def fit_shared_basis(laplacians) -> SharedBasis:
    """Average the Laplacians entrywise and take the eigenbasis of the mean."""
    laps = [np.asarray(lap, dtype=np.float64) for lap in laplacians]
    if not laps:
        raise ConfigurationError("at least one Laplacian is required")
    shape = laps[0].shape
    for lap in laps:
        if lap.shape != shape or lap.ndim != 2 or shape[0] != shape[1]:
            raise DimensionError(f"Laplacian shapes differ or are not square: {lap.shape}")
    mean = np.mean(np.stack(laps), axis=0)
    mean = 0.5 * (mean + mean.T)
    dec = jacobi_eigh(mean)
    return SharedBasis(dec.eigenvectors, dec.eigenvalues, mean, eigengap(dec.eigenvalues))


@dataclass(frozen=True)
class BoundReport:
    lhs: float
    rhs: float
    holds: bool
    vacuous: bool


def verify_basis_bound(basis: SharedBasis, lap) -> BoundReport:
    """Check ``||U_t - U R_t||_F <= (sqrt(2)/gap) ||L_t - L_avg||_F``.

    ``R_t`` is the Procrustes rotation aligning the shared basis to the
    eigenbasis of ``lap``. A gap at or below 1e-6 makes the bound vacuous; the
    report then has ``vacuous=True`` and ``holds=True``.
    """
    lap = np.asarray(lap, dtype=np.float64)
    if lap.shape != basis.mean_laplacian.shape:
        raise DimensionError(f"Laplacian {lap.shape} does not match basis {basis.basis.shape}")
    if basis.eigengap <= VACUOUS_GAP:
        return BoundReport(float("nan"), float("inf"), True, True)
    ut = jacobi_eigh(lap).eigenvectors
    rot = procrustes_align(basis.basis, ut)
    lhs = frobenius_norm(ut - basis.basis @ rot)
    rhs = math.sqrt(2.0) / basis.eigengap * frobenius_norm(lap - basis.mean_laplacian)
    return BoundReport(lhs, rhs, lhs <= rhs + 1e-9, False)


def gft(basis: SharedBasis, emb) -> np.ndarray:
    """Graph Fourier transform ``U^T X`` (batched over leading axes)."""
    x = np.asarray(emb, dtype=np.float64)
    if x.ndim < 2 or x.shape[-2] != basis.n:
        raise DimensionError(f"embedding {x.shape} does not match basis of size {basis.n}")
    return basis.basis.T @ x


def inverse_gft(basis: SharedBasis, spec) -> np.ndarray:
    return basis.basis @ np.asarray(spec, dtype=np.float64)


def energy_response(basis: SharedBasis, spec) -> np.ndarray:
    """Energy of node ``i`` at frequency ``j``: ``U_ij^2 * ||X^spc_j||^2``.

    Summed over all nodes and frequencies this equals ``||X^emb||_F^2``.
    """
    x = np.asarray(spec, dtype=np.float64)
    if x.ndim < 2 or x.shape[-2] != basis.n:
        raise DimensionError(f"spectrum {x.shape} does not match basis of size {basis.n}")
    power = np.sum(x * x, axis=-1)
    out = (basis.basis**2) * power[..., None, :]
    if "energy-sign" in FAULTS:
        out[..., 0] *= -1.0
    return out


@dataclass(frozen=True)
class BandPartition:
    tau1: float
    tau2: float
    temperature: float
    memberships: np.ndarray  # (n, 3): low, mid, high


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def band_memberships(tau1: float, tau2: float, m: float, n: int) -> BandPartition:
    """Soft low/mid/high memberships for frequencies ``j = 1..n``.

    A negative mid weight (possible when the boundaries are close relative to
    ``1/m``) is clamped to zero and the triple renormalized.
    """
    if not tau1 < tau2:
        raise ConfigurationError(f"need tau1 < tau2, got {tau1}, {tau2}")
    if not (1.0 <= tau1 and tau2 <= n):
        raise ConfigurationError(f"band boundaries must lie in [1, {n}]")
    if m <= 0:
        raise ConfigurationError("temperature must be positive")
    j = np.arange(1, n + 1, dtype=np.float64)
    low = _sigmoid(m * (tau1 - j))
    high = _sigmoid(m * (j - tau2))
    mid = 1.0 - low - high
    alpha = np.stack([low, mid, high], axis=1)
    if np.any(mid < 0):
        alpha[:, MID] = np.maximum(mid, 0.0)
        alpha = alpha / alpha.sum(axis=1, keepdims=True)
    return BandPartition(float(tau1), float(tau2), float(m), alpha)


def equal_thirds(n: int, m: float) -> BandPartition:
    """Default boundaries ``n/3`` and ``2n/3`` (clipped into ``[1, n]``)."""
    tau1 = max(1.0, n / 3.0)
    tau2 = min(float(n), max(2.0 * n / 3.0, tau1 + 1e-6))
    return band_memberships(tau1, tau2, m, n)


def band_energies(energy, bands: BandPartition) -> np.ndarray:
    """Per-node energy pooled into the three bands, shape ``(..., n, 3)``."""
    return np.asarray(energy, dtype=np.float64) @ bands.memberships


@dataclass(frozen=True)
class GroupAssignment:
    labels: np.ndarray
    scores: np.ndarray


def group_nodes(energy, bands: BandPartition) -> GroupAssignment:
    """Label each node by its dominant band (ties go to the lower band)."""
    s = np.asarray(energy, dtype=np.float64)
    if s.shape[-1] != bands.memberships.shape[0]:
        raise DimensionError("energy matrix and band partition disagree on n")
    logits = band_energies(s, bands)
    z = np.exp(logits - logits.max(axis=-1, keepdims=True))
    scores = z / z.sum(axis=-1, keepdims=True)
    return GroupAssignment(np.argmax(logits, axis=-1), scores)


def refine_bands(n: int, m: float, evaluate, grid_size: int = 4) -> BandPartition:
    """Grid search over ``(tau1, tau2)`` minimizing ``evaluate(bands)``.

    ``evaluate`` maps a :class:`BandPartition` to a validation loss. The
    equal-thirds partition is always a candidate and wins ties.
    """
    best = equal_thirds(n, m)
    best_loss = evaluate(best)
    points = np.linspace(1.0, float(n), grid_size + 2)[1:-1]
    for t1 in points:
        for t2 in points:
            if t1 >= t2:
                continue
            cand = band_memberships(float(t1), float(t2), m, n)
            loss = evaluate(cand)
            if loss < best_loss:
                best, best_loss = cand, loss
    return best
