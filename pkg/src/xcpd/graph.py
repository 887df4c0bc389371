"""Channel-patch nodes, embeddings, and the similarity graph built on them.

A backbone forecast of shape ``(C, T')`` is cut into ``N = ceil(T'/P)``
non-overlapping patches per channel, giving ``n = C * N`` nodes with flat id
``c * N + p``. Most functions accept an optional leading batch axis so that
many forecast windows can be processed at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError, UsageError

ZERO_NORM = 1e-12
RAW_COSINE = "raw-cosine"
SHIFTED = "shifted-nonnegative"


@dataclass(frozen=True)
class PatchGrid:
    channels: int
    horizon: int
    patch_len: int

    def __post_init__(self):
        if self.patch_len < 1 or self.horizon < 1 or self.channels < 1:
            raise ConfigurationError("channels, horizon and patch_len must be >= 1")
        if self.patch_len > self.horizon:
            raise ConfigurationError(
                f"patch_len {self.patch_len} exceeds horizon {self.horizon}"
            )

    @property
    def patch_count(self) -> int:
        return math.ceil(self.horizon / self.patch_len)

    @property
    def node_count(self) -> int:
        return self.channels * self.patch_count

    @property
    def padded_len(self) -> int:
        return self.patch_count * self.patch_len

    def node_index(self, channel: int, patch: int) -> int:
        return channel * self.patch_count + patch

    def node_position(self, node: int) -> tuple[int, int]:
        return divmod(node, self.patch_count)


def patch_len_from_rule(horizon: int, divisor: int) -> int:
    """Patch length under a ``T'/divisor`` rule, e.g. ``T'/16`` for ETTh1."""
    if divisor < 1 or horizon % divisor:
        raise ConfigurationError(f"horizon {horizon} is not divisible by {divisor}")
    return horizon // divisor


def patch(prediction, patch_len: int):
    """Split ``(..., C, T')`` into ``(..., n, P)`` patches, zero-padding the tail.

    Returns
    -------
    grid : PatchGrid
    patches : ndarray, shape (..., C * N, P)
    """
    x = np.asarray(prediction, dtype=np.float64)
    if x.ndim < 2:
        raise DimensionError("prediction must have shape (..., C, T')")
    *lead, c, t = x.shape
    grid = PatchGrid(c, t, patch_len)
    pad = grid.padded_len - t
    if pad:
        widths = [(0, 0)] * (x.ndim - 1) + [(0, pad)]
        x = np.pad(x, widths)
    patches = x.reshape(*lead, c * grid.patch_count, patch_len)
    return grid, patches


def unpatch(patches, grid: PatchGrid) -> np.ndarray:
    """Inverse of :func:`patch`; drops the padded tail."""
    p = np.asarray(patches, dtype=np.float64)
    *lead, n, plen = p.shape
    if n != grid.node_count or plen != grid.patch_len:
        raise DimensionError(f"patches {p.shape[-2:]} do not match grid {grid}")
    return p.reshape(*lead, grid.channels, grid.padded_len)[..., : grid.horizon]


def embed(patches, weights, bias) -> np.ndarray:
    """Linear patch embedding ``patches @ weights + bias``."""
    x = np.asarray(patches, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    b = np.asarray(bias, dtype=np.float64)
    if w.ndim != 2 or x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise DimensionError(
            f"cannot embed patches {x.shape} with weights {w.shape} and bias {b.shape}"
        )
    return x @ w + b


@dataclass(frozen=True)
class AdjacencyMatrix:
    values: np.ndarray
    kind: str


def unit_rows(emb) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalized embeddings and a mask of non-degenerate rows."""
    x = np.asarray(emb, dtype=np.float64)
    norms = np.sqrt(np.sum(x * x, axis=-1))
    ok = norms > ZERO_NORM
    safe = np.where(ok, norms, 1.0)
    return x / safe[..., None] * ok[..., None], ok


def cosine_adjacency(emb) -> AdjacencyMatrix:
    """Pairwise cosine similarity of embedding rows.

    Zero-norm rows are isolated: zero similarity to every other node and a
    unit diagonal.
    """
    xhat, _ = unit_rows(emb)
    a = xhat @ np.swapaxes(xhat, -1, -2)
    np.clip(a, -1.0, 1.0, out=a)
    n = a.shape[-1]
    diag = np.arange(n)
    a[..., diag, diag] = 1.0
    return AdjacencyMatrix(a, RAW_COSINE)


def nonneg_shift(adj: AdjacencyMatrix) -> AdjacencyMatrix:
    if adj.kind != RAW_COSINE:
        raise UsageError(f"expected a {RAW_COSINE} adjacency, got {adj.kind}")
    return AdjacencyMatrix((adj.values + 1.0) / 2.0, SHIFTED)


def normalized_laplacian(adj: AdjacencyMatrix) -> np.ndarray:
    """``I - D^{-1/2} A D^{-1/2}`` for a nonnegative adjacency."""
    if adj.kind != SHIFTED:
        raise UsageError(f"expected a {SHIFTED} adjacency, got {adj.kind}")
    a = adj.values
    deg = np.sum(a, axis=-1)
    inv = 1.0 / np.sqrt(deg)
    lap = -(inv[..., :, None] * a * inv[..., None, :])
    n = a.shape[-1]
    diag = np.arange(n)
    lap[..., diag, diag] += 1.0
    return 0.5 * (lap + np.swapaxes(lap, -1, -2))


def knn_count(n: int, alpha: float) -> int:
    if not 0.0 < alpha <= 1.0:
        raise ConfigurationError(f"knn ratio must lie in (0, 1], got {alpha}")
    return max(0, min(int(math.floor(alpha * n)), n - 1))


def knn_indices(sim, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-``k`` neighbors per row excluding self; ties go to the smaller id.

    Returns ``(index, weight)`` arrays of shape ``(..., n, k)`` with weights in
    descending order.
    """
    neg = -np.asarray(sim, dtype=np.float64)
    n = neg.shape[-1]
    diag = np.arange(n)
    neg[..., diag, diag] = np.inf
    if k <= 0 or k >= n:
        order = np.argsort(neg, axis=-1, kind="stable")[..., : max(k, 0)]
        return order, -np.take_along_axis(neg, order, axis=-1)
    cand = np.argpartition(neg, k - 1, axis=-1)[..., :k]
    kth = np.max(np.take_along_axis(neg, cand, axis=-1), axis=-1, keepdims=True)
    tied = neg <= kth
    m = int(np.max(np.sum(tied, axis=-1)))
    if m > k:
        # entries tied with the k-th largest may have been dropped; keep them all
        neg[~tied] = np.inf
        cand = np.argpartition(neg, m - 1, axis=-1)[..., :m]
    cand = np.sort(cand, axis=-1)
    pos = np.argsort(np.take_along_axis(neg, cand, axis=-1), axis=-1, kind="stable")[..., :k]
    order = np.take_along_axis(cand, pos, axis=-1)
    return order, -np.take_along_axis(neg, order, axis=-1)


@dataclass(frozen=True)
class EgoGraph:
    center: int
    neighbor_ids: tuple
    weights: tuple


def knn_sparsify(adj: AdjacencyMatrix, alpha: float) -> list[EgoGraph]:
    """One ego-graph per node holding its ``floor(alpha * n)`` nearest neighbors."""
    a = np.asarray(adj.values, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError("knn_sparsify expects a single square adjacency")
    k = knn_count(a.shape[0], alpha)
    idx, w = knn_indices(a, k)
    return [
        EgoGraph(i, tuple(int(j) for j in idx[i]), tuple(float(x) for x in w[i]))
        for i in range(a.shape[0])
    ]
