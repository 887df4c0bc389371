"""Dynamic mixture-of-experts routing over the three frequency filters.

Each node gets a score vector over (low, mid, high). Probabilities are
sorted in descending order and the shortest prefix whose cumulative mass
reaches the threshold selects the experts. A selected expert keeps the ego
edges whose neighbor carries that expert's band label.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError
from .spectral import BAND_NAMES, GroupAssignment
from .graph import EgoGraph

# guards cumulative sums like 0.49999999999999994 against a threshold of 0.5
PROB_SLACK = 1e-12


def softplus(z):
    z = np.asarray(z, dtype=np.float64)
    return np.logaddexp(0.0, z)


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def routing_scores(x, w_c, b_c, w_n, b_n, eps: float, training: bool, rng=None, noise=None):
    """Clean linear score plus scaled noise on a softplus-gated branch.

    ``noise`` may supply the standard-normal draw directly; otherwise it is
    drawn from ``rng`` when training with ``eps > 0`` and is zero otherwise.
    Works on a single ``d``-vector or any ``(..., d)`` stack.
    """
    if eps < 0:
        raise ConfigurationError("noise scale must be nonnegative")
    x = np.asarray(x, dtype=np.float64)
    w_c = np.asarray(w_c, dtype=np.float64)
    w_n = np.asarray(w_n, dtype=np.float64)
    if x.shape[-1] != w_c.shape[0] or w_c.shape != w_n.shape:
        raise DimensionError(f"router weights {w_c.shape} do not fit input {x.shape}")
    clean = x @ w_c + b_c
    if noise is None:
        noise = draw_noise(clean.shape, eps, training, rng)
    if not np.any(noise):
        return clean
    return clean + noise * softplus(x @ w_n + b_n)


def draw_noise(shape, eps: float, training: bool, rng) -> np.ndarray:
    if not training or eps == 0.0:
        return np.zeros(shape)
    if rng is None:
        raise ConfigurationError("training-mode routing noise needs a seeded generator")
    return eps * rng.standard_normal(shape)


@dataclass(frozen=True)
class RoutingDecision:
    node: int
    probs: np.ndarray
    order: tuple
    expert_count: int
    experts: tuple

    @property
    def expert_names(self):
        return tuple(BAND_NAMES[b] for b in self.experts)


def select_batch(psi, tau: float):
    """Vectorized expert selection.

    Returns
    -------
    probs : (..., 3) routing probabilities
    order : (..., 3) band indices by descending probability (low band first on ties)
    count : (...,) number of selected experts
    selected : (..., 3) boolean mask over bands
    """
    if not 0.0 <= tau <= 1.0:
        raise ConfigurationError(f"threshold must lie in [0, 1], got {tau}")
    probs = softmax(psi)
    order = np.argsort(-probs, axis=-1, kind="stable")
    cum = np.cumsum(np.take_along_axis(probs, order, axis=-1), axis=-1)
    reached = cum >= tau - PROB_SLACK
    reached[..., -1] = True
    count = np.argmax(reached, axis=-1) + 1
    rank = np.argsort(order, axis=-1)
    selected = rank < count[..., None]
    return probs, order, count, selected


def select_experts(psi, tau: float, node: int = 0) -> RoutingDecision:
    probs, order, count, _ = select_batch(np.asarray(psi, dtype=np.float64), tau)
    s = int(count)
    order = tuple(int(b) for b in order)
    return RoutingDecision(node, probs, order, s, order[:s])


def filter_edges(ego: EgoGraph, groups: GroupAssignment, decision: RoutingDecision):
    """Ego neighbors whose band label is among the selected experts.

    Returns ``(neighbor_ids, weights)`` in the ego-graph's order.
    """
    if decision.node != ego.center:
        raise ConfigurationError("routing decision and ego-graph centers differ")
    keep = set(decision.experts)
    ids, ws = [], []
    for j, w in zip(ego.neighbor_ids, ego.weights):
        if int(groups.labels[j]) in keep:
            ids.append(j)
            ws.append(w)
    return tuple(ids), tuple(ws)


def filter_mask(neighbors, labels, selected) -> np.ndarray:
    """Batched filter: ``mask[..., i, j]`` keeps slot ``j`` of node ``i``."""
    nb_labels = np.take_along_axis(labels[..., None, :], neighbors, axis=-1)
    return np.take_along_axis(selected, nb_labels, axis=-1)


@dataclass(frozen=True)
class FilteredAdjacency:
    """Padded per-row neighbor lists.

    ``index``, ``similarity`` and ``mask`` share shape ``(..., n, k)``; masked
    slots are ignored. ``similarity`` holds raw cosine values and
    :attr:`weight` the nonnegative aggregation weights ``(1 + cos) / 2``.
    """

    index: np.ndarray
    similarity: np.ndarray
    mask: np.ndarray

    @property
    def weight(self) -> np.ndarray:
        return np.where(self.mask, 0.5 * (1.0 + self.similarity), 0.0)

    def row(self, i: int):
        m = self.mask[i]
        return tuple(int(j) for j in self.index[i][m]), tuple(float(w) for w in self.similarity[i][m])

    @property
    def k(self) -> int:
        return self.index.shape[-1]


def assemble_batch(index, similarity, mask, k: int) -> FilteredAdjacency:
    """Keep the ``k`` strongest unmasked slots per row (ties to smaller id)."""
    if k < 1:
        raise ConfigurationError("k must be >= 1")
    index = np.asarray(index)
    sim = np.asarray(similarity, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    key_sim = np.where(mask, sim, -np.inf)
    # sort by (-similarity, id); masked slots sink to the end
    order = np.lexsort((index, -key_sim), axis=-1)[..., :k]
    return FilteredAdjacency(
        np.take_along_axis(index, order, axis=-1),
        np.take_along_axis(sim, order, axis=-1),
        np.take_along_axis(mask, order, axis=-1),
    )


def assemble_adjacency(filtered, k: int, n: int | None = None) -> FilteredAdjacency:
    """Build a :class:`FilteredAdjacency` from per-center ``(ids, weights)`` lists."""
    rows = list(filtered)
    n = len(rows) if n is None else n
    width = max([len(ids) for ids, _ in rows] + [1])
    index = np.zeros((n, width), dtype=np.intp)
    sim = np.zeros((n, width))
    mask = np.zeros((n, width), dtype=bool)
    for i, (ids, ws) in enumerate(rows):
        index[i, : len(ids)] = ids
        sim[i, : len(ws)] = ws
        mask[i, : len(ids)] = True
    return assemble_batch(index, sim, mask, min(k, width))
