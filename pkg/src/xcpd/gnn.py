"""Message passing over the routed adjacency and projection back to time.

AGGR is a weight-normalized mean of neighbor states; COMB is
``relu(h @ w_self + m @ w_neigh + bias)``. States are row vectors, so layer
weights act on the right. Every function takes plain arrays or tape
variables.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape as T
from .errors import DimensionError
from .graph import PatchGrid
from .routing import FilteredAdjacency


@dataclass(frozen=True)
class GnnLayerParams:
    w_self: np.ndarray
    w_neigh: np.ndarray
    bias: np.ndarray


@dataclass(frozen=True)
class NodeStates:
    layer: int
    values: np.ndarray


def normalize_weights(weight, mask):
    """Row-normalize nonnegative edge weights; empty rows stay all-zero."""
    w = T.where(mask, weight, 0.0)
    total = T.sum(w, axis=-1, keepdims=True)
    has = T.value(total) > 0
    return T.where(has, w / T.where(has, total, 1.0), 0.0)


def aggregate(h, index, norm_weight):
    """Neighbor message ``m_i = sum_j w_ij h_j`` over padded neighbor slots.

    ``h`` is ``(..., n, d)``; ``index`` and ``norm_weight`` are ``(..., n, k)``.
    """
    hv = T.value(h)
    lead = hv.shape[:-2]
    n, d = hv.shape[-2:]
    k = index.shape[-1]
    flat_h = T.reshape(h, (-1, d))
    offsets = (np.arange(int(np.prod(lead, dtype=int))) * n).reshape(lead + (1, 1))
    flat_idx = (index + offsets).reshape(-1)
    gathered = T.reshape(T.getitem(flat_h, flat_idx), lead + (n, k, d))
    w = T.reshape(norm_weight, lead + (n, k, 1))
    return T.sum(gathered * w, axis=-2)


def layer_update(h, index, norm_weight, w_self, w_neigh, bias):
    msg = aggregate(h, index, norm_weight)
    return T.relu(h @ w_self + msg @ w_neigh + bias)


def _check(states_values, adj: FilteredAdjacency, params: GnnLayerParams):
    d = states_values.shape[-1]
    if states_values.shape[:-1] != adj.index.shape[:-1]:
        raise DimensionError(
            f"states {states_values.shape} do not match adjacency {adj.index.shape}"
        )
    for w in (params.w_self, params.w_neigh):
        if np.shape(w) != (d, d):
            raise DimensionError(f"layer weight {np.shape(w)} does not match d={d}")
    if np.shape(params.bias) != (d,):
        raise DimensionError(f"layer bias {np.shape(params.bias)} does not match d={d}")


def propagate_layer(states: NodeStates, adj: FilteredAdjacency, params: GnnLayerParams) -> NodeStates:
    h = np.asarray(states.values, dtype=np.float64)
    _check(h, adj, params)
    w = normalize_weights(adj.weight, adj.mask)
    out = layer_update(h, adj.index, w, params.w_self, params.w_neigh, params.bias)
    return NodeStates(states.layer + 1, out)


def propagate(states: NodeStates, adj: FilteredAdjacency, layers) -> NodeStates:
    layers = list(layers)
    if not layers:
        raise DimensionError("at least one GNN layer is required")
    for params in layers:
        states = propagate_layer(states, adj, params)
    return states


def project_nodes(h, proj_w, proj_b, grid: PatchGrid):
    """Map node states ``(..., n, d)`` to a ``(..., C, T')`` time grid."""
    hv = T.value(h)
    if hv.shape[-2] != grid.node_count or np.shape(T.value(proj_w)) != (hv.shape[-1], grid.patch_len):
        raise DimensionError(
            f"cannot project states {hv.shape} with {np.shape(T.value(proj_w))} onto {grid}"
        )
    lead = hv.shape[:-2]
    out = h @ proj_w + proj_b
    out = T.reshape(out, lead + (grid.channels, grid.padded_len))
    if grid.padded_len == grid.horizon:
        return out
    return T.getitem(out, (Ellipsis, slice(0, grid.horizon)))


def project_to_time(states: NodeStates, proj_w, proj_b, grid: PatchGrid) -> np.ndarray:
    return project_nodes(np.asarray(states.values, dtype=np.float64), proj_w, proj_b, grid)
