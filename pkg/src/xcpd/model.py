"""The plugin: forward pass, gated dual-path residual, losses, checkpoints.

``forward`` maps backbone forecasts ``(C, T')`` (or a batch ``(B, C, T')``)
to refined forecasts of the same shape. Discrete structure (band labels,
ego-graph neighbors, expert sets) is computed from the current embeddings
and stored in :class:`Structure`; passing a structure back in freezes it,
which is how finite-difference checks hold topology fixed.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import tape as T
from .errors import ConfigurationError, DimensionError, UsageError
from .gnn import layer_update, normalize_weights, project_nodes
from .graph import PatchGrid, cosine_adjacency, knn_count, knn_indices, patch, unit_rows
from .routing import FilteredAdjacency, assemble_batch, draw_noise, filter_mask, select_batch
from .spectral import (
    BandPartition,
    SharedBasis,
    band_memberships,
    energy_response,
    equal_thirds,
    gft,
    group_nodes,
)

CHECKPOINT_FORMAT = "xcpd-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class PluginConfig:
    channels: int
    horizon: int
    patch_len: int = 6
    embed_dim: int = 32
    gnn_layers: int = 1
    knn_ratio: float = 0.5
    tau: float = 0.5
    noise_scale: float = 1.0
    temperature: float = 5.0
    tau1: float | None = None
    tau2: float | None = None
    mu: float = 0.01
    beta: float = 0.01
    delta_stab: float = 1e-8

    def __post_init__(self):
        for name in ("channels", "horizon", "patch_len", "embed_dim", "gnn_layers"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if not 0.0 < self.knn_ratio <= 1.0:
            raise ConfigurationError("knn_ratio must lie in (0, 1]")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigurationError("tau must lie in [0, 1]")
        for name in ("noise_scale", "mu", "beta"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be nonnegative")
        if self.temperature <= 0 or self.delta_stab <= 0:
            raise ConfigurationError("temperature and delta_stab must be positive")
        if (self.tau1 is None) != (self.tau2 is None):
            raise ConfigurationError("set both tau1 and tau2, or neither")
        PatchGrid(self.channels, self.horizon, self.patch_len)
        if self.tau1 is not None:
            band_memberships(self.tau1, self.tau2, self.temperature, self.n)

    @property
    def grid(self) -> PatchGrid:
        return PatchGrid(self.channels, self.horizon, self.patch_len)

    @property
    def n(self) -> int:
        return self.grid.node_count

    @property
    def k(self) -> int:
        return knn_count(self.n, self.knn_ratio)

    def bands(self) -> BandPartition:
        if self.tau1 is None:
            return equal_thirds(self.n, self.temperature)
        return band_memberships(self.tau1, self.tau2, self.temperature, self.n)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PluginConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown plugin config keys: {sorted(unknown)}")
        return cls(**data)


def param_shapes(config: PluginConfig) -> dict[str, tuple]:
    d, p, t, c = config.embed_dim, config.patch_len, config.horizon, config.channels
    shapes = {
        "embed.w": (p, d),
        "embed.b": (d,),
        "router.w_clean": (d, 3),
        "router.b_clean": (3,),
        "router.w_noise": (d, 3),
        "router.b_noise": (3,),
    }
    for layer in range(config.gnn_layers):
        shapes[f"gnn.{layer}.w_self"] = (d, d)
        shapes[f"gnn.{layer}.w_neigh"] = (d, d)
        shapes[f"gnn.{layer}.bias"] = (d,)
    shapes.update({
        "node_proj.w": (d, p),
        "node_proj.b": (p,),
        "time_proj.w": (t, t),
        "time_proj.b": (t,),
        "lin.w": (t, t),
        "lin.b": (t,),
        "gate.gnn": (c,),
        "gate.lin": (c,),
    })
    return shapes


class PluginParameters:
    """Named parameter tensors in a fixed order."""

    def __init__(self, tensors: dict[str, np.ndarray]):
        self.tensors = {k: np.asarray(v, dtype=np.float64) for k, v in tensors.items()}

    def __getitem__(self, name):
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def copy(self) -> "PluginParameters":
        return PluginParameters({k: v.copy() for k, v in self.tensors.items()})

    def check(self, config: PluginConfig):
        expected = param_shapes(config)
        if list(expected) != list(self.tensors):
            raise ConfigurationError("parameter names do not match the configuration")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise DimensionError(f"{name}: expected {shape}, got {self.tensors[name].shape}")

    def equal(self, other: "PluginParameters") -> bool:
        return list(self) == list(other) and all(
            np.array_equal(self[k], other[k]) for k in self
        )


# tensors that close each correction path; zero makes the plugin the identity
ZERO_INIT = ("time_proj.w", "time_proj.b", "lin.w", "lin.b", "gate.gnn", "gate.lin")


def init_params(config: PluginConfig, rng) -> PluginParameters:
    """Uniform(-1/sqrt(d), 1/sqrt(d)) weights, zero biases, zero output paths.

    The GNN and node projection start random so that their gradients are not
    stuck at zero; the residual identity at step 0 comes from the zero
    time projection, linear path, and biases.
    """
    bound = 1.0 / math.sqrt(config.embed_dim)
    tensors = {}
    for name, shape in param_shapes(config).items():
        is_bias = name.endswith(".b") or name.endswith(".bias") or name.startswith("router.b")
        if name in ZERO_INIT or is_bias:
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = rng.uniform(-bound, bound, size=shape)
    return PluginParameters(tensors)


@dataclass
class Structure:
    """Discrete per-forward structure; carries no gradient."""

    labels: np.ndarray
    ego_index: np.ndarray
    ego_similarity: np.ndarray
    noise: np.ndarray
    order: np.ndarray
    count: np.ndarray
    selected: np.ndarray
    adjacency: FilteredAdjacency


@dataclass
class ForwardTrace:
    grid: PatchGrid
    backbone: np.ndarray
    patches: np.ndarray
    embeddings: np.ndarray
    spectrum: np.ndarray | None
    energy: np.ndarray | None
    structure: Structure
    routing_probs: np.ndarray
    hidden: np.ndarray
    delta_gnn: np.ndarray
    delta_lin: np.ndarray
    prediction: np.ndarray
    batched: bool
    vars: dict = field(default_factory=dict, repr=False)

    def var(self, name):
        """Tape variable (or plain array) for ``prediction`` or ``routing_probs``."""
        return self.vars.get(name, getattr(self, name))


def compute_structure(emb, config: PluginConfig, basis: SharedBasis, bands: BandPartition,
                      psi_clean, noise_branch, noise):
    """Band labels, ego-graphs, expert selection, and the routed adjacency."""
    spec = gft(basis, emb)
    energy = energy_response(basis, spec)
    groups = group_nodes(energy, bands)
    sim = cosine_adjacency(emb).values
    ego_index, ego_sim = knn_indices(sim, config.k)
    psi = psi_clean if not np.any(noise) else psi_clean + noise * noise_branch
    _, order, count, selected = select_batch(psi, config.tau)
    mask = filter_mask(ego_index, groups.labels, selected)
    adjacency = assemble_batch(ego_index, ego_sim, mask, max(config.k, 1))
    structure = Structure(groups.labels, ego_index, ego_sim, noise, order, count, selected, adjacency)
    return structure, spec, energy


def forward(backbone_pred, params: PluginParameters, config: PluginConfig, basis: SharedBasis,
            training: bool = False, rng=None, tape: T.Tape | None = None,
            structure: Structure | None = None, bands: BandPartition | None = None) -> ForwardTrace:
    """Run the full plugin on ``(C, T')`` or ``(B, C, T')`` backbone output.

    With ``tape`` given, parameters are registered on it and the returned
    trace exposes tape variables through :meth:`ForwardTrace.var`.
    """
    x = np.asarray(backbone_pred, dtype=np.float64)
    batched = x.ndim == 3
    if not batched:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (config.channels, config.horizon):
        raise DimensionError(
            f"backbone output {x.shape[-2:]} does not match config "
            f"({config.channels}, {config.horizon})"
        )
    if basis.n != config.n:
        raise ConfigurationError(f"basis has n={basis.n}, configuration needs n={config.n}")
    bands = bands or config.bands()

    p = {name: (tape.param(name, v) if tape is not None else v) for name, v in params.items()}
    grid, patches = patch(x, config.patch_len)

    emb = patches @ p["embed.w"] + p["embed.b"]
    emb_v = T.value(emb)
    clean = emb @ p["router.w_clean"] + p["router.b_clean"]
    noise_pre = emb @ p["router.w_noise"] + p["router.b_noise"]
    noise_branch = T.softplus(noise_pre)

    spec = energy = None
    if structure is None:
        noise = draw_noise(T.value(clean).shape, config.noise_scale, training, rng)
        structure, spec, energy = compute_structure(
            emb_v, config, basis, bands, T.value(clean), T.value(noise_branch), noise
        )
    psi = clean + structure.noise * noise_branch if np.any(structure.noise) else clean
    probs = T.softmax(psi)

    adj = structure.adjacency
    if adj.k:
        xhat = _unit_rows_var(emb)
        b, n = emb_v.shape[:2]
        flat = T.reshape(xhat, (b * n, -1))
        offsets = (np.arange(b) * n)[:, None, None]
        nb = T.reshape(T.getitem(flat, (adj.index + offsets).reshape(-1)), (b, n, adj.k, -1))
        cos = T.sum(nb * T.reshape(xhat, (b, n, 1, -1)), axis=-1)
        weight = normalize_weights(0.5 * (cos + 1.0), adj.mask)
    else:
        weight = np.zeros(adj.index.shape)

    h = emb
    for layer in range(config.gnn_layers):
        h = layer_update(h, adj.index, weight, p[f"gnn.{layer}.w_self"],
                         p[f"gnn.{layer}.w_neigh"], p[f"gnn.{layer}.bias"])
    hidden = project_nodes(h, p["node_proj.w"], p["node_proj.b"], grid)
    delta_gnn = hidden @ p["time_proj.w"] + p["time_proj.b"]
    delta_lin = x @ p["lin.w"] + p["lin.b"]
    g_gnn = T.reshape(T.sigmoid(p["gate.gnn"]), (config.channels, 1))
    g_lin = T.reshape(T.sigmoid(p["gate.lin"]), (config.channels, 1))
    pred = x + g_gnn * delta_gnn + g_lin * delta_lin

    def out(v):
        v = T.value(v)
        return v if batched else v[0]

    return ForwardTrace(
        grid=grid,
        backbone=x if batched else x[0],
        patches=out(patches),
        embeddings=out(emb),
        spectrum=None if spec is None else out(spec),
        energy=None if energy is None else out(energy),
        structure=structure,
        routing_probs=out(probs),
        hidden=out(hidden),
        delta_gnn=out(delta_gnn),
        delta_lin=out(delta_lin),
        prediction=out(pred),
        batched=batched,
        vars={"prediction": pred, "routing_probs": probs} if tape is not None else {},
    )


def _unit_rows_var(emb):
    """Differentiable row normalization; zero rows map to zero."""
    if not isinstance(emb, T.Var):
        return unit_rows(emb)[0]
    norms = T.sqrt(T.sum(emb * emb, axis=-1, keepdims=True))
    ok = T.value(norms) > 1e-12
    return T.where(ok, emb / T.where(ok, norms, 1.0), 0.0)


def loss_mse(pred, truth):
    """Squared error summed over channels, averaged over time (and windows)."""
    pv, tv = T.value(pred), np.asarray(truth, dtype=np.float64)
    if pv.shape != tv.shape:
        raise DimensionError(f"prediction {pv.shape} and truth {tv.shape} differ")
    diff = pred - tv
    per_window = T.sum(diff * diff, axis=(-2, -1))
    horizon = pv.shape[-1]
    windows = int(np.prod(pv.shape[:-2], dtype=int))
    return T.sum(per_window) * (1.0 / (horizon * windows))


def _rows(r):
    rv = T.value(r)
    return T.reshape(r, (-1, rv.shape[-1])) if rv.ndim != 2 else r


def loss_entropy(probs, delta: float = 1e-8):
    r = _rows(probs)
    n = T.value(r).shape[0]
    return T.sum(r * T.log(r + delta)) * (-1.0 / n)


def loss_balance(probs, delta: float = 1e-8):
    """Mean over rows of population std / (mean + delta)."""
    r = _rows(probs)
    n = T.value(r).shape[0]
    mu = T.mean(r, axis=-1, keepdims=True)
    centered = r - mu
    std = T.sqrt(T.mean(centered * centered, axis=-1, keepdims=True))
    return T.sum(std / (mu + delta)) * (1.0 / n)


def total_loss(trace: ForwardTrace, truth, config: PluginConfig):
    pred = trace.var("prediction")
    probs = trace.var("routing_probs")
    loss = loss_mse(pred, truth)
    if config.mu:
        loss = loss + config.mu * loss_entropy(probs, config.delta_stab)
    if config.beta:
        loss = loss + config.beta * loss_balance(probs, config.delta_stab)
    return loss


def save_checkpoint(path, config: PluginConfig, params: PluginParameters,
                    extras: dict | None = None, meta: dict | None = None) -> None:
    """Write config, parameters, and extra arrays as versioned JSON.

    Floats are written with ``repr`` precision, so reading back is exact.
    """
    tensors = {}
    for prefix, group in (("param", params.tensors), ("extra", extras or {})):
        for name, arr in group.items():
            arr = np.asarray(arr, dtype=np.float64)
            tensors[f"{prefix}:{name}"] = {"shape": list(arr.shape), "data": arr.ravel().tolist()}
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "meta": meta or {},
        "tensors": tensors,
    }
    Path(path).write_text(json.dumps(doc, allow_nan=False) + "\n")


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`: ``(config, params, extras, meta)``."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise UsageError(f"{path} is not an xcpd checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise UsageError(f"unsupported checkpoint version {doc.get('version')}")
    config = PluginConfig.from_dict(doc["config"])
    params, extras = {}, {}
    for key, rec in doc["tensors"].items():
        prefix, name = key.split(":", 1)
        arr = np.array(rec["data"], dtype=np.float64).reshape(rec["shape"])
        (params if prefix == "param" else extras)[name] = arr
    params = PluginParameters(params)
    params.check(config)
    return config, params, extras, doc.get("meta", {})
