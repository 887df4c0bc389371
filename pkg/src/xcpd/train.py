"""Gradients, Adam, the training loop, and finite-difference gradient checks."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tape as T
from .errors import ConfigurationError
from .model import (
    PluginConfig,
    PluginParameters,
    forward,
    init_params,
    loss_mse,
    total_loss,
)
from .spectral import BAND_NAMES, SharedBasis

log = logging.getLogger(__name__)


def loss_and_grads(params, config, basis, pred, truth, training=False, rng=None, structure=None):
    """Forward with a fresh tape, then backward. Returns ``(loss, grads, trace)``."""
    tape = T.Tape()
    trace = forward(pred, params, config, basis, training=training, rng=rng,
                    tape=tape, structure=structure)
    loss = total_loss(trace, truth, config)
    grads = backward(trace, loss, tape)
    return float(loss.value), grads, trace


def backward(trace, loss, tape: T.Tape) -> dict[str, np.ndarray]:
    """Per-parameter gradients of ``loss``; discrete structure is constant."""
    return tape.backward(loss)


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: PluginParameters, grads: dict, state: AdamState) -> PluginParameters:
    """One bias-corrected Adam update; returns new parameters, mutates ``state``."""
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    out = {}
    for name, theta in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        out[name] = theta - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return PluginParameters(out)


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 10
    lr: float = 1e-4
    batch_size: int = 32
    patience: int = 3
    seed: int = 0


@dataclass
class TrainReport:
    epochs: list
    initial_val_loss: float
    best_epoch: int
    best_val_loss: float
    seed: int
    stopped_early: bool

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "initial_val_loss": self.initial_val_loss,
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
            "seed": self.seed,
            "stopped_early": self.stopped_early,
        }


def evaluate_mse(params, config, basis, preds, truths, batch_size=256) -> float:
    """Eq.-style MSE (channel sum, time mean) averaged over windows, noise off."""
    total = 0.0
    for start in range(0, len(preds), batch_size):
        sl = slice(start, start + batch_size)
        trace = forward(preds[sl], params, config, basis, training=False)
        total += float(loss_mse(trace.prediction, truths[sl])) * len(preds[sl])
    return total / len(preds)


class UsageCounter:
    def __init__(self):
        self.counts = np.zeros(3, dtype=np.int64)
        self.bands = np.zeros(3, dtype=np.int64)

    def add(self, structure):
        self.counts += np.bincount(structure.count.ravel() - 1, minlength=3)
        self.bands += structure.selected.reshape(-1, 3).sum(axis=0)

    def histogram(self) -> dict:
        cs = self.counts / max(self.counts.sum(), 1)
        bs = self.bands / max(self.bands.sum(), 1)
        return {
            "expert_count": {str(s + 1): float(cs[s]) for s in range(3)},
            "band": {BAND_NAMES[b]: float(bs[b]) for b in range(3)},
        }


def train(train_pred, train_truth, val_pred, val_truth, config: PluginConfig,
          basis: SharedBasis, settings: TrainSettings = TrainSettings(),
          params: PluginParameters | None = None):
    """Train the plugin with Adam and early stopping on validation MSE.

    The initial (identity) parameters are evaluated first and are a
    candidate for the returned best checkpoint, so validation MSE can never
    get worse than the backbone's.

    Returns
    -------
    TrainReport, PluginParameters
    """
    train_pred = np.asarray(train_pred, dtype=np.float64)
    train_truth = np.asarray(train_truth, dtype=np.float64)
    val_pred = np.asarray(val_pred, dtype=np.float64)
    val_truth = np.asarray(val_truth, dtype=np.float64)
    if len(train_pred) == 0 or len(val_pred) == 0:
        raise ConfigurationError("training and validation sets must be non-empty")

    seeds = np.random.SeedSequence(settings.seed).spawn(3)
    init_rng, shuffle_rng, noise_rng = (np.random.default_rng(s) for s in seeds)
    if params is None:
        params = init_params(config, init_rng)
    params.check(config)
    state = AdamState(lr=settings.lr)

    best = params.copy()
    best_val = initial_val = evaluate_mse(params, config, basis, val_pred, val_truth)
    best_epoch = 0
    history = []
    stale = 0
    stopped = False
    log.info("epoch 0: val %.6f (identity)", initial_val)

    for epoch in range(1, settings.epochs + 1):
        order = shuffle_rng.permutation(len(train_pred))
        usage = UsageCounter()
        loss_sum = 0.0
        for start in range(0, len(order), settings.batch_size):
            idx = order[start:start + settings.batch_size]
            loss, grads, trace = loss_and_grads(
                params, config, basis, train_pred[idx], train_truth[idx],
                training=True, rng=noise_rng,
            )
            usage.add(trace.structure)
            loss_sum += loss * len(idx)
            params = adam_step(params, grads, state)
        val = evaluate_mse(params, config, basis, val_pred, val_truth)
        record = {"epoch": epoch, "train_loss": loss_sum / len(order), "val_loss": val}
        record.update(usage.histogram())
        history.append(record)
        log.info("epoch %d: train %.6f val %.6f", epoch, record["train_loss"], val)
        if val < best_val:
            best, best_val, best_epoch, stale = params.copy(), val, epoch, 0
        else:
            stale += 1
            if stale >= settings.patience:
                stopped = True
                break

    report = TrainReport(history, initial_val, best_epoch, best_val, settings.seed, stopped)
    return report, best


def randomize_params(config: PluginConfig, rng, scale: float = 0.5) -> PluginParameters:
    """Every tensor drawn from N(0, scale^2); used to exercise all gradient paths."""
    params = init_params(config, rng)
    return PluginParameters({k: scale * rng.standard_normal(v.shape) for k, v in params.items()})


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    coordinates: int
    compared: int
    worst: str


def grad_check(config: PluginConfig, seed: int, h: float = 1e-4, floor: float = 1e-8,
               randomize: bool = True, batch: int = 1) -> GradCheckReport:
    """Compare tape gradients with central differences at frozen topology.

    Coordinates where both gradients are below ``floor`` in magnitude are
    skipped for the relative error.
    """
    if config.n > 24 or config.embed_dim > 4 or config.gnn_layers > 2:
        raise ConfigurationError("grad_check is meant for tiny configs (n<=24, d<=4, L<=2)")
    rng = np.random.default_rng(seed)
    params = randomize_params(config, rng) if randomize else init_params(config, rng)
    shape = (batch, config.channels, config.horizon)
    pred = rng.standard_normal(shape)
    truth = rng.standard_normal(shape)
    basis = random_basis(config.n, rng)

    _, grads, trace = loss_and_grads(params, config, basis, pred, truth)
    structure = trace.structure

    def loss_at(p):
        tr = forward(pred, p, config, basis, structure=structure)
        return float(total_loss(tr, truth, config))

    worst_rel, worst_abs, worst, compared, total = 0.0, 0.0, "", 0, 0
    for name, theta in params.items():
        for i in np.ndindex(theta.shape):
            total += 1
            plus, minus = params.copy(), params.copy()
            plus.tensors[name][i] += h
            minus.tensors[name][i] -= h
            numeric = (loss_at(plus) - loss_at(minus)) / (2 * h)
            analytic = float(grads[name][i])
            err = abs(analytic - numeric)
            worst_abs = max(worst_abs, err)
            if max(abs(analytic), abs(numeric)) < floor:
                continue
            compared += 1
            rel = err / max(abs(analytic), abs(numeric))
            if rel > worst_rel:
                worst_rel, worst = rel, f"{name}{list(i)}"
    return GradCheckReport(worst_rel, worst_abs, total, compared, worst)


def random_basis(n: int, rng) -> SharedBasis:
    """Shared basis of a random shifted-cosine graph (for tests and checks)."""
    from .graph import cosine_adjacency, nonneg_shift, normalized_laplacian
    from .spectral import fit_shared_basis

    emb = rng.standard_normal((n, 4))
    lap = normalized_laplacian(nonneg_shift(cosine_adjacency(emb)))
    return fit_shared_basis([lap])
