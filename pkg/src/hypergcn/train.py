"""Optimization, evaluation and score-level ensembling."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import ConfigError, EpochOutOfRange, NonFiniteGradient, ShapeMismatch
from .network import HyperGCN, log_softmax

log = logging.getLogger(__name__)


@dataclass
class OptimConfig:
    base_lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0004
    warmup_epochs: int = 5
    step_epochs: tuple = (110, 120)
    step_factors: tuple = (0.1, 0.1)
    total_epochs: int = 140
    batch_size: int = 64
    # Global gradient-norm cap (0 disables).  Edge weights are signed, so a
    # vertex degree can sit near zero and the propagator then spikes.
    clip_norm: float = 1.0

    def __post_init__(self):
        self.step_epochs = tuple(int(e) for e in self.step_epochs)
        self.step_factors = tuple(float(f) for f in self.step_factors)
        self.validate()

    def validate(self):
        if self.base_lr <= 0 or self.total_epochs <= 0 or self.batch_size <= 0:
            raise ConfigError("base_lr, total_epochs and batch_size must be positive")
        if not 0 <= self.momentum < 1 or self.weight_decay < 0 or self.warmup_epochs < 0:
            raise ConfigError("momentum must lie in [0, 1); weight_decay, warmup_epochs >= 0")
        if len(self.step_epochs) != len(self.step_factors):
            raise ConfigError("step_epochs and step_factors must have equal length")
        if list(self.step_epochs) != sorted(self.step_epochs) or \
                any(e >= self.total_epochs for e in self.step_epochs):
            raise ConfigError("step_epochs must be ascending and below total_epochs")
        if any(f <= 0 for f in self.step_factors):
            raise ConfigError("step_factors must be positive")
        if self.clip_norm < 0:
            raise ConfigError("clip_norm must be >= 0")


def lr_at(epoch: int, cfg: OptimConfig) -> float:
    """Linear per-epoch warmup, then piecewise-constant step decay.

    Values are rounded to 12 significant digits so that products such as
    0.05 * 0.1 land on the intended decimal.
    """
    if not 0 <= epoch < cfg.total_epochs:
        raise EpochOutOfRange(f"epoch {epoch} outside [0, {cfg.total_epochs})")
    if epoch < cfg.warmup_epochs:
        lr = cfg.base_lr * (epoch + 1) / cfg.warmup_epochs
    else:
        lr = cfg.base_lr
        for e, f in zip(cfg.step_epochs, cfg.step_factors):
            if epoch >= e:
                lr *= f
    return float(f"{lr:.12g}")


@dataclass
class TrainState:
    seed: int = 0
    epoch: int = 0
    step: int = 0
    momenta: dict = field(default_factory=dict)
    best_acc: float = float("-inf")

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)


def sgd_step(params: dict, grads: dict, state: TrainState, lr: float, cfg: OptimConfig,
             decay_mask: dict | None = None) -> None:
    """In-place Nesterov SGD with coupled weight decay.

    g = grad + wd * p;  m = mu * m + g;  p -= lr * (g + mu * m)
    Parameters mapped to False in ``decay_mask`` skip the decay term.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"gradient of {name} is not finite")
    for name, p in params.items():
        g = grads[name]
        if cfg.weight_decay and (decay_mask is None or decay_mask.get(name, True)):
            g = g + cfg.weight_decay * p
        m = state.momenta.get(name)
        m = g.copy() if m is None else cfg.momentum * m + g
        state.momenta[name] = m
        p -= lr * (g + cfg.momentum * m)
    state.step += 1


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Rescale all gradients in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    norm = float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))
    if max_norm and norm > max_norm:
        for g in grads.values():
            g *= max_norm / norm
    return norm


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def train_epoch(model: HyperGCN, data: Dataset, state: TrainState, cfg: OptimConfig,
                lr: float | None = None) -> dict:
    """One shuffled pass; returns the mean loss and accuracy seen during training."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    lr = lr_at(state.epoch, cfg) if lr is None else lr
    model.train()
    params, decay = model.parameters(), model.decay_mask()
    tot_loss, correct = 0.0, 0
    for idx in _batches(len(data), cfg.batch_size, state.rng):
        model.zero_grad()
        loss, logits = model.loss_and_backward(data.x[idx], data.labels[idx], data.mask[idx])
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite loss at step {state.step}")
        grads = model.gradients()
        clip_gradients(grads, cfg.clip_norm)
        sgd_step(params, grads, state, lr, cfg, decay)
        tot_loss += loss * len(idx)
        correct += int(np.sum(logits.argmax(axis=1) == data.labels[idx]))
    state.epoch += 1
    return {"lr": lr, "loss": tot_loss / len(data), "acc": correct / len(data)}


def accuracy(scores: np.ndarray, labels: np.ndarray) -> float:
    """Top-1 accuracy; np.argmax already breaks ties toward the lower class."""
    if len(labels) == 0:
        return float("nan")
    return float(np.mean(np.argmax(scores, axis=1) == labels))


def evaluate(model: HyperGCN, data: Dataset, batch_size: int = 64) -> float:
    return accuracy(model.predict(data.x, data.mask, batch_size), data.labels)


def softmax(z):
    return np.exp(log_softmax(z))


def fuse_scores(score_sets, weights=None) -> np.ndarray:
    if not score_sets:
        raise ValueError("need at least one score set")
    shape = np.shape(score_sets[0])
    if any(np.shape(s) != shape for s in score_sets):
        raise ShapeMismatch("score sets differ in shape")
    weights = [1.0] * len(score_sets) if weights is None else list(weights)
    if len(weights) != len(score_sets) or not np.all(np.isfinite(weights)):
        raise ValueError("need one finite weight per score set")
    return sum(w * softmax(np.asarray(s, dtype=np.float64)) for w, s in zip(weights, score_sets))


def ensemble_scores(score_sets, labels, weights=None) -> float:
    """Accuracy of the weighted sum of per-stream softmax probabilities."""
    return accuracy(fuse_scores(score_sets, weights), np.asarray(labels))


def fit(model: HyperGCN, train: Dataset, cfg: OptimConfig, state: TrainState | None = None,
        val: Dataset | None = None, on_epoch=None) -> list[dict]:
    state = TrainState() if state is None else state
    history = []
    while state.epoch < cfg.total_epochs:
        m = train_epoch(model, train, state, cfg)
        m["epoch"] = state.epoch - 1
        m["val_acc"] = evaluate(model, val) if val is not None and len(val) else float("nan")
        if m["val_acc"] == m["val_acc"]:
            state.best_acc = max(state.best_acc, m["val_acc"])
        log.info("epoch %d lr %.6g loss %.4f acc %.4f val %.4f",
                 m["epoch"], m["lr"], m["loss"], m["acc"], m["val_acc"])
        history.append(m)
        if on_epoch is not None:
            on_epoch(m)
    return history
