"""Minibatch SGD over the learning channel, with momentum, decay and early stopping."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .channel import (
    ChannelConfig,
    ChannelParams,
    Updates,
    alignment,
    channel_norms,
    check_channel,
    learning_step,
)
from .core_math import ConfigError, make_rng
from .datasets import Dataset
from .forward_net import NetworkParams, predict_and_score

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EarlyStop:
    """Stop when validation error rises by more than ``threshold`` (absolute
    fraction, 0.01 = one percentage point) between checks ``window`` updates apart."""

    threshold: float = 0.01
    window: int = 5000

    def __post_init__(self):
        if self.threshold < 0 or self.window < 1:
            raise ConfigError("early stop needs threshold >= 0 and window >= 1")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 100
    lr: float = 0.1
    momentum: float = 0.0
    lr_decay: float = 0.0
    dropout: float = 0.0
    early_stop: EarlyStop | None = None
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.lr >= 0:
            raise ConfigError("lr must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if not 0.0 <= self.lr_decay < 1.0:
            raise ConfigError("lr_decay must be in [0, 1)")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")


@dataclass
class MetricsRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float | None = None
    val_accuracy: float | None = None
    alignment: list[float] | None = None
    channel_norms: list[float] = field(default_factory=list)
    lr: float = 0.0
    updates: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


class DivergenceError(RuntimeError):
    """A parameter became non-finite; ``metrics`` holds the records so far."""

    def __init__(self, message: str, metrics: list[MetricsRecord], record: dict):
        super().__init__(message)
        self.metrics = metrics
        self.record = record


@dataclass
class TrainResult:
    net: NetworkParams
    channel: ChannelParams
    metrics: list[MetricsRecord]
    stopped_early: bool = False
    updates: int = 0


def should_stop(val_errors: list[float], threshold: float) -> bool:
    """Early-stop rule on the sequence of validation errors at successive checks."""
    if len(val_errors) < 2:
        return False
    return val_errors[-1] - val_errors[-2] > threshold


def epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    """A fresh permutation cut into batches; the final partial batch is kept."""
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _record(epoch, net, channel, ccfg, train, val, lr, updates) -> MetricsRecord:
    tr = predict_and_score(net, train)
    rec = MetricsRecord(
        epoch=epoch,
        train_loss=tr.loss,
        train_accuracy=tr.accuracy,
        alignment=alignment(net, channel, ccfg),
        channel_norms=channel_norms(channel),
        lr=lr,
        updates=updates,
    )
    if val is not None:
        va = predict_and_score(net, val)
        rec.val_loss, rec.val_accuracy = va.loss, va.accuracy
    return rec


def train(
    net: NetworkParams,
    channel: ChannelParams,
    ccfg: ChannelConfig,
    train_data: Dataset,
    cfg: TrainConfig,
    val_data: Dataset | None = None,
    on_epoch=None,
) -> TrainResult:
    """Train copies of ``net`` and ``channel``; one metrics record per epoch.

    Per batch: forward pass, error signals and all deltas from the pre-update
    parameters, then heavy-ball momentum ``v <- m v + delta; w <- w + v`` on
    forward weights, biases and adaptive channel matrices, then
    ``lr <- lr * (1 - lr_decay)``. Raises :class:`DivergenceError` as soon as a
    parameter is non-finite.
    """
    if train_data.n_features != net.input_size or train_data.n_targets != net.sizes[-1]:
        raise ConfigError("dataset shape does not match the network")
    check_channel(ccfg, net, channel)
    if cfg.early_stop is not None and val_data is None:
        raise ConfigError("early stopping needs a validation set")
    net, channel = net.copy(), channel.copy()
    rng = make_rng(cfg.seed)
    lr = cfg.lr
    lr_scale = 1.0 if ccfg.lr is None or cfg.lr == 0 else ccfg.lr / cfg.lr
    velocity: Updates | None = None
    metrics: list[MetricsRecord] = []
    val_errors: list[float] = []
    updates = 0
    stopped = False
    x, t = train_data.features, train_data.targets

    for epoch in range(1, cfg.epochs + 1):
        for idx in epoch_batches(len(train_data), cfg.batch_size, rng):
            step_cfg = ccfg if ccfg.lr is None else _with_lr(ccfg, lr * lr_scale)
            upd = learning_step(net, channel, step_cfg, x[idx], t[idx], lr, cfg.dropout, rng)
            if cfg.momentum:
                velocity = _momentum(velocity, upd, cfg.momentum)
                upd = velocity
            for w, d in zip(net.weights, upd.dW):
                w += d
            for b, d in zip(net.biases, upd.db):
                b += d
            for c, d in zip(channel.matrices, upd.dC):
                c += d
            updates += 1
            lr *= 1.0 - cfg.lr_decay
            if not (net.all_finite() and channel.all_finite()):
                record = {"epoch": epoch, "update": updates, "reason": "non-finite parameter"}
                log.error("diverged at epoch %d, update %d", epoch, updates)
                raise DivergenceError("training diverged: non-finite parameter", metrics, record)
            es = cfg.early_stop
            if es is not None and updates % es.window == 0:
                val_errors.append(1.0 - predict_and_score(net, val_data).accuracy)
                if should_stop(val_errors, es.threshold):
                    stopped = True
                    break
        rec = _record(epoch, net, channel, ccfg, train_data, val_data, lr, updates)
        metrics.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        log.info("epoch %d train_acc=%.4f train_loss=%.4f", epoch, rec.train_accuracy, rec.train_loss)
        if stopped:
            break
    return TrainResult(net, channel, metrics, stopped, updates)


def _with_lr(ccfg: ChannelConfig, lr: float) -> ChannelConfig:
    return replace(ccfg, lr=lr)


def _momentum(v: Updates | None, upd: Updates, m: float) -> Updates:
    if v is None:
        return Updates([d.copy() for d in upd.dW], [d.copy() for d in upd.db], [d.copy() for d in upd.dC])
    return Updates(
        [m * a + d for a, d in zip(v.dW, upd.dW)],
        [m * a + d for a, d in zip(v.db, upd.db)],
        [m * a + d for a, d in zip(v.dC, upd.dC)],
    )
