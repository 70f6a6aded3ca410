"""Numerical substrate: matrices, seeded RNG, initializers, transfer functions, losses.

Matrices are plain 2-D ``float64`` numpy arrays. Batches are stored row-wise
(``batch x units``) everywhere.

The RNG is numpy's ``Generator`` over the PCG64 bit generator, which produces
the same stream for the same seed on every platform numpy supports.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, xlogy


class ConfigError(ValueError):
    """Inconsistent shapes, pairings or settings."""


class DomainError(ValueError):
    """A function was evaluated outside the set where it is defined."""


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic child seed for a substream (shard, worker, sweep member)."""
    ss = np.random.SeedSequence([seed, *keys])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ConfigError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


# -- initializers ---------------------------------------------------------

_INIT_KINDS = ("scaled-normal", "scaled-uniform", "zero", "constant")
_SCALE_RULES = ("2/(fanin+fanout)", "1/(fanin+fanout)", "explicit")


@dataclass(frozen=True)
class Initializer:
    """Weight initialization scheme.

    ``scale_rule`` gives the target variance: ``2/(fanin+fanout)`` is the
    Glorot scheme, ``1/(fanin+fanout)`` the narrower one used for some
    learning channels, ``explicit`` uses ``variance`` directly. ``value`` is
    only read by the ``constant`` kind.
    """

    kind: str = "scaled-normal"
    scale_rule: str = "2/(fanin+fanout)"
    variance: float = 1.0
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in _INIT_KINDS:
            raise ConfigError(f"unknown initializer kind {self.kind!r}")
        if self.scale_rule not in _SCALE_RULES:
            raise ConfigError(f"unknown scale rule {self.scale_rule!r}")
        if self.scale_rule == "explicit" and not self.variance >= 0:
            raise ConfigError("explicit variance must be non-negative")

    def target_variance(self, rows: int, cols: int) -> float:
        # rows = fan-out, cols = fan-in for an (N_h x N_{h-1}) matrix
        if self.scale_rule == "2/(fanin+fanout)":
            return 2.0 / (rows + cols)
        if self.scale_rule == "1/(fanin+fanout)":
            return 1.0 / (rows + cols)
        return float(self.variance)


def sample(init: Initializer, rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    if rows < 1 or cols < 1:
        raise ConfigError(f"matrix shape must be positive, got {rows}x{cols}")
    if init.kind == "zero":
        return np.zeros((rows, cols))
    if init.kind == "constant":
        return np.full((rows, cols), float(init.value))
    var = init.target_variance(rows, cols)
    if init.kind == "scaled-normal":
        return rng.normal(0.0, np.sqrt(var), size=(rows, cols))
    # uniform on [-a, a] has variance a^2 / 3
    a = np.sqrt(3.0 * var)
    return rng.uniform(-a, a, size=(rows, cols))


# -- transfer functions ---------------------------------------------------

_TRANSFER_KINDS = ("identity", "tanh", "logistic", "relu", "softmax", "power")


@dataclass(frozen=True)
class TransferFunction:
    kind: str
    mu: float = 1.0

    def __post_init__(self):
        if self.kind not in _TRANSFER_KINDS:
            raise ConfigError(f"unknown transfer function {self.kind!r}")
        if self.kind == "power" and not self.mu > 0:
            raise ConfigError("power transfer needs mu > 0")

    @property
    def name(self) -> str:
        return f"power({self.mu:g})" if self.kind == "power" else self.kind

    @classmethod
    def parse(cls, text: str) -> "TransferFunction":
        text = text.strip().lower()
        if text == "linear":
            return cls("identity")
        if text.startswith("power(") and text.endswith(")"):
            try:
                return cls("power", float(text[6:-1]))
            except ValueError:
                raise ConfigError(f"bad power exponent in {text!r}") from None
        return cls(text)

    def _integer_power(self) -> bool:
        return float(self.mu).is_integer()


IDENTITY = TransferFunction("identity")
TANH = TransferFunction("tanh")
LOGISTIC = TransferFunction("logistic")
RELU = TransferFunction("relu")
SOFTMAX = TransferFunction("softmax")


def _check_power_domain(f: TransferFunction, s: np.ndarray) -> None:
    if not f._integer_power() and np.any(s < 0):
        raise DomainError(f"power({f.mu:g}) is undefined for negative input")


def softmax(s: np.ndarray) -> np.ndarray:
    z = s - np.max(s, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def apply_transfer(f: TransferFunction, s) -> np.ndarray:
    """Evaluate ``f`` on ``s``; softmax normalizes along the last axis."""
    s = np.asarray(s, dtype=float)
    k = f.kind
    if k == "identity":
        return s.copy()
    if k == "tanh":
        return np.tanh(s)
    if k == "logistic":
        return expit(s)
    if k == "relu":
        return np.maximum(s, 0.0)
    if k == "softmax":
        return softmax(s)
    _check_power_domain(f, s)
    return s ** f.mu


def transfer_derivative(f: TransferFunction, s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    k = f.kind
    if k == "identity":
        return np.ones_like(s)
    if k == "tanh":
        return 1.0 - np.tanh(s) ** 2
    if k == "logistic":
        y = expit(s)
        return y * (1.0 - y)
    if k == "relu":
        return (s > 0).astype(float)
    if k == "softmax":
        raise ConfigError("softmax has no elementwise derivative; pair it with cross-entropy")
    _check_power_domain(f, s)
    if f.mu < 1 and np.any(s == 0):
        raise DomainError(f"derivative of power({f.mu:g}) is infinite at 0")
    return f.mu * s ** (f.mu - 1.0)


# -- losses ---------------------------------------------------------------

_LOSS_KINDS = ("squared-error", "cross-entropy-softmax", "cross-entropy-logistic")
_MATCHED_OUTPUT = {
    "squared-error": "identity",
    "cross-entropy-softmax": "softmax",
    "cross-entropy-logistic": "logistic",
}


@dataclass(frozen=True)
class Loss:
    kind: str

    def __post_init__(self):
        if self.kind not in _LOSS_KINDS:
            raise ConfigError(f"unknown loss {self.kind!r}")

    @property
    def output_transfer(self) -> str:
        return _MATCHED_OUTPUT[self.kind]


def loss_for_output(f: TransferFunction) -> Loss:
    """The loss whose output delta is exactly T - O for output transfer ``f``."""
    for kind, out in _MATCHED_OUTPUT.items():
        if out == f.kind:
            return Loss(kind)
    raise ConfigError(f"no matched loss for output transfer {f.name}")


def output_delta(loss: Loss, target, output, output_transfer: TransferFunction | None = None) -> np.ndarray:
    """Top-layer error signal ``T - O`` (= -dE/dS^L for the matched pairing)."""
    if output_transfer is not None and output_transfer.kind != loss.output_transfer:
        raise ConfigError(
            f"loss {loss.kind} requires {loss.output_transfer} outputs, got {output_transfer.name}"
        )
    target = np.asarray(target, dtype=float)
    output = np.asarray(output, dtype=float)
    if target.shape != output.shape:
        raise ConfigError(f"target shape {target.shape} != output shape {output.shape}")
    return target - output


_TINY = 1e-300


def loss_value(loss: Loss, target, output) -> float:
    """Mean per-example loss over the batch (rows)."""
    t = np.atleast_2d(np.asarray(target, dtype=float))
    o = np.atleast_2d(np.asarray(output, dtype=float))
    if loss.kind == "squared-error":
        per = 0.5 * np.sum((t - o) ** 2, axis=1)
    elif loss.kind == "cross-entropy-softmax":
        per = -np.sum(xlogy(t, np.maximum(o, _TINY)), axis=1)
    else:
        per = -np.sum(xlogy(t, np.maximum(o, _TINY)) + xlogy(1.0 - t, np.maximum(1.0 - o, _TINY)), axis=1)
    return float(np.mean(per))
