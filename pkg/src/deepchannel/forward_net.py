"""Forward channel: a layered, fully connected network with trace capture."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core_math import (
    ConfigError,
    Initializer,
    Loss,
    TransferFunction,
    apply_transfer,
    loss_for_output,
    loss_value,
    sample,
    transfer_derivative,
)


@dataclass(frozen=True)
class LayerSpec:
    size: int
    transfer: TransferFunction
    has_bias: bool = True

    def __post_init__(self):
        if self.size < 1:
            raise ConfigError(f"layer size must be >= 1, got {self.size}")


@dataclass
class NetworkParams:
    """Weights ``W[h]`` of shape ``(N_h, N_{h-1})`` and biases ``b[h]`` of shape ``(N_h,)``.

    Index ``h`` runs over layers 1..L and is stored zero-based.
    """

    input_size: int
    layers: list[LayerSpec]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if self.input_size < 1:
            raise ConfigError("input size must be >= 1")
        if not (len(self.layers) == len(self.weights) == len(self.biases)) or not self.layers:
            raise ConfigError("layers, weights and biases must have the same non-zero length")
        prev = self.input_size
        for h, (spec, w, b) in enumerate(zip(self.layers, self.weights, self.biases), start=1):
            if w.shape != (spec.size, prev):
                raise ConfigError(f"layer {h}: weight shape {w.shape} != {(spec.size, prev)}")
            if b.shape != (spec.size,):
                raise ConfigError(f"layer {h}: bias shape {b.shape} != {(spec.size,)}")
            if spec.transfer.kind == "softmax" and h != len(self.layers):
                raise ConfigError("softmax is only allowed on the output layer")
            prev = spec.size

    @classmethod
    def create(
        cls,
        sizes: Sequence[int],
        hidden: TransferFunction,
        output: TransferFunction,
        init: Initializer,
        rng: np.random.Generator,
        bias: bool = True,
    ) -> "NetworkParams":
        """Build ``A[N_0, ..., N_L]`` with zero biases and sampled weights."""
        if len(sizes) < 2:
            raise ConfigError("need at least an input and an output layer")
        layers = [
            LayerSpec(n, output if h == len(sizes) - 1 else hidden, bias)
            for h, n in enumerate(sizes[1:], start=1)
        ]
        weights = [sample(init, n, m, rng) for m, n in zip(sizes[:-1], sizes[1:])]
        biases = [np.zeros(n) for n in sizes[1:]]
        return cls(int(sizes[0]), layers, weights, biases)

    @property
    def sizes(self) -> list[int]:
        return [self.input_size] + [s.size for s in self.layers]

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def output_transfer(self) -> TransferFunction:
        return self.layers[-1].transfer

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            self.input_size,
            list(self.layers),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(w)) for w in self.weights) and all(
            np.all(np.isfinite(b)) for b in self.biases
        )


@dataclass
class ForwardTrace:
    """Everything the learning channel needs from one forward pass.

    ``activations[h]`` holds ``O^h`` for h = 0..L (``activations[0]`` is the
    input); ``pre``, ``derivs``, ``raw`` and ``masks`` are indexed by layer
    1..L stored zero-based. ``raw[h] = f(S^h)`` before dropout; ``masks[h]``
    is ``None`` or the inverted-dropout factor (0 or 1/(1-p)) per unit.
    Output-layer derivatives are ``None``.
    """

    activations: list[np.ndarray]
    pre: list[np.ndarray]
    raw: list[np.ndarray]
    derivs: list[np.ndarray | None]
    masks: list[np.ndarray | None] = field(default_factory=list)

    @property
    def batch_size(self) -> int:
        return self.activations[0].shape[0]

    @property
    def output(self) -> np.ndarray:
        return self.activations[-1]

    def local_derivative(self, h: int) -> np.ndarray:
        """dO^h/dS^h for layer h (1-based), including the dropout factor."""
        d = self.derivs[h - 1]
        m = self.masks[h - 1] if self.masks else None
        return d if m is None else d * m


def _dropout_rates(dropout, n_hidden: int) -> list[float]:
    if dropout is None:
        return [0.0] * n_hidden
    if np.isscalar(dropout):
        rates = [float(dropout)] * n_hidden
    else:
        rates = [float(p) for p in dropout]
    if len(rates) != n_hidden:
        raise ConfigError(f"need {n_hidden} dropout rates, got {len(rates)}")
    for p in rates:
        if not 0.0 <= p < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {p}")
    return rates


def dropout_mask(p: float, shape, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout factors: 0 with probability p, else 1/(1-p)."""
    if p == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= p
    return keep / (1.0 - p)


def forward(
    net: NetworkParams,
    inputs: np.ndarray,
    dropout: float | Sequence[float] | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, ForwardTrace]:
    """Propagate a ``batch x N_0`` input matrix through the network.

    ``dropout`` is one rate for every hidden layer or a sequence with one rate
    per hidden layer; the output layer is never dropped.
    """
    x = np.asarray(inputs, dtype=float)
    if x.ndim != 2 or x.shape[1] != net.input_size:
        raise ConfigError(f"input shape {x.shape} does not match N_0={net.input_size}")
    rates = _dropout_rates(dropout, net.depth - 1)
    if any(rates) and rng is None:
        raise ConfigError("dropout needs an rng")

    acts, pre, raw, derivs, masks = [x], [], [], [], []
    o = x
    for h, (spec, w, b) in enumerate(zip(net.layers, net.weights, net.biases), start=1):
        s = o @ w.T
        if spec.has_bias:
            s = s + b
        y = apply_transfer(spec.transfer, s)
        last = h == net.depth
        d = None if last else transfer_derivative(spec.transfer, s)
        m = None
        if not last and rates[h - 1] > 0.0:
            m = dropout_mask(rates[h - 1], y.shape, rng)
        o = y if m is None else y * m
        pre.append(s)
        raw.append(y)
        derivs.append(d)
        masks.append(m)
        acts.append(o)
    return o, ForwardTrace(acts, pre, raw, derivs, masks)


def predict(net: NetworkParams, inputs: np.ndarray) -> np.ndarray:
    out, _ = forward(net, inputs)
    return out


def predicted_labels(outputs: np.ndarray) -> np.ndarray:
    """Class index per row; one logistic unit thresholds at 0.5, ties go to the lowest index."""
    if outputs.shape[1] == 1:
        return (outputs[:, 0] > 0.5).astype(int)
    return np.argmax(outputs, axis=1)


@dataclass(frozen=True)
class Score:
    accuracy: float
    loss: float


def predict_and_score(net: NetworkParams, data, loss: Loss | None = None, batch: int = 10000) -> Score:
    """Accuracy and mean loss of ``net`` on ``data`` with dropout disabled."""
    n = data.features.shape[0]
    if n == 0:
        raise ValueError("cannot score an empty dataset")
    if loss is None:
        loss = loss_for_output(net.output_transfer)
    outs = np.concatenate(
        [predict(net, data.features[i : i + batch]) for i in range(0, n, batch)]
    )
    total = loss_value(loss, data.targets, outs)
    if data.kind != "classification":
        return Score(float("nan"), total)
    acc = np.mean(predicted_labels(outs) == predicted_labels(data.targets))
    return Score(float(acc), total)
