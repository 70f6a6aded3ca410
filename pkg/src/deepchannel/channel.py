"""Learning channel: deep error signals and weight updates.

Covers backpropagation (BP), random backpropagation (RBP) and skipped random
backpropagation (SRBP) over Conjoined and Distinct channel architectures,
with a linear or tanh channel and fixed, Hebbian-adaptive or STDP-adaptive
channel weights.

Shapes (batch rows, layer index h = 1..L stored zero-based):

* Conjoined RBP  ``C_h``: ``N_h x N_{h+1}``
* Conjoined SRBP ``C_h``: ``N_h x N_L``
* Distinct RBP   ``D_h``: ``M_h x M_{h+1}`` with ``M_L = N_L``; lateral ``C'_h``: ``N_h x M_h``
* Distinct SRBP  ``D_h``: ``M_h x N_L``; lateral ``C'_h``: ``N_h x M_h``
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core_math import (
    ConfigError,
    IDENTITY,
    TANH,
    Initializer,
    apply_transfer,
    sample,
    transfer_derivative,
)
from .forward_net import ForwardTrace, NetworkParams, dropout_mask, forward

ALGORITHMS = ("bp", "rbp", "srbp")
ARCHITECTURES = ("conjoined", "distinct")
CHANNEL_TRANSFERS = ("linear", "tanh")
ADAPTIVITIES = ("fixed", "hebbian", "stdp")


@dataclass(frozen=True)
class ChannelConfig:
    algorithm: str = "bp"
    architecture: str = "conjoined"
    channel_sizes: tuple[int, ...] = ()
    channel_transfer: str = "linear"
    adaptivity: str = "fixed"
    p_lc: float = 0.0
    init: Initializer = Initializer()
    lateral_init: Initializer = Initializer()
    # channel learning rate; None shares the forward rate
    lr: float | None = None
    # presynaptic term of the skipped STDP channel rule: free output O^L or target T
    stdp_presynaptic: str = "output"

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        if self.channel_transfer not in CHANNEL_TRANSFERS:
            raise ConfigError(f"unknown channel transfer {self.channel_transfer!r}")
        if self.adaptivity not in ADAPTIVITIES:
            raise ConfigError(f"unknown adaptivity {self.adaptivity!r}")
        if not 0.0 <= self.p_lc < 1.0:
            raise ConfigError(f"p_lc must be in [0, 1), got {self.p_lc}")
        if self.stdp_presynaptic not in ("output", "target"):
            raise ConfigError("stdp_presynaptic must be 'output' or 'target'")
        if self.lr is not None and not self.lr >= 0:
            raise ConfigError("channel lr must be non-negative")
        if self.algorithm == "bp":
            if self.architecture != "conjoined":
                raise ConfigError("BP uses the transposed forward weights; Distinct is not allowed")
            if self.adaptivity != "fixed":
                raise ConfigError("BP's channel is the forward weights; adaptivity must be 'fixed'")
        if self.architecture == "distinct":
            if not self.channel_sizes or any(m < 1 for m in self.channel_sizes):
                raise ConfigError("Distinct architecture needs positive channel layer sizes")
            if self.adaptivity == "stdp":
                raise ConfigError("STDP is defined for Conjoined channels only")
        elif self.channel_sizes:
            raise ConfigError("channel_sizes only apply to the Distinct architecture")
        if self.adaptivity == "stdp" and self.p_lc > 0:
            raise ConfigError("channel dropout is not defined for the STDP phases")

    @property
    def transfer(self):
        return TANH if self.channel_transfer == "tanh" else IDENTITY

    @property
    def adaptive(self) -> bool:
        return self.adaptivity != "fixed"


@dataclass
class ChannelParams:
    """Channel matrices ``matrices[h-1]`` for h = 1..L-1 plus Distinct laterals."""

    matrices: list[np.ndarray]
    laterals: list[np.ndarray] | None = None

    def copy(self) -> "ChannelParams":
        return ChannelParams(
            [m.copy() for m in self.matrices],
            None if self.laterals is None else [m.copy() for m in self.laterals],
        )

    def all_finite(self) -> bool:
        mats = self.matrices + (self.laterals or [])
        return all(np.all(np.isfinite(m)) for m in mats)


def channel_shapes(cfg: ChannelConfig, sizes: list[int]) -> tuple[list[tuple], list[tuple] | None]:
    """Shapes of the sequential/skip matrices and the laterals for forward ``sizes``."""
    L = len(sizes) - 1
    top = sizes[L]
    if cfg.algorithm == "bp":
        return [], None
    if cfg.architecture == "conjoined":
        if cfg.algorithm == "rbp":
            return [(sizes[h], sizes[h + 1]) for h in range(1, L)], None
        return [(sizes[h], top) for h in range(1, L)], None
    m = list(cfg.channel_sizes)
    if len(m) != L - 1:
        raise ConfigError(f"need {L - 1} channel layer sizes, got {len(m)}")
    lat = [(sizes[h], m[h - 1]) for h in range(1, L)]
    if cfg.algorithm == "rbp":
        widths = m + [top]
        return [(widths[h - 1], widths[h]) for h in range(1, L)], lat
    return [(m[h - 1], top) for h in range(1, L)], lat


def init_channel(cfg: ChannelConfig, net: NetworkParams, rng: np.random.Generator) -> ChannelParams:
    shapes, lat = channel_shapes(cfg, net.sizes)
    mats = [sample(cfg.init, r, c, rng) for r, c in shapes]
    laterals = None if lat is None else [sample(cfg.lateral_init, r, c, rng) for r, c in lat]
    return ChannelParams(mats, laterals)


def check_channel(cfg: ChannelConfig, net: NetworkParams, channel: ChannelParams) -> None:
    shapes, lat = channel_shapes(cfg, net.sizes)
    got = [m.shape for m in channel.matrices]
    if got != [tuple(s) for s in shapes]:
        raise ConfigError(f"channel matrix shapes {got} do not match {shapes}")
    if lat is not None:
        if channel.laterals is None or [m.shape for m in channel.laterals] != [tuple(s) for s in lat]:
            raise ConfigError(f"lateral shapes do not match {lat}")


@dataclass
class ErrorSignals:
    """Per-layer signals ``R^h`` (``signals[h-1]``, h = 1..L; ``R^L = T - O``).

    ``channel_pre[h-1]`` is the summed input of the channel unit at depth h and
    ``channel_out[h-1]`` its (masked) output, h = 1..L-1.
    """

    signals: list[np.ndarray]
    channel_pre: list[np.ndarray] = field(default_factory=list)
    channel_out: list[np.ndarray] = field(default_factory=list)

    @property
    def delta(self) -> np.ndarray:
        return self.signals[-1]


def channel_dropout_mask(
    cfg: ChannelConfig, net: NetworkParams, batch: int, rng: np.random.Generator | None
) -> list[np.ndarray] | None:
    """Inverted-dropout masks for the hidden channel layers, or ``None`` when p_lc = 0."""
    if cfg.p_lc == 0.0:
        return None
    if rng is None:
        raise ConfigError("channel dropout needs an rng")
    if cfg.architecture == "distinct":
        widths = list(cfg.channel_sizes)
    else:
        widths = net.sizes[1:-1]
    return [dropout_mask(cfg.p_lc, (batch, w), rng) for w in widths]


def _channel_unit(cfg, u, masks, h):
    z = apply_transfer(cfg.transfer, u)
    if masks is not None:
        z = z * masks[h - 1]
    return z


def _conjoined(net, trace, delta, cfg, masks, incoming) -> ErrorSignals:
    L = net.depth
    sig = [None] * L
    sig[L - 1] = delta
    pre, out = [None] * (L - 1), [None] * (L - 1)
    for h in range(L - 1, 0, -1):
        u = incoming(h, sig[h])
        z = _channel_unit(cfg, u, masks, h)
        pre[h - 1], out[h - 1] = u, z
        sig[h - 1] = trace.local_derivative(h) * z
    return ErrorSignals(sig, pre, out)


def backward_bp(net: NetworkParams, trace: ForwardTrace, delta: np.ndarray,
                cfg: ChannelConfig | None = None, masks=None) -> ErrorSignals:
    """Exact gradient signals ``R^h = f'(S^h) * (W^{h+1})^T R^{h+1}``."""
    cfg = cfg or ChannelConfig()
    return _conjoined(net, trace, delta, cfg, masks, lambda h, r: r @ net.weights[h])


def backward_rbp(net: NetworkParams, channel: ChannelParams, trace: ForwardTrace,
                 delta: np.ndarray, cfg: ChannelConfig | None = None, masks=None) -> ErrorSignals:
    """``R^h = f'(S^h) * g(C_h R^{h+1})`` with g the channel transfer."""
    cfg = cfg or ChannelConfig("rbp")
    return _conjoined(net, trace, delta, cfg, masks, lambda h, r: r @ channel.matrices[h - 1].T)


def backward_srbp(net: NetworkParams, channel: ChannelParams, trace: ForwardTrace,
                  delta: np.ndarray, cfg: ChannelConfig | None = None, masks=None) -> ErrorSignals:
    """``R^h = f'(S^h) * g(C_h (T - O))``: only the local derivative enters."""
    cfg = cfg or ChannelConfig("srbp")
    return _conjoined(net, trace, delta, cfg, masks, lambda h, r: delta @ channel.matrices[h - 1].T)


def backward_distinct(net: NetworkParams, channel: ChannelParams, trace: ForwardTrace,
                      delta: np.ndarray, cfg: ChannelConfig, masks=None) -> ErrorSignals:
    """Separate channel neurons carry the error down, laterals deliver it to forward units.

    The channel activity at depth h is ``z^h = g(D_h z^{h+1})`` (RBP-style,
    ``z^L = T - O``) or ``z^h = g(D_h (T - O))`` (SRBP-style). The forward
    signal is ``R^h = f'(S^h) * C'_h z^h``.
    """
    L = net.depth
    sig = [None] * L
    sig[L - 1] = delta
    pre, out = [None] * (L - 1), [None] * (L - 1)
    above = delta
    for h in range(L - 1, 0, -1):
        src = above if cfg.algorithm == "rbp" else delta
        u = src @ channel.matrices[h - 1].T
        z = _channel_unit(cfg, u, masks, h)
        pre[h - 1], out[h - 1] = u, z
        sig[h - 1] = trace.local_derivative(h) * (z @ channel.laterals[h - 1].T)
        above = z
    return ErrorSignals(sig, pre, out)


def backward(net: NetworkParams, channel: ChannelParams, cfg: ChannelConfig,
             trace: ForwardTrace, delta: np.ndarray, masks=None) -> ErrorSignals:
    if cfg.architecture == "distinct":
        return backward_distinct(net, channel, trace, delta, cfg, masks)
    if cfg.algorithm == "bp":
        return backward_bp(net, trace, delta, cfg, masks)
    if cfg.algorithm == "rbp":
        return backward_rbp(net, channel, trace, delta, cfg, masks)
    return backward_srbp(net, channel, trace, delta, cfg, masks)


def forward_weight_update(net: NetworkParams, trace: ForwardTrace, signals: ErrorSignals,
                          lr: float) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Batch-averaged ``dW^h = lr * R^h (O^{h-1})^T``; biases see a presynaptic 1."""
    B = trace.batch_size
    dW, db = [], []
    for h in range(1, net.depth + 1):
        r = signals.signals[h - 1]
        dW.append(lr * (r.T @ trace.activations[h - 1]) / B)
        if net.layers[h - 1].has_bias:
            db.append(lr * r.mean(axis=0))
        else:
            db.append(np.zeros(net.layers[h - 1].size))
    return dW, db


def hebbian_channel_update(channel: ChannelParams, cfg: ChannelConfig, trace: ForwardTrace,
                           signals: ErrorSignals, lr: float, masks=None) -> list[np.ndarray]:
    """``dc_rs = lr * R_s(above) * O_r(forward)``, times g'(u) for a tanh channel.

    The presynaptic term is the signal arriving at the channel matrix (``R^{h+1}``
    for RBP, ``T - O`` for SRBP, the channel activity above for Distinct RBP).
    The postsynaptic term is the forward activity at depth h, seen through the
    lateral matrix for Distinct channels.
    """
    if cfg.adaptivity != "hebbian":
        raise ConfigError(f"hebbian update requested with adaptivity={cfg.adaptivity!r}")
    B = trace.batch_size
    L = len(channel.matrices) + 1
    delta = signals.delta
    out = []
    for h in range(1, L):
        if cfg.architecture == "distinct":
            post = trace.activations[h] @ channel.laterals[h - 1]
            presyn = signals.channel_out[h] if (cfg.algorithm == "rbp" and h < L - 1) else delta
        else:
            post = trace.activations[h]
            presyn = signals.signals[h] if cfg.algorithm == "rbp" else delta
        if cfg.channel_transfer == "tanh":
            post = post * transfer_derivative(TANH, signals.channel_pre[h - 1])
        if masks is not None:
            post = post * masks[h - 1]
        out.append(lr * (post.T @ presyn) / B)
    return out


def stdp_phases(net: NetworkParams, channel: ChannelParams, cfg: ChannelConfig,
                free: ForwardTrace, targets: np.ndarray) -> tuple[ForwardTrace, ForwardTrace]:
    """Feedback (t=1) and clamped (t=2) phases built on the free pass (t=0).

    At t=1 the free output is fed back through the channel; at t=2 the output is
    clamped to the target and fed back. Feedback enters each hidden unit's
    summed input next to its free forward drive ``S^h(t=0)``; skipped channels
    feed the top layer to every depth, sequential ones feed layer h from layer
    h+1's activity in the same phase.
    """
    if cfg.architecture != "conjoined" or cfg.algorithm == "bp":
        raise ConfigError("STDP phases need a Conjoined RBP or SRBP channel")
    L = net.depth
    targets = np.asarray(targets, dtype=float)

    def phase(top):
        acts = [None] * (L + 1)
        acts[0] = free.activations[0]
        acts[L] = top
        for h in range(L - 1, 0, -1):
            src = top if cfg.algorithm == "srbp" else acts[h + 1]
            fb = apply_transfer(cfg.transfer, src @ channel.matrices[h - 1].T)
            y = apply_transfer(net.layers[h - 1].transfer, free.pre[h - 1] + fb)
            m = free.masks[h - 1] if free.masks else None
            acts[h] = y if m is None else y * m
        return ForwardTrace(acts, free.pre, free.raw, free.derivs, free.masks)

    return phase(free.output), phase(targets)


def stdp_updates(net: NetworkParams, channel: ChannelParams, cfg: ChannelConfig,
                 trace_t1: ForwardTrace, trace_t2: ForwardTrace, lr: float,
                 channel_lr: float | None = None):
    """STDP deltas from the activity change ``dO^h = O^h(t=2) - O^h(t=1)``.

    Forward: ``dW^h = lr * dO^h O^{h-1}(t=1)^T``. Channel: ``dC_h = lr * dO^h x^T``
    where x is the t=1 activity at the channel's source layer (for skipped
    channels, the free output or the target per ``cfg.stdp_presynaptic``).
    Returns ``(dW, db, dC)``.
    """
    clr = lr if channel_lr is None else channel_lr
    B = trace_t1.batch_size
    L = net.depth
    dO = [trace_t2.activations[h] - trace_t1.activations[h] for h in range(1, L + 1)]
    dW, db = [], []
    for h in range(1, L + 1):
        dW.append(lr * (dO[h - 1].T @ trace_t1.activations[h - 1]) / B)
        if net.layers[h - 1].has_bias:
            db.append(lr * dO[h - 1].mean(axis=0))
        else:
            db.append(np.zeros(net.layers[h - 1].size))
    dC = []
    for h in range(1, L):
        if cfg.algorithm == "srbp":
            src = trace_t2.activations[L] if cfg.stdp_presynaptic == "target" else trace_t1.activations[L]
        else:
            src = trace_t1.activations[h + 1]
        dC.append(clr * (dO[h - 1].T @ src) / B)
    return dW, db, dC


@dataclass
class Updates:
    dW: list[np.ndarray]
    db: list[np.ndarray]
    dC: list[np.ndarray] = field(default_factory=list)
    loss_delta: np.ndarray | None = None


def learning_step(net: NetworkParams, channel: ChannelParams, cfg: ChannelConfig,
                  inputs: np.ndarray, targets: np.ndarray, lr: float,
                  dropout=None, rng: np.random.Generator | None = None) -> Updates:
    """All deltas for one minibatch, computed from the pre-update parameters."""
    out, trace = forward(net, inputs, dropout, rng)
    delta = np.asarray(targets, dtype=float) - out
    clr = lr if cfg.lr is None else cfg.lr
    if cfg.adaptivity == "stdp":
        t1, t2 = stdp_phases(net, channel, cfg, trace, targets)
        dW, db, dC = stdp_updates(net, channel, cfg, t1, t2, lr, clr)
        return Updates(dW, db, dC, delta)
    masks = channel_dropout_mask(cfg, net, trace.batch_size, rng)
    sig = backward(net, channel, cfg, trace, delta, masks)
    dW, db = forward_weight_update(net, trace, sig, lr)
    dC = hebbian_channel_update(channel, cfg, trace, sig, clr, masks) if cfg.adaptivity == "hebbian" else []
    return Updates(dW, db, dC, delta)


def apply_updates(net: NetworkParams, channel: ChannelParams, upd: Updates) -> None:
    for w, d in zip(net.weights, upd.dW):
        w += d
    for b, d in zip(net.biases, upd.db):
        b += d
    for c, d in zip(channel.matrices, upd.dC):
        c += d


def transposed_channel(net: NetworkParams) -> ChannelParams:
    """RBP channel equal to the live forward transposes (``C_h = W_{h+1}^T``)."""
    return ChannelParams([net.weights[h].T.copy() for h in range(1, net.depth)])


def alignment(net: NetworkParams, channel: ChannelParams, cfg: ChannelConfig) -> list[float] | None:
    """Mean ``|C_h - W_{h+1}^T|`` per layer for Conjoined RBP channels."""
    if cfg.algorithm != "rbp" or cfg.architecture != "conjoined":
        return None
    return [float(np.mean(np.abs(c - net.weights[h + 1].T))) for h, c in enumerate(channel.matrices)]


def channel_norms(channel: ChannelParams) -> list[float]:
    return [float(np.linalg.norm(c)) for c in channel.matrices]
