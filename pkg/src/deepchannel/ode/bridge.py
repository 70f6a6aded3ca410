"""Discrete full-batch learning on a scalar chain versus its averaged ODE."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from ..channel import ChannelConfig, ChannelParams, apply_updates, learning_step
from ..core_math import IDENTITY, ConfigError
from ..datasets import Dataset, moments
from ..forward_net import LayerSpec, NetworkParams
from .systems import OdeSystem


@dataclass
class SgdComparison:
    gap: float
    t: np.ndarray
    sgd: np.ndarray
    ode: np.ndarray


def chain_network(sys: OdeSystem, x) -> tuple[NetworkParams, ChannelParams, ChannelConfig]:
    """Linear ``A[1, ..., 1]`` network and channel holding the weights of state ``x``."""
    if sys.kind == "chain":
        L = sys.params["L"]
        algorithm = "rbp" if sys.params["variant"] == "arbp" else "srbp"
        adaptivity = "hebbian"
    elif sys.kind == "chain-stdp":
        L, algorithm, adaptivity = 2, "srbp", "stdp"
    else:
        raise ConfigError(f"no discrete network for system kind {sys.kind!r}")
    x = np.asarray(x, dtype=float)
    layers = [LayerSpec(1, IDENTITY, has_bias=False) for _ in range(L)]
    net = NetworkParams(1, layers, [np.array([[v]]) for v in x[:L]], [np.zeros(1) for _ in range(L)])
    channel = ChannelParams([np.array([[v]]) for v in x[L:]])
    cfg = ChannelConfig(algorithm, "conjoined", (), "linear", adaptivity)
    return net, channel, cfg


def network_state(net: NetworkParams, channel: ChannelParams) -> np.ndarray:
    return np.array([w[0, 0] for w in net.weights] + [c[0, 0] for c in channel.matrices])


def sgd_vs_ode(sys: OdeSystem, data: Dataset, lr: float, t: float, x0,
               rtol: float = 1e-12, atol: float = 1e-14) -> SgdComparison:
    """Sup-norm gap between ``t / lr`` full-batch steps and the ODE at matched times.

    The dataset's moments must match the system's alpha and beta, so both sides
    see the same statistics; step k is compared with the ODE at time ``k * lr``.
    """
    if not lr > 0:
        raise ConfigError("lr must be positive")
    stats = moments(data)
    if stats.degenerate:
        raise ConfigError("dataset has E(I^2) = 0")
    for key, val in (("alpha", stats.alpha), ("beta", stats.beta)):
        if not np.isclose(sys.params[key], val, rtol=1e-12, atol=1e-14):
            raise ConfigError(f"system {key}={sys.params[key]!r} differs from the data's {val!r}")
    steps = int(round(t / lr))
    x0 = sys.check_state(np.array(x0, dtype=float))
    net, channel, cfg = chain_network(sys, x0)
    X, T = data.features, data.targets

    sgd = [network_state(net, channel)]
    for _ in range(steps):
        apply_updates(net, channel, learning_step(net, channel, cfg, X, T, lr))
        sgd.append(network_state(net, channel))
    sgd = np.array(sgd)

    times = lr * np.arange(steps + 1)
    sol = solve_ivp(lambda _t, y: sys.rhs(y), (0.0, times[-1]), x0, method="DOP853",
                    t_eval=times, rtol=rtol, atol=atol)
    if sol.status != 0:
        raise RuntimeError(f"reference integration failed: {sol.message}")
    ode = sol.y.T
    return SgdComparison(float(np.max(np.abs(sgd - ode))), times, sgd, ode)
