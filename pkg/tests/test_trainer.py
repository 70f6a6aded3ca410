import numpy as np
import pytest
from hypothesis import given, strategies as st

from deepchannel.channel import ChannelConfig, ChannelParams, init_channel
from deepchannel.core_math import IDENTITY, SOFTMAX, TANH, ConfigError, Initializer, make_rng
from deepchannel.datasets import Dataset, gen_linear_stats
from deepchannel.forward_net import NetworkParams, predict_and_score
from deepchannel.trainer import (
    DivergenceError,
    EarlyStop,
    TrainConfig,
    epoch_batches,
    should_stop,
    train,
)


def classification(rng, n=60, d=4, c=3):
    x = rng.normal(size=(n, d))
    return Dataset(x, np.eye(c)[np.argmax(x[:, :c], axis=1)])


def small_net(rng, sizes=(4, 6, 3)):
    return NetworkParams.create(list(sizes), TANH, SOFTMAX, Initializer(), rng)


@pytest.mark.parametrize("kw", [dict(batch_size=0), dict(lr=-1.0), dict(momentum=1.0),
                                dict(lr_decay=1.0), dict(dropout=1.0), dict(epochs=-1)])
def test_config_rejects(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw)


def test_zero_lr_leaves_parameters_unchanged(rng):
    data = classification(rng)
    net = small_net(rng)
    cfg = ChannelConfig("srbp", adaptivity="hebbian")
    ch = init_channel(cfg, net, rng)
    res = train(net, ch, cfg, data, TrainConfig(epochs=3, batch_size=7, lr=0.0))
    for a, b in zip(res.net.weights + res.net.biases + res.channel.matrices,
                    net.weights + net.biases + ch.matrices):
        np.testing.assert_array_equal(a, b)
    assert len({(m.train_loss, m.train_accuracy) for m in res.metrics}) == 1


def test_least_squares_fixed_point():
    data, stats = gen_linear_stats(200, "normal", 1.7, noise=0.3, seed=4)
    net = NetworkParams.create([1, 1], IDENTITY, IDENTITY, Initializer(), make_rng(0), bias=False)
    res = train(net, ChannelParams([]), ChannelConfig("bp"), data,
                TrainConfig(epochs=300, batch_size=len(data), lr=0.5))
    assert res.net.weights[0][0, 0] == pytest.approx(stats.alpha / stats.beta, abs=1e-6)


def test_reproducible(rng):
    data = classification(rng)
    runs = []
    for _ in range(2):
        net = small_net(make_rng(3))
        cfg = ChannelConfig("rbp")
        ch = init_channel(cfg, net, make_rng(4))
        runs.append(train(net, ch, cfg, data, TrainConfig(epochs=3, batch_size=8, dropout=0.2, seed=9)))
    assert [m.to_dict() for m in runs[0].metrics] == [m.to_dict() for m in runs[1].metrics]


def test_one_record_per_epoch_in_range(rng):
    data = classification(rng)
    res = train(small_net(rng), ChannelParams([]), ChannelConfig("bp"), data,
                TrainConfig(epochs=4, batch_size=16), val_data=classification(rng, 20))
    assert [m.epoch for m in res.metrics] == [1, 2, 3, 4]
    for m in res.metrics:
        assert 0.0 <= m.train_accuracy <= 1.0 and 0.0 <= m.val_accuracy <= 1.0
    assert res.updates == 4 * 4


def test_bp_linear_regression_loss_decreases(rng):
    data, _ = gen_linear_stats(50, "normal", np.array([[1.0, -2.0], [0.5, 0.3]]), noise=0.1, seed=1, input_dim=2)
    net = NetworkParams.create([2, 3, 2], IDENTITY, IDENTITY, Initializer(), make_rng(2))
    losses = []
    for _ in range(200):
        net = train(net, ChannelParams([]), ChannelConfig("bp"), data,
                    TrainConfig(epochs=1, batch_size=len(data), lr=1e-3)).net
        losses.append(predict_and_score(net, data).loss)
    assert np.all(np.diff(losses) < 0)


def test_momentum_runs_and_changes_trajectory(rng):
    data = classification(rng)
    net = small_net(rng)
    plain = train(net, ChannelParams([]), ChannelConfig("bp"), data, TrainConfig(epochs=2, batch_size=10))
    heavy = train(net, ChannelParams([]), ChannelConfig("bp"), data,
                  TrainConfig(epochs=2, batch_size=10, momentum=0.9))
    assert not np.allclose(plain.net.weights[0], heavy.net.weights[0])


def test_lr_decay_per_update(rng):
    data = classification(rng, n=30)
    res = train(small_net(rng), ChannelParams([]), ChannelConfig("bp"), data,
                TrainConfig(epochs=1, batch_size=10, lr=0.1, lr_decay=0.1))
    assert res.metrics[0].lr == pytest.approx(0.1 * 0.9 ** 3)


@given(st.integers(1, 200), st.integers(1, 50), st.integers(0, 2**31))
def test_batches_are_a_permutation(n, b, seed):
    batches = epoch_batches(n, b, make_rng(seed))
    assert sorted(np.concatenate(batches).tolist()) == list(range(n))
    assert all(len(x) == b for x in batches[:-1]) and 1 <= len(batches[-1]) <= b


@pytest.mark.parametrize("errors, stop", [
    ([], False),
    ([0.10], False),
    ([0.10, 0.105], False),
    ([0.10, 0.11], False),
    ([0.10, 0.1101], True),
    ([0.20, 0.10, 0.15], True),
    ([0.20, 0.15, 0.10], False),
])
def test_should_stop(errors, stop):
    assert should_stop(errors, 0.01) is stop


def test_early_stop_needs_validation(rng):
    with pytest.raises(ConfigError):
        train(small_net(rng), ChannelParams([]), ChannelConfig("bp"), classification(rng),
              TrainConfig(epochs=1, early_stop=EarlyStop(0.01, 1)))


def test_early_stop_halts(rng):
    data = classification(rng)
    res = train(small_net(rng), ChannelParams([]), ChannelConfig("bp"), data,
                TrainConfig(epochs=50, batch_size=5, lr=0.1, early_stop=EarlyStop(-0.0, 1)),
                val_data=data)
    assert res.stopped_early and len(res.metrics) < 50


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises_with_partial_metrics(rng):
    data = Dataset(1e150 * rng.normal(size=(20, 4)), rng.normal(size=(20, 2)), "regression")
    net = NetworkParams.create([4, 2], IDENTITY, IDENTITY, Initializer(), rng)
    with pytest.raises(DivergenceError) as info:
        train(net, ChannelParams([]), ChannelConfig("bp"), data, TrainConfig(epochs=5, batch_size=5, lr=1.0))
    assert info.value.record["reason"] == "non-finite parameter"
    assert info.value.metrics == []


def test_shape_mismatch(rng):
    with pytest.raises(ConfigError):
        train(small_net(rng, (5, 6, 3)), ChannelParams([]), ChannelConfig("bp"), classification(rng),
              TrainConfig(epochs=1))
