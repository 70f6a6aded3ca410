import numpy as np
import pytest
from hypothesis import given, strategies as st

from deepchannel.core_math import IDENTITY, SOFTMAX, TANH, ConfigError, Initializer, apply_transfer, make_rng
from deepchannel.datasets import Dataset, one_hot
from deepchannel.forward_net import (
    LayerSpec,
    NetworkParams,
    forward,
    predict,
    predict_and_score,
    predicted_labels,
)


def linear_chain(*weights):
    layers = [LayerSpec(1, IDENTITY, has_bias=False) for _ in weights]
    return NetworkParams(1, layers, [np.array([[w]]) for w in weights], [np.zeros(1) for _ in weights])


def test_linear_chain_product():
    out, _ = forward(linear_chain(2.0, 3.0), np.array([[1.0]]))
    assert out[0, 0] == 6.0


def test_zero_tanh_net_is_uniform(rng):
    net = NetworkParams.create([4, 5, 3], TANH, SOFTMAX, Initializer("zero"), rng)
    out, tr = forward(net, rng.normal(size=(7, 4)))
    assert not np.any(tr.activations[1])
    np.testing.assert_allclose(out, np.full((7, 3), 1 / 3))


def test_zero_dropout_is_bit_exact(rng):
    net = NetworkParams.create([4, 6, 6, 2], TANH, SOFTMAX, Initializer(), rng)
    x = rng.normal(size=(5, 4))
    a, _ = forward(net, x)
    b, _ = forward(net, x, dropout=0.0, rng=make_rng(1))
    assert a.tobytes() == b.tobytes()


@given(st.lists(st.integers(1, 6), min_size=2, max_size=5), st.integers(0, 2**31))
def test_linear_net_equals_matrix_product(sizes, seed):
    r = make_rng(seed)
    net = NetworkParams.create(sizes, IDENTITY, IDENTITY, Initializer(), r, bias=False)
    x = r.normal(size=(3, sizes[0]))
    P = np.eye(sizes[0])
    for w in net.weights:
        P = w @ P
    np.testing.assert_allclose(predict(net, x), x @ P.T, atol=1e-10)


def test_trace_consistency(rng):
    net = NetworkParams.create([5, 4, 4, 3], TANH, SOFTMAX, Initializer(), rng)
    _, tr = forward(net, rng.normal(size=(6, 5)), dropout=0.3, rng=rng)
    for h, spec in enumerate(net.layers):
        assert np.array_equal(apply_transfer(spec.transfer, tr.pre[h]), tr.raw[h])


def test_dropout_expectation():
    r = make_rng(3)
    net = NetworkParams.create([3, 4, 2], IDENTITY, IDENTITY, Initializer(), r, bias=False)
    x = r.normal(size=(1, 3))
    _, clean = forward(net, x)
    n = 20000
    outs = np.stack([forward(net, x, dropout=0.5, rng=r)[1].activations[1][0] for _ in range(n)])
    se = outs.std(axis=0) / np.sqrt(n)
    assert np.all(np.abs(outs.mean(axis=0) - clean.activations[1][0]) <= 3 * se + 1e-12)


def test_perfect_predictor_scores_one():
    t = one_hot(np.array([0, 1, 2, 1]), 3)
    layers = [LayerSpec(3, IDENTITY, has_bias=False), LayerSpec(3, SOFTMAX, has_bias=False)]
    net = NetworkParams(3, layers, [np.eye(3), 60.0 * np.eye(3)], [np.zeros(3), np.zeros(3)])
    score = predict_and_score(net, Dataset(t, t))
    assert score.accuracy == 1.0
    assert score.loss == pytest.approx(0.0, abs=1e-9)


def test_uniform_random_predictor_accuracy():
    r = make_rng(4)
    n = 10_000
    labels = np.repeat(np.arange(10), n // 10)
    net = NetworkParams.create([10, 10], IDENTITY, SOFTMAX, Initializer(), r)
    x = r.normal(size=(n, 10))
    net.weights[0] = np.eye(10)
    acc = predict_and_score(net, Dataset(x, one_hot(labels, 10))).accuracy
    # binomial sd sqrt(0.1 * 0.9 / 1e4) = 0.003
    assert abs(acc - 0.1) <= 0.02


def test_argmax_tie_lowest_index():
    assert predicted_labels(np.array([[0.4, 0.4, 0.2]]))[0] == 0


def test_bad_shapes():
    with pytest.raises(ConfigError):
        NetworkParams(2, [LayerSpec(3, TANH)], [np.ones((2, 2))], [np.zeros(3)])
    with pytest.raises(ConfigError):
        NetworkParams.create([2, 3, 2], SOFTMAX, SOFTMAX, Initializer(), make_rng(0))
