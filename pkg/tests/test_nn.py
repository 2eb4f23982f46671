import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from regsl import nn
from regsl.nn import Layer, Network


def random_net(rng, widths, activation):
    layers = []
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        act = activation if i < len(widths) - 2 else "identity"
        layers.append(Layer(rng.normal(size=(b, a)), rng.normal(size=b), act))
    return Network(layers)


def flat_params(net):
    return [p for l in net.layers for p in (l.weight, l.bias)]


def fd_gradients(net, x, y, h=1e-5):
    out = []
    for p in flat_params(net):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = nn.loss(nn.forward(net, x), y)
            p[idx] = old - h
            down = nn.loss(nn.forward(net, x), y)
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


def max_rel_error(analytic, numeric, floor=1e-4):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        worst = max(worst, float(np.max(np.abs(a - n) / np.maximum(floor, np.abs(a) + np.abs(n)))))
    return worst


def test_identity_layer_forward():
    net = Network([Layer(np.eye(2), np.zeros(2))])
    pred = nn.forward(net, [1.0, 2.0])
    np.testing.assert_array_equal(pred.logits, [1.0, 2.0])
    e1, e2 = math.e, math.e**2
    np.testing.assert_allclose(pred.probabilities, [e1 / (e1 + e2), e2 / (e1 + e2)], rtol=1e-15)
    np.testing.assert_allclose(pred.probabilities, [0.2689, 0.7311], atol=1e-4)


@pytest.mark.parametrize("k", [2, 3, 7])
def test_zero_network_is_uniform(k):
    net = nn.zeros_like_network(nn.init_network([4, 5, k], seed=1))
    pred = nn.forward(net, np.arange(4.0))
    np.testing.assert_allclose(pred.probabilities, np.full(k, 1 / k), rtol=1e-15)


def test_forward_matches_high_precision_matrix_chain():
    rng = np.random.default_rng(7)
    net = random_net(rng, [5, 8, 3], "relu")
    x = rng.normal(size=5)
    mpmath.mp.dps = 40
    h = [mpmath.mpf(float(v)) for v in x]
    for layer in net.layers:
        w = layer.weight
        a = [sum(mpmath.mpf(float(w[r, c])) * h[c] for c in range(w.shape[1]))
             + mpmath.mpf(float(layer.bias[r])) for r in range(w.shape[0])]
        h = [max(v, mpmath.mpf(0)) for v in a] if layer.activation == "relu" else a
    expected = np.array([float(v) for v in h])
    np.testing.assert_allclose(nn.forward(net, x).logits, expected, rtol=0, atol=1e-12)


def test_forward_rejects_wrong_width():
    net = nn.init_network([3, 2])
    with pytest.raises(nn.ShapeError):
        nn.forward(net, [1.0, 2.0])


def test_loss_examples():
    k = 5
    uniform = nn.Prediction(np.zeros(k))
    assert nn.loss(uniform, 3) == pytest.approx(math.log(k), rel=1e-15)
    assert nn.loss(nn.Prediction([0.0, 800.0]), 1) == 0.0
    # -ln(1/(1+e)) = ln(1+e)
    pred = nn.Prediction([1.0, 2.0])
    assert nn.loss(pred, 0) == pytest.approx(math.log1p(math.e), rel=1e-14)
    assert nn.loss(pred, 0) == pytest.approx(1.3133, abs=1e-4)


def test_loss_rejects_bad_label():
    with pytest.raises(nn.LabelError):
        nn.loss(nn.Prediction([0.0, 1.0]), 2)


def test_loss_is_floored():
    assert nn.loss(nn.Prediction([0.0, 1000.0]), 0) == pytest.approx(-math.log(1e-12))


def test_backward_hand_computed():
    net = Network([Layer(np.zeros((2, 2)), np.zeros(2))])
    gw, gb = nn.backward(net, [1.0, 0.0], 0)
    np.testing.assert_allclose(gw[0], [[-0.5, 0.0], [0.5, 0.0]], rtol=1e-15)
    np.testing.assert_allclose(gb[0], [-0.5, 0.5], rtol=1e-15)


def test_backward_vanishes_at_minimum():
    net = Network([Layer(np.array([[40.0, 0.0], [-40.0, 0.0]]), np.zeros(2))])
    gw, gb = nn.backward(net, [1.0, 0.0], 0)
    assert math.sqrt(sum(np.sum(g**2) for g in gw + gb)) < 1e-6


def test_backward_matches_finite_differences_tanh():
    rng = np.random.default_rng(3)
    net = random_net(rng, [4, 6, 5, 3], "tanh")
    x = rng.normal(size=4)
    gw, gb = nn.backward(net, x, 1)
    analytic = [g for pair in zip(gw, gb) for g in pair]
    assert max_rel_error(analytic, fd_gradients(net, x, 1)) < 1e-5


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1),
       depth=st.integers(1, 4),
       activation=st.sampled_from(nn.ACTIVATIONS),
       data=st.data())
def test_backward_property(seed, depth, activation, data):
    widths = data.draw(st.lists(st.integers(1, 8), min_size=depth + 1, max_size=depth + 1))
    widths[-1] = max(widths[-1], 2)
    rng = np.random.default_rng(seed)
    net = random_net(rng, widths, activation)
    x = rng.normal(size=widths[0])
    y = int(rng.integers(widths[-1]))
    gw, gb = nn.backward(net, x, y)
    analytic = [g for pair in zip(gw, gb) for g in pair]
    assert max_rel_error(analytic, fd_gradients(net, x, y)) < 1e-5


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-700, 700), min_size=1, max_size=12))
def test_softmax_sums_to_one(values):
    p = nn.softmax(np.array(values))
    assert abs(p.sum() - 1) < 1e-9
    assert (p >= 0).all()


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=12), st.floats(-100, 100))
def test_softmax_shift_invariant(values, c):
    z = np.array(values)
    np.testing.assert_allclose(nn.softmax(z + c), nn.softmax(z), rtol=0, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-60, 60), min_size=2, max_size=6), st.data())
def test_loss_zero_iff_certain(values, data):
    logits = np.array(values)
    label = data.draw(st.integers(0, len(values) - 1))
    pred = nn.Prediction(logits)
    value = nn.loss(pred, label)
    assert value >= 0
    assert (value == 0) == (pred.probabilities[label] >= 1 - 1e-12)


def test_clone_is_independent():
    net = nn.init_network([3, 4, 2], seed=5)
    copy = nn.clone_weights(net)
    net.layers[0].weight[0, 0] += 1.0
    net.layers[1].bias[0] += 1.0
    assert not nn.networks_equal(net, copy)
    assert nn.networks_equal(nn.clone_weights(copy), copy)


def test_init_is_seeded_and_scaled():
    a = nn.init_network([9, 4, 3], seed=11)
    b = nn.init_network([9, 4, 3], seed=11)
    assert nn.networks_equal(a, b)
    assert np.abs(a.layers[0].weight).max() <= 1 / 3
    assert a.layers[-1].activation == "identity"


def test_network_rejects_inconsistent_layers():
    with pytest.raises(nn.ShapeError):
        Network([Layer(np.ones((3, 2)), np.zeros(3)), Layer(np.ones((2, 4)), np.zeros(2))])


def test_snapshot_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    net = random_net(rng, [3, 5, 4, 2], "tanh")
    net.layers[0].weight[0, 0] = 0.1 + 0.2  # not exactly representable in short decimal
    path = nn.save_snapshot(net, tmp_path / "w.txt")
    again = nn.load_snapshot(path)
    assert nn.networks_equal(net, again)
    assert nn.dumps(again) == path.read_text()


def test_snapshot_layout():
    net = Network([Layer([[1.0, 2.0]], [0.5], "relu")])
    assert nn.dumps(net) == "layers=1\nlayer 0 rows 1 cols 2 activation relu\n1.0 2.0\n0.5\n"
