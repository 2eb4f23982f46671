import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from regsl import constraint as C
from regsl import nn
from regsl.nn import Layer, Network


def single(w, b=None):
    w = np.asarray(w, dtype=float)
    return Network([Layer(w, np.zeros(w.shape[0]) if b is None else b)])


def rand_pair(seed, widths=(3, 4, 2)):
    a = nn.init_network(widths, seed=seed)
    b = nn.init_network(widths, seed=seed + 1000)
    return a, b


def test_exponential_schedule_examples():
    assert C.exponential_schedule(0.05, 1, 3).radii == (0.05, 0.05, 0.05)
    assert C.exponential_schedule(1, 2, 4).radii == (1, 2, 4, 8)
    assert C.exponential_schedule(0, 3, 2).radii == (0, 0)


def test_schedule_rejects_shrinking_gamma():
    with pytest.raises(C.ParameterError):
        C.exponential_schedule(1, 0.5, 3)


@given(st.floats(0, 100), st.floats(1, 5), st.integers(1, 8))
def test_schedule_nondecreasing(d, g, n):
    r = C.exponential_schedule(d, g, n).radii
    assert all(a <= b for a, b in zip(r, r[1:]))


def test_projection_interior_point_unchanged():
    anchor = single([[0.0, 0.0]])
    net = single([[0.3, 0.4]])
    out = C.project(net, anchor, C.DistanceSchedule((1.0,)))
    np.testing.assert_array_equal(out.layers[0].weight, net.layers[0].weight)


def test_projection_radial_scaling():
    anchor = single(np.zeros((2, 2)))
    w = np.array([[3.0, 0.0], [0.0, 4.0]])  # norm 5 = 2 * 2.5
    out = C.project(single(w), anchor, C.DistanceSchedule((2.5,)))
    np.testing.assert_allclose(out.layers[0].weight, w / 2, rtol=1e-15)
    assert C.layer_distances(out, anchor)[0] == pytest.approx(2.5, rel=1e-15)


def test_projection_leaves_biases():
    anchor = single(np.zeros((1, 2)))
    net = single([[10.0, 0.0]], b=np.array([7.0]))
    out = C.project(net, anchor, C.DistanceSchedule((1.0,)))
    assert out.layers[0].bias[0] == 7.0


def test_zero_radius_zero_distance_returns_anchor():
    anchor = single([[1.0, 2.0]])
    out = C.project(nn.clone_weights(anchor), anchor, C.DistanceSchedule((0.0,)))
    np.testing.assert_array_equal(out.layers[0].weight, anchor.layers[0].weight)


def test_projection_beats_rejection_samples():
    rng = np.random.default_rng(0)
    w, w0 = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
    radius = 0.5
    out = C.project(single(w), single(w0), C.DistanceSchedule((radius,))).layers[0].weight
    pts = rng.uniform(-radius, radius, size=(40_000, 4))
    pts = pts[np.linalg.norm(pts, axis=1) <= radius][:10_000]
    assert len(pts) == 10_000
    cand = np.linalg.norm(w0.reshape(1, -1) + pts - w.reshape(1, -1), axis=1)
    assert np.linalg.norm(out - w) <= cand.min() + 1e-12


def test_project_shape_mismatch():
    with pytest.raises(nn.ShapeError):
        C.project(single(np.zeros((2, 2))), single(np.zeros((2, 3))), C.DistanceSchedule((1.0,)))
    with pytest.raises(nn.ShapeError):
        C.project(single(np.zeros((2, 2))), single(np.zeros((2, 2))), C.DistanceSchedule((1.0, 2.0)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 3))
def test_projection_properties(seed, base):
    net, anchor = rand_pair(seed)
    other, _ = rand_pair(seed + 7)
    sched = C.exponential_schedule(base, 1.5, len(net))
    once = C.project(net, anchor, sched)
    twice = C.project(once, anchor, sched)
    assert C.satisfies(once, anchor, sched)
    for a, b in zip(once.layers, twice.layers):
        np.testing.assert_allclose(a.weight, b.weight, rtol=0, atol=1e-12)
    assert nn.networks_equal(C.project(anchor, anchor, sched), anchor)
    p_other = C.project(other, anchor, sched)
    for pa, pb, a, b in zip(once.layers, p_other.layers, net.layers, other.layers):
        assert np.linalg.norm(pa.weight - pb.weight) <= np.linalg.norm(a.weight - b.weight) + 1e-12


def test_layer_distances_examples():
    anchor = single(np.zeros((2, 2)))
    assert C.layer_distances(anchor, anchor) == [0.0]
    assert C.layer_distances(single([[3.0, 0.0], [0.0, 4.0]]), anchor) == [5.0]


def test_distance_ratios_examples():
    net, _ = rand_pair(1)
    assert C.distance_ratios(net, net) == [0.0, 0.0]
    doubled = Network([Layer(2 * l.weight, l.bias, l.activation) for l in net.layers])
    assert C.distance_ratios(doubled, net) == pytest.approx([1.0, 1.0], rel=1e-15)
    anchor = single([[6.0, 8.0]])  # norm 10
    assert C.distance_ratios(single([[6.3, 8.4]]), anchor)[0] == pytest.approx(0.05, rel=1e-12)


def test_distance_ratio_zero_anchor():
    with pytest.raises(C.DegenerateAnchorError):
        C.distance_ratios(single([[1.0]]), single([[0.0]]))


def test_infinite_radius_is_noop():
    net, anchor = rand_pair(3)
    out = C.project(net, anchor, C.DistanceSchedule.unconstrained(2))
    assert nn.networks_equal(out, net)


def test_schedule_from_config_precedence():
    s = C.schedule_from_config(3, base_d=1.0, gamma=2.0, radii=[5, 6, 7])
    assert s.radii == (5, 6, 7)
    assert C.schedule_from_config(2, base_d=1.0, gamma=2.0).radii == (1, 2)
    assert C.schedule_from_config(2) is None


def test_negative_radius_rejected():
    with pytest.raises(C.ParameterError):
        C.DistanceSchedule((1.0, -0.1))
    assert math.isinf(C.DistanceSchedule((math.inf,)).radii[0])
