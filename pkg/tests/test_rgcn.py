import math

import numpy as np
import pytest

from hostnet.errors import DimensionError, EmptyGraphError, NumericError
from hostnet.graph import RelationKind, Sentence, Token, build_graph
from hostnet.rgcn import (
    RgcnLayerParams,
    gate_value,
    gated_preactivation,
    gated_rgcn_backward,
    gated_rgcn_forward,
    mean_pool,
    rgcn_forward,
)
from oracles import central_difference, loop_gated_rgcn, loop_rgcn, random_tree_sentence

SELF = RelationKind.SELF_LOOP


def random_params(rng, d_in, d_out, scale=1.0):
    return RgcnLayerParams(
        rng.normal(scale=scale, size=(3, d_in, d_out)),
        rng.normal(scale=scale, size=(3, d_out)),
        rng.normal(scale=scale, size=(3, d_in)),
        rng.normal(scale=scale, size=3),
    )


def random_instance(rng, n_max=8, d_max=5):
    n = int(rng.integers(1, n_max + 1))
    d_in, d_out = (int(v) for v in rng.integers(1, d_max + 1, size=2))
    graph = build_graph(random_tree_sentence(rng, n), rng.normal(size=(n, d_in)))
    return random_params(rng, d_in, d_out), graph


def single_node_graph(features):
    return build_graph(Sentence((Token(1, "x", 0, "root"),)), np.atleast_2d(features))


class TestRgcnForward:
    def test_identity_fix_point(self):
        h = np.array([[0.3, 1.2, 0.0]])
        params = RgcnLayerParams.zeros(3, 3)
        params.weight[SELF] = np.eye(3)
        out = rgcn_forward(params, single_node_graph(h), h, "relu")
        np.testing.assert_array_equal(out, h)

    def test_bias_counted_once_per_relation(self, rng):
        params = RgcnLayerParams.zeros(2, 4)
        b = np.array([0.5, -1.0, 2.0, 0.25])
        params.bias[:] = b
        params, graph = params, build_graph(random_tree_sentence(rng, 5), rng.normal(size=(5, 2)))
        out = rgcn_forward(params, graph, graph.features, "identity")
        np.testing.assert_allclose(out, np.tile(3 * b, (5, 1)))

    def test_matches_loop_oracle(self, rng):
        for _ in range(100):
            params, graph = random_instance(rng)
            for act in ("relu", "identity"):
                got = rgcn_forward(params, graph, graph.features, act)
                want = loop_rgcn(params.weight, params.bias, graph.edges, graph.features, act)
                assert np.max(np.abs(got - want)) <= 1e-6

    def test_dimension_errors(self, rng):
        params, graph = random_instance(rng)
        with pytest.raises(DimensionError):
            rgcn_forward(params, graph, np.zeros((graph.n, params.d_in + 1)))
        with pytest.raises(DimensionError):
            rgcn_forward(params, graph, np.zeros((graph.n + 1, params.d_in)))

    def test_non_finite_input(self, rng):
        params, graph = random_instance(rng)
        h = np.array(graph.features)
        h[0, 0] = np.nan
        with pytest.raises(NumericError):
            rgcn_forward(params, graph, h)


class TestGateValue:
    def test_zero_input(self):
        params = RgcnLayerParams.zeros(2, 1)
        assert gate_value(params, RelationKind.FORWARD, np.zeros(2)) == 0.5

    def test_saturation(self, rng):
        params = RgcnLayerParams.zeros(3, 1)
        params.gate_bias[:] = 30.0
        w = rng.normal(size=3)
        params.gate_weight[1] = w / np.sum(np.abs(w))
        h = rng.uniform(-1, 1, size=3)
        assert gate_value(params, RelationKind.INVERSE, h) >= 1 - 1e-12

    def test_scalar_value(self):
        params = RgcnLayerParams.zeros(2, 1)
        params.gate_weight[0] = [0.5, -0.25]
        params.gate_bias[0] = 0.1
        g = gate_value(params, RelationKind.FORWARD, np.array([1.0, 2.0]))
        # 1*0.5 + 2*(-0.25) + 0.1 = 0.1
        assert g == pytest.approx(1 / (1 + math.exp(-0.1)), abs=1e-15)
        assert g == pytest.approx(0.524979, abs=1e-6)

    def test_range(self, rng):
        params = random_params(rng, 4, 1, scale=50.0)
        for _ in range(500):
            g = gate_value(params, RelationKind(int(rng.integers(3))), rng.normal(scale=10, size=4))
            assert 0.0 < g < 1.0

    def test_dimension_error(self):
        with pytest.raises(DimensionError):
            gate_value(RgcnLayerParams.zeros(2, 1), RelationKind.FORWARD, np.zeros(3))


class TestGatedForward:
    def test_saturated_gates_equal_ungated(self, rng):
        for _ in range(100):
            params, graph = random_instance(rng)
            params.gate_weight[:] = 0.0
            params.gate_bias[:] = 30.0
            params.bias[:] = 0.0
            gated = gated_rgcn_forward(params, graph, graph.features)
            plain = rgcn_forward(params, graph, graph.features, "relu")
            assert np.max(np.abs(gated - plain)) <= 1e-6

    def test_zero_gate_params_halve_messages(self, rng):
        params, graph = random_instance(rng)
        params.gate_weight[:] = 0.0
        params.gate_bias[:] = 0.0
        params.bias[:] = 0.0
        pre = gated_preactivation(params, graph, graph.features)
        plain = rgcn_forward(params, graph, graph.features, "identity")
        np.testing.assert_allclose(pre, 0.5 * plain, atol=1e-12)

    def test_matches_loop_oracle(self, rng):
        for _ in range(100):
            params, graph = random_instance(rng)
            got = gated_rgcn_forward(params, graph, graph.features)
            want = loop_gated_rgcn(
                params.weight, params.bias, params.gate_weight, params.gate_bias,
                graph.edges, graph.features,
            )
            assert np.max(np.abs(got - want)) <= 1e-6

    def test_node_permutation_equivariance(self, rng):
        for _ in range(20):
            params, graph = random_instance(rng)
            perm = rng.permutation(graph.n)
            inv = np.argsort(perm)  # old node k -> new node inv[k]
            edges = tuple((int(inv[s]), int(inv[d]), r) for s, d, r in graph.edges)
            permuted = type(graph)(graph.n, graph.features[perm], edges)
            a = gated_rgcn_forward(params, graph, graph.features)
            b = gated_rgcn_forward(params, permuted, permuted.features)
            np.testing.assert_allclose(b, a[perm], atol=1e-12)
            np.testing.assert_allclose(mean_pool(b), mean_pool(a), atol=1e-12)


class TestMeanPool:
    def test_constant_rows(self):
        v = np.array([1.5, -2.0, 3.0])
        np.testing.assert_array_equal(mean_pool(np.tile(v, (4, 1))), v)

    def test_symmetric_rows(self):
        np.testing.assert_array_equal(mean_pool([[0.0, 2.0], [2.0, 0.0]]), [1.0, 1.0])

    def test_three_rows(self, rng):
        rows = rng.normal(size=(3, 6))
        want = [(rows[0, k] + rows[1, k] + rows[2, k]) / 3 for k in range(6)]
        np.testing.assert_allclose(mean_pool(rows), want, rtol=0, atol=4e-16)

    def test_empty(self):
        with pytest.raises(EmptyGraphError):
            mean_pool(np.zeros((0, 3)))


def _kink_free(params, graph, h, margin=1e-6):
    return np.min(np.abs(gated_preactivation(params, graph, h))) > margin


def relative_error(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6))


class TestGatedBackward:
    def test_zero_upstream(self, rng):
        params, graph = random_instance(rng)
        grads = gated_rgcn_backward(params, graph, graph.features, np.zeros((graph.n, params.d_out)))
        for t in (*grads.tensors().values(), grads.inputs):
            assert not np.any(t)

    def test_scalar_case_by_hand(self):
        # n = 1, d = 1, only the self-loop: y = relu(g * (W h + B)), g = sigmoid(w h + b)
        h, W, B, w, b = 0.7, 1.3, 0.2, -0.4, 0.3
        params = RgcnLayerParams.zeros(1, 1)
        params.weight[SELF, 0, 0] = W
        params.bias[SELF, 0] = B
        params.gate_weight[SELF, 0] = w
        params.gate_bias[SELF] = b
        graph = single_node_graph([[h]])
        grads = gated_rgcn_backward(params, graph, [[h]], [[1.0]])
        g = 1 / (1 + math.exp(-(w * h + b)))
        assert g * (W * h + B) > 0
        assert grads.weight[SELF, 0, 0] == pytest.approx(g * h, rel=1e-14)
        assert grads.bias[SELF, 0] == pytest.approx(g, rel=1e-14)
        dg = (W * h + B) * g * (1 - g)
        assert grads.gate_weight[SELF, 0] == pytest.approx(dg * h, rel=1e-14)
        assert grads.gate_bias[SELF] == pytest.approx(dg, rel=1e-14)
        assert grads.inputs[0, 0] == pytest.approx(g * W + dg * w, rel=1e-14)
        # other relations have no edges
        assert grads.weight[0, 0, 0] == 0 and grads.gate_bias[1] == 0

    def test_finite_differences(self, rng):
        checked = 0
        while checked < 50:
            params, graph = random_instance(rng)
            h = np.array(graph.features)
            if not _kink_free(params, graph, h):
                continue
            upstream = rng.normal(size=(graph.n, params.d_out))
            grads = gated_rgcn_backward(params, graph, h, upstream)

            def loss_with(name):
                def f(value):
                    tensors = dict(params.tensors())
                    tensors[name] = value
                    return float(np.sum(upstream * gated_rgcn_forward(RgcnLayerParams(**tensors), graph, h)))
                return f

            for name, analytic in grads.tensors().items():
                numeric = central_difference(loss_with(name), getattr(params, name))
                assert relative_error(analytic, numeric) <= 1e-4, name
            numeric_h = central_difference(
                lambda x: float(np.sum(upstream * gated_rgcn_forward(params, graph, x))), h
            )
            assert relative_error(grads.inputs, numeric_h) <= 1e-4
            checked += 1

    def test_shape_mismatch(self, rng):
        params, graph = random_instance(rng)
        with pytest.raises(DimensionError):
            gated_rgcn_backward(params, graph, graph.features, np.zeros((graph.n, params.d_out + 1)))
