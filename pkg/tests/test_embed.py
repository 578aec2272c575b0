from types import SimpleNamespace

import numpy as np
import pytest

from conftest import random_graph
from pagm.assignment import PermutationMatrix
from pagm.embed import (
    Aggregator,
    ModelParams,
    embed_backward,
    embed_forward,
    grad_check,
    init_params,
    layer_forward,
    pair_forward_backward,
    params_to_vector,
    vector_to_params,
)
from pagm.errors import InvalidDepth, InvalidGroundTruth, KinkProximity, ShapeMismatch, StaleIntermediates
from pagm.graph import bfs_distances, position_coefficients


def coeffs(g, r=3):
    return position_coefficients(bfs_distances(g, r))


def permuted_pair(rng, n=6, f=4):
    g = random_graph(rng, n, p=0.4, f=f)
    perm = rng.permutation(n)
    return SimpleNamespace(source=g, target=g.permuted(perm), gt=PermutationMatrix(tuple(perm), n))


def checked(pair_fn, params_fn, **kw):
    """grad_check, resampling on kink proximity."""
    for attempt in range(50):
        try:
            return grad_check(pair_fn(attempt), params_fn(attempt), **kw)
        except KinkProximity:
            continue
    raise AssertionError("could not sample a kink-free instance")


class TestInit:
    def test_deterministic(self):
        a, b = init_params(4, [8, 16], seed=3), init_params(4, [8, 16], seed=3)
        assert all(np.array_equal(x, y) for x, y in zip(a.layers, b.layers))

    def test_shapes(self):
        assert init_params(4, [8, 16], seed=0).shapes == [(8, 8), (16, 16)]

    def test_bounds(self):
        p = init_params(5, [7], seed=1)
        assert np.abs(p.layers[0]).max() <= np.sqrt(6 / (10 + 7))

    def test_empty_depth(self):
        with pytest.raises(InvalidDepth):
            init_params(4, [], seed=0)

    def test_chain_consistency(self):
        with pytest.raises(ShapeMismatch):
            ModelParams((np.zeros((4, 3)), np.zeros((4, 2))))

    def test_vector_roundtrip(self):
        p = init_params(3, [5, 2], seed=9)
        v = params_to_vector(p)
        assert v.size == 6 * 5 + 10 * 2
        assert v[1] == p.layers[0][0, 1]
        back = vector_to_params(v, p.shapes)
        assert all(np.array_equal(x, y) for x, y in zip(p.layers, back.layers))


class TestLayer:
    def test_zero_input(self, rng):
        q = coeffs(random_graph(rng, 5))
        assert not layer_forward(np.zeros((5, 3)), q, rng.standard_normal((6, 4))).any()

    def test_single_node_negative(self):
        out = layer_forward([[1.0]], [[1.0]], [[0.5], [-2.0]])
        assert out.tolist() == [[0.0]]

    def test_single_node_positive(self):
        out = layer_forward([[1.0]], [[1.0]], [[0.5], [0.25]])
        assert out.tolist() == [[0.75]]

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            layer_forward(np.ones((2, 3)), np.eye(2) , np.ones((4, 1)))
        with pytest.raises(ShapeMismatch):
            layer_forward(np.ones((2, 3)), np.eye(3), np.ones((6, 1)))

    def test_identity_anchoring(self, rng):
        # first half of the aggregate is h itself when q rows sum to one
        from pagm.embed import _aggregate

        for _ in range(20):
            g = random_graph(rng, int(rng.integers(2, 12)), f=5)
            z = _aggregate(g.features, coeffs(g), Aggregator.SUM)
            np.testing.assert_allclose(z[:, :5], g.features, atol=1e-12)

    def test_matches_explicit_pair_sum(self, rng):
        g = random_graph(rng, 6, f=3)
        q = coeffs(g)
        w = rng.standard_normal((6, 4))
        h = g.features
        want = np.array(
            [np.maximum(sum(q[v, u] * np.concatenate([h[v], h[u]]) for u in range(6)) @ w, 0) for v in range(6)]
        )
        np.testing.assert_allclose(layer_forward(h, q, w), want, atol=1e-12)
        want_mean = np.array(
            [np.maximum(sum(q[v, u] * np.concatenate([h[v], h[u]]) for u in range(6)) / 6 @ w, 0) for v in range(6)]
        )
        np.testing.assert_allclose(layer_forward(h, q, w, aggregator="mean"), want_mean, atol=1e-12)


class TestForward:
    def test_zero_weights(self, rng):
        g = random_graph(rng, 5, f=3)
        p = ModelParams((np.zeros((6, 4)), np.zeros((8, 2))))
        h, _ = embed_forward(g, coeffs(g), p)
        assert h.shape == (5, 2) and not h.any()

    def test_single_layer_is_layer_forward(self, rng):
        g = random_graph(rng, 5, f=3)
        p = init_params(3, [4], seed=2)
        h, _ = embed_forward(g, coeffs(g), p)
        np.testing.assert_array_equal(h, layer_forward(g.features, coeffs(g), p.layers[0]))

    def test_width_check(self, rng):
        g = random_graph(rng, 5, f=3)
        with pytest.raises(ShapeMismatch):
            embed_forward(g, coeffs(g), init_params(4, [4], seed=0))

    def test_permutation_equivariance(self, rng):
        for k in range(100):
            n = int(rng.integers(2, 13))
            g = random_graph(rng, n, f=4)
            perm = rng.permutation(n)
            p = init_params(4, [8, 8], seed=k)
            h, _ = embed_forward(g, coeffs(g), p)
            gp = g.permuted(perm)
            hp, _ = embed_forward(gp, coeffs(gp), p)
            np.testing.assert_allclose(hp[perm], h, atol=1e-9)

    def test_deterministic(self, rng):
        g = random_graph(rng, 8, f=4)
        p = init_params(4, [8, 8], seed=1)
        a, _ = embed_forward(g, coeffs(g), p)
        b, _ = embed_forward(g, coeffs(g), p)
        assert np.array_equal(a, b)


class TestBackward:
    def test_zero_upstream(self, rng):
        g = random_graph(rng, 5, f=3)
        p = init_params(3, [4, 4], seed=0)
        _, tr = embed_forward(g, coeffs(g), p)
        grads = embed_backward(tr, tr, np.zeros((5, 4)), np.zeros((5, 4)), p)
        assert not any(x.any() for x in grads.grads)

    def test_single_node_outer_product(self):
        p = ModelParams((np.array([[0.5, 1.0], [0.25, 2.0], [0.5, 0.1], [1.0, 0.3]]),))
        h = np.array([[1.0, 2.0]])
        _, tr = embed_forward(h, [[1.0]], p)
        assert (tr.pre[0] > 0).all()
        d = np.array([[0.3, -1.5]])
        grads = embed_backward(tr, tr, d, np.zeros_like(d), p)
        z = np.array([1.0, 2.0, 1.0, 2.0])
        np.testing.assert_allclose(grads.grads[0], np.outer(z, d), atol=1e-15)

    def test_stale_trace(self, rng):
        g = random_graph(rng, 5, f=3)
        p = init_params(3, [4, 4], seed=0)
        _, tr = embed_forward(g, coeffs(g), p)
        with pytest.raises(StaleIntermediates):
            embed_backward(tr, tr, np.zeros((4, 4)), np.zeros((5, 4)), p)
        with pytest.raises(StaleIntermediates):
            embed_backward(tr, tr, np.zeros((5, 4)), np.zeros((5, 4)), init_params(3, [4], seed=0))


class TestGradCheck:
    def test_reference_instance(self):
        rng = np.random.default_rng(7)
        rep = checked(lambda a: permuted_pair(rng, 6, 4), lambda a: init_params(4, [8, 8], seed=7 + a), sinkhorn_iters=20)
        assert rep.passed and rep.max_rel_err < 1e-4

    def test_mean_aggregator_and_rectangular(self):
        from pagm.data import PairGenConfig, gen_pair

        rep = checked(
            lambda a: gen_pair(PairGenConfig(n=5, m=7, feature_dim=3, p=0.5, seed=a)),
            lambda a: init_params(3, [6, 5], seed=a, aggregator="mean"),
            sinkhorn_iters=10,
            temperature=0.5,
        )
        assert rep.passed

    def test_corrupted_gradient_fails(self):
        rng = np.random.default_rng(3)
        pair = permuted_pair(rng)
        for seed in range(50):
            p = init_params(4, [8, 8], seed=seed)
            qs, qt = coeffs(pair.source), coeffs(pair.target)
            res = pair_forward_backward(p, pair.source.features, qs, pair.target.features, qt, pair.gt, 20)
            if min(np.abs(x).min() for x in res.pre_activations) >= 1e-3:
                break
        bad = res.gradients.flat()
        k = int(np.argmax(np.abs(bad)))
        bad[k] *= 2
        rep = grad_check(pair, p, sinkhorn_iters=20, analytic=bad)
        assert not rep.passed and rep.worst_index == k

    def test_fractional_ground_truth_rejected(self):
        rng = np.random.default_rng(0)
        pair = permuted_pair(rng)
        pair.gt = np.full((6, 6), 1 / 6)
        with pytest.raises(InvalidGroundTruth):
            grad_check(pair, init_params(4, [8, 8], seed=0))

    def test_kink_detection(self):
        rng = np.random.default_rng(0)
        pair = permuted_pair(rng)
        with pytest.raises(KinkProximity):
            grad_check(pair, init_params(4, [8, 8], seed=0), kink_margin=1e9)
