import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import floyd_warshall, random_graph, softmax_oracle
from pagm.errors import AsymmetricAdjacency, FeatureShapeMismatch, SelfLoop
from pagm.graph import (
    UNREACHABLE,
    Graph,
    bfs_distances,
    from_edges,
    position_coefficients,
    validate_graph,
)


def path(n, f=2):
    return from_edges(n, [(i, i + 1) for i in range(n - 1)], np.ones((n, f)))


class TestValidate:
    def test_valid_path_returned_unchanged(self):
        g = path(3)
        assert validate_graph(g) is g

    def test_asymmetric(self):
        a = np.zeros((3, 3), dtype=int)
        a[0, 1] = 1
        with pytest.raises(AsymmetricAdjacency, match=r"\[0\]\[1\]"):
            validate_graph(Graph(a, np.ones((3, 2))))

    def test_self_loop(self):
        a = np.zeros((3, 3), dtype=int)
        a[2, 2] = 1
        with pytest.raises(SelfLoop, match="node 2"):
            validate_graph(Graph(a, np.ones((3, 2))))

    def test_feature_rows(self):
        with pytest.raises(FeatureShapeMismatch, match="2 rows for 3 nodes"):
            validate_graph(Graph(path(3).adjacency, np.ones((2, 2))))

    def test_graph_is_immutable(self):
        g = path(3)
        with pytest.raises(ValueError):
            g.adjacency[0, 1] = 0


class TestBfs:
    def test_path_hops(self):
        assert bfs_distances(path(3), 2)[0].tolist() == [0, 1, 2]

    def test_ceiling(self):
        assert bfs_distances(path(4), 2)[0, 3] == UNREACHABLE

    def test_disconnected(self):
        g = Graph(np.zeros((2, 2)), np.ones((2, 1)))
        assert bfs_distances(g, 5)[0, 1] == UNREACHABLE

    def test_rejects_zero_ceiling(self):
        with pytest.raises(ValueError):
            bfs_distances(path(3), 0)

    def test_matches_floyd_warshall(self, rng):
        for _ in range(30):
            g = random_graph(rng, int(rng.integers(1, 12)), p=0.25)
            r = int(rng.integers(1, 5))
            fw = floyd_warshall(g.adjacency)
            want = np.where(fw <= r, fw, UNREACHABLE).astype(int)
            np.testing.assert_array_equal(bfs_distances(g, r), want)


class TestCoefficients:
    def test_single_node(self):
        g = Graph(np.zeros((1, 1)), np.ones((1, 1)))
        assert position_coefficients(bfs_distances(g, 3)).tolist() == [[1.0]]

    def test_two_nodes(self):
        q = position_coefficients(bfs_distances(path(2), 1))
        np.testing.assert_allclose(q[0], softmax_oracle([0, 1], 1), atol=1e-12)
        np.testing.assert_allclose(q[0], [0.731059, 0.268941], atol=1e-6)

    def test_capped_path_row(self):
        q = position_coefficients(bfs_distances(path(4), 2))
        oracle = softmax_oracle([0, 1, 2, np.inf], 2)
        np.testing.assert_allclose(q[0], oracle, atol=1e-12)
        np.testing.assert_allclose(q[0], [0.665241, 0.244728, 0.090031, 0.0], atol=1e-6)
        assert q[0, 3] == 0.0


@st.composite
def graphs(draw):
    n = draw(st.integers(1, 10))
    bits = draw(st.lists(st.booleans(), min_size=n * n, max_size=n * n))
    a = np.triu(np.array(bits, dtype=np.int8).reshape(n, n), 1)
    return Graph(a + a.T, np.zeros((n, 1)))


class TestCoefficientProperties:
    @settings(max_examples=60, deadline=None)
    @given(graphs(), st.integers(1, 4))
    def test_row_stochastic_and_support(self, g, r):
        d = bfs_distances(g, r)
        q = position_coefficients(d)
        np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-9)
        assert ((q == 0) == (d == UNREACHABLE)).all()

    @settings(max_examples=60, deadline=None)
    @given(graphs(), st.integers(1, 4))
    def test_monotone_in_distance(self, g, r):
        d = bfs_distances(g, r)
        q = position_coefficients(d)
        for v in range(g.n):
            fin = np.flatnonzero(d[v] != UNREACHABLE)
            for u in fin:
                for w in fin:
                    if d[v, u] <= d[v, w]:
                        assert q[v, u] >= q[v, w]

    @settings(max_examples=60, deadline=None)
    @given(graphs(), st.integers(1, 4), st.randoms(use_true_random=False))
    def test_relabel_equivariance(self, g, r, rnd):
        perm = list(range(g.n))
        rnd.shuffle(perm)
        p = np.zeros((g.n, g.n))
        p[perm, np.arange(g.n)] = 1.0  # p @ e_i = e_perm[i]
        q = position_coefficients(bfs_distances(g, r))
        qp = position_coefficients(bfs_distances(g.permuted(perm), r))
        np.testing.assert_allclose(qp, p @ q @ p.T, atol=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(graphs(), st.integers(1, 4))
    def test_raising_ceiling_grows_support(self, g, r):
        lo = position_coefficients(bfs_distances(g, r))
        hi = position_coefficients(bfs_distances(g, r + 1))
        assert not ((lo > 0) & (hi == 0)).any()
