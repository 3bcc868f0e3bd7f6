import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import sparse

from cyclecluster.model import NumericError
from cyclecluster.propagation import (
    AffinityGraph,
    build_graph,
    class_weights,
    conjugate_gradient,
    entropy_weights,
    extract_pseudo_labels,
    graph_pseudo_labels,
    label_seed,
    mu_from_alpha,
    propagate,
    q_gradient,
)


def unit_rows(n, d, seed):
    V = np.random.default_rng(seed).normal(size=(n, d))
    return V / np.linalg.norm(V, axis=1, keepdims=True)


def graph_from_dense(W):
    W = np.asarray(W, dtype=float)
    deg = W.sum(1)
    d = 1 / np.sqrt(deg)
    return AffinityGraph(
        sparse.csr_matrix(W), deg, sparse.csr_matrix(d[:, None] * W * d[None, :]), 1, 1.0
    )


def brute_force_W(V, k, gamma):
    n = len(V)
    sims = [[float(np.dot(V[i], V[j])) for j in range(n)] for i in range(n)]
    knn = []
    for i in range(n):
        others = sorted((j for j in range(n) if j != i), key=lambda j: (-sims[i][j], j))
        knn.append(set(others[:k]))
    W = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j and (j in knn[i] or i in knn[j]):
                W[i, j] = min(1.0, max(0.0, sims[i][j])) ** gamma
    return W


def brute_force_q_grad(W, F, Y, mu):
    n = len(W)
    D = W.sum(1)
    G = np.zeros_like(F)
    # differentiate 1/2 sum_ij W_ij |F_i/sqrt(D_i) - F_j/sqrt(D_j)|^2 term by term
    for i in range(n):
        for j in range(n):
            diff = F[i] / np.sqrt(D[i]) - F[j] / np.sqrt(D[j])
            G[i] += W[i, j] * diff / np.sqrt(D[i])
            G[j] -= W[i, j] * diff / np.sqrt(D[j])
    return G + mu * (F - Y)


class TestBuildGraph:
    def test_identical_pair(self):
        V = np.array([[1.0, 0.0], [1.0, 0.0]])
        g = build_graph(V, k_nn=1, gamma=3)
        np.testing.assert_array_equal(g.W.toarray(), [[0, 1], [1, 0]])
        np.testing.assert_array_equal(g.degree, [1, 1])
        np.testing.assert_array_equal(g.S.toarray(), g.W.toarray())

    def test_negative_similarity_clamped(self):
        V = np.array([[1.0, 0.0], [0.0, 1.0], [np.sqrt(0.5), np.sqrt(0.5)]])
        g = build_graph(V, k_nn=2, gamma=3).W.toarray()
        assert g[0, 1] == 0.0
        assert g[0, 2] == pytest.approx(0.5**1.5)

    def test_antipodal_points_only_get_guard_edges(self):
        V = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
        W = build_graph(V, k_nn=2, gamma=3).W.toarray()
        assert W.max() <= 1e-8

    def test_isolated_nodes_get_tiny_edge(self):
        V = np.array([[1.0, 0.0], [-1.0, 0.0]])
        g = build_graph(V, k_nn=1)
        assert np.all(g.degree > 0)
        assert g.W[0, 1] == pytest.approx(1e-8)

    @pytest.mark.parametrize("seed", range(3))
    @pytest.mark.parametrize("k", [1, 3, 9])
    def test_matches_exhaustive_scan(self, seed, k):
        V = unit_rows(10, 3, seed)
        g = build_graph(V, k_nn=k, gamma=3)
        oracle = brute_force_W(V, k, 3)
        # the isolated-node guard only adds edges where the oracle has none
        if np.all(oracle.sum(1) > 0):
            np.testing.assert_allclose(g.W.toarray(), oracle, rtol=0, atol=1e-15)

    def test_invariants(self):
        g = build_graph(unit_rows(40, 5, 1), k_nn=4)
        W = g.W.toarray()
        assert np.array_equal(W, W.T) and np.all(np.diag(W) == 0) and np.all(W >= 0)
        assert np.max(np.abs(np.linalg.eigvalsh(g.S.toarray()))) <= 1 + 1e-12

    def test_bad_k(self):
        with pytest.raises(ValueError):
            build_graph(unit_rows(4, 2, 0), k_nn=4)


class TestPropagate:
    def test_no_edges(self):
        W = np.zeros((3, 3))
        g = AffinityGraph(sparse.csr_matrix(W), np.ones(3), sparse.csr_matrix(W), 1, 1.0)
        Y = label_seed([1, -1, -1], 2)
        for method in ("dense", "cg"):
            F, _ = propagate(g, Y, 0.7, method=method)
            np.testing.assert_allclose(F, 0.3 * Y, atol=1e-15)

    def test_two_node_hand_inverse(self):
        g = graph_from_dense([[0, 1], [1, 0]])
        Y = label_seed([0, -1], 2)
        for method in ("dense", "cg"):
            F, _ = propagate(g, Y, 0.5, method=method)
            np.testing.assert_allclose(F[:, 0], [2 / 3, 1 / 3], atol=1e-14)
            np.testing.assert_allclose(F[:, 1], 0, atol=1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_cg_matches_dense(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(5, 51))
        g = build_graph(unit_rows(n, 4, seed), k_nn=min(5, n - 1))
        labels = np.full(n, -1)
        labels[rng.choice(n, 3, replace=False)] = [0, 1, 2]
        Y = label_seed(labels, 3)
        Fd, _ = propagate(g, Y, 0.99, method="dense")
        Fc, res = propagate(g, Y, 0.99, method="cg")
        assert np.max(np.abs(Fd - Fc)) <= 1e-8
        assert res <= 1e-10

    def test_stationarity(self):
        g = build_graph(unit_rows(30, 3, 7), k_nn=4)
        Y = label_seed(np.r_[0, 1, -np.ones(28, dtype=int)], 2)
        alpha = 0.9
        F, _ = propagate(g, Y, alpha, method="cg")
        mu = mu_from_alpha(alpha)
        assert np.max(np.abs(q_gradient(g, F, Y, mu))) <= 1e-9

    def test_q_gradient_matches_brute_force(self):
        g = build_graph(unit_rows(8, 3, 2), k_nn=3)
        rng = np.random.default_rng(0)
        F, Y = rng.normal(size=(8, 2)), label_seed([0, 1, -1, -1, -1, -1, -1, -1], 2)
        np.testing.assert_allclose(
            q_gradient(g, F, Y, 0.3), brute_force_q_grad(g.W.toarray(), F, Y, 0.3), atol=1e-12
        )

    def test_bad_alpha(self):
        g = graph_from_dense([[0, 1], [1, 0]])
        with pytest.raises(ValueError):
            propagate(g, np.eye(2), 1.0)

    def test_cg_nonconvergence(self):
        A = np.diag(np.linspace(1, 100, 50))
        with pytest.raises(NumericError, match="residual"):
            conjugate_gradient(lambda x: A @ x, np.ones(50), tol=1e-14, max_iters=3)

    def test_fully_labeled_small_alpha_recovers_labels(self):
        labels = np.array([0, 1, 2, 1, 0, 2])
        g = build_graph(unit_rows(6, 3, 0), k_nn=2)
        F, _ = propagate(g, label_seed(labels, 3), 1e-6)
        assert np.array_equal(extract_pseudo_labels(F), labels)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), w=st.floats(0.01, 2.0))
    def test_duplicate_labeled_neighbour_never_lowers_confidence(self, seed, w):
        rng = np.random.default_rng(seed)
        W = rng.uniform(0, 1, size=(4, 4))
        W = np.triu(W, 1)
        W = W + W.T
        labels = np.array([0, 1, -1, -1])
        F, _ = propagate(graph_from_dense(W), label_seed(labels, 2), 0.9)
        # add node 4, a copy of labeled node 0 (class 0), linked to node 2
        W2 = np.zeros((5, 5))
        W2[:4, :4] = W
        W2[4, :4] = W2[:4, 4] = W[0]
        W2[4, 2] = W2[2, 4] = W2[4, 2] + w
        F2, _ = propagate(graph_from_dense(W2), label_seed(np.r_[labels, 0], 2), 0.9)
        p = F[2] / F[2].sum()
        p2 = F2[2] / F2[2].sum()
        assert p2[0] >= p[0] - 1e-12


class TestWeights:
    def test_argmax(self):
        assert extract_pseudo_labels(np.array([[0.2, 0.7, 0.1]])).tolist() == [1]
        assert extract_pseudo_labels(np.array([[0.5, 0.5]])).tolist() == [0]
        assert extract_pseudo_labels(np.zeros((1, 3))).tolist() == [0]

    def test_entropy_weight_cases(self):
        F = np.array([[0.0, 1.0, 0.0, 0.0], [0.25] * 4, [0.5, 0.5, 0.0, 0.0], [0.0] * 4])
        w = entropy_weights(F)
        np.testing.assert_allclose(w, [1.0, 0.0, 1 - np.log(2) / np.log(4), 0.0], atol=1e-12)
        assert w[2] == pytest.approx(0.5, abs=1e-15)

    def test_negative_entries_clamped(self):
        np.testing.assert_allclose(entropy_weights(np.array([[1.0, -1e-9]])), [1.0])

    @settings(max_examples=50, deadline=None)
    @given(
        row=st.lists(st.floats(0.0, 10.0), min_size=2, max_size=6).filter(lambda r: sum(r) > 1e-3),
        scale=st.floats(1e-3, 1e3),
    )
    def test_scale_invariance(self, row, scale):
        F = np.array([row])
        np.testing.assert_allclose(entropy_weights(F), entropy_weights(scale * F), atol=1e-12)
        assert 0.0 <= entropy_weights(F)[0] <= 1.0

    def test_class_weights(self):
        np.testing.assert_allclose(class_weights([0, 0], [1, 1, 1], 2), [0.5, 1 / 3])
        np.testing.assert_allclose(class_weights([0], [0], 3), [0.5, 1.0, 1.0])
        np.testing.assert_allclose(class_weights([0, 0, 1], [1, 1, 1, 0], 2), [1 / 3, 1 / 4])


def test_graph_pseudo_labels_bundle():
    V = unit_rows(30, 3, 0)
    labels = np.full(30, -1)
    labels[:2] = [0, 1]
    res, graph = graph_pseudo_labels(V, labels, 2, k_nn=5)
    assert res.F.shape == (30, 2) and graph.n == 30
    expected = class_weights(labels[:2], res.pseudo_labels[2:], 2)
    np.testing.assert_array_equal(res.class_weights, expected)
    assert set(res.to_json()) >= {"pseudo_labels", "entropy_weights", "class_weights", "residual"}
