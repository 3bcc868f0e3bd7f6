"""Graph pseudo-labels: kNN affinity graph, diffusion, and loss weights.

The diffusion step minimizes

    Q(F) = 1/2 sum_ij W_ij |F_i / sqrt(D_ii) - F_j / sqrt(D_jj)|^2 + mu/2 sum_i |F_i - Y_i|^2

whose stationarity condition is ``(I - alpha S) F = (1 - alpha) Y`` with
``S = D^-1/2 W D^-1/2`` and ``alpha = 2 / (2 + mu)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .model import NumericError

ISOLATED_EDGE_WEIGHT = 1e-8
DENSE_MAX_N = 500


@dataclass
class AffinityGraph:
    W: sparse.csr_matrix
    degree: np.ndarray
    S: sparse.csr_matrix
    k_nn: int
    gamma: float

    @property
    def n(self) -> int:
        return self.W.shape[0]


@dataclass
class PropagationResult:
    F: np.ndarray
    pseudo_labels: np.ndarray
    entropy_weights: np.ndarray
    class_weights: np.ndarray
    alpha: float
    residual: float = 0.0

    def to_json(self) -> dict:
        return {
            "pseudo_labels": self.pseudo_labels.tolist(),
            "entropy_weights": self.entropy_weights.tolist(),
            "class_weights": self.class_weights.tolist(),
            "alpha": self.alpha,
            "residual": self.residual,
        }


def knn_indices(V, k, block=1024):
    """Indices of the ``k`` most cosine-similar rows for each row, self excluded.

    Ties in similarity go to the lower index.
    """
    n = V.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, block):
        stop = min(n, start + block)
        sims = V[start:stop] @ V.T
        sims[np.arange(stop - start), np.arange(start, stop)] = -np.inf
        out[start:stop] = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    return out


def build_graph(V, k_nn=10, gamma=3.0) -> AffinityGraph:
    """Symmetric kNN graph with weights ``max(0, <v_i, v_j>)^gamma``."""
    V = np.asarray(V, dtype=np.float64)
    n = V.shape[0]
    if k_nn < 1 or k_nn >= n:
        raise ValueError(f"k_nn must lie in [1, {n - 1}], got {k_nn}")
    nbrs = knn_indices(V, k_nn)
    rows = np.repeat(np.arange(n), k_nn)
    cols = nbrs.ravel()
    sims = np.einsum("ij,ij->i", V[rows], V[cols])
    vals = np.clip(sims, 0.0, 1.0) ** gamma
    A = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    W = A.maximum(A.T).tocsr()
    W.setdiag(0.0)
    W.eliminate_zeros()

    degree = np.asarray(W.sum(axis=1)).ravel()
    isolated = np.flatnonzero(degree == 0)
    if len(isolated):
        pairs = np.unique(
            np.sort(np.column_stack([isolated, nbrs[isolated, 0]]), axis=1), axis=0
        )
        extra_r = np.concatenate([pairs[:, 0], pairs[:, 1]])
        extra_c = np.concatenate([pairs[:, 1], pairs[:, 0]])
        E = sparse.csr_matrix(
            (np.full(len(extra_r), ISOLATED_EDGE_WEIGHT), (extra_r, extra_c)), shape=(n, n)
        )
        W = W.maximum(E).tocsr()
        degree = np.asarray(W.sum(axis=1)).ravel()
    d = 1.0 / np.sqrt(degree)
    S = sparse.diags(d) @ W @ sparse.diags(d)
    return AffinityGraph(W, degree, S.tocsr(), k_nn, gamma)


def label_seed(labels, n_classes) -> np.ndarray:
    """One-hot rows for labeled samples (label >= 0), zero rows otherwise."""
    labels = np.asarray(labels)
    Y = np.zeros((len(labels), n_classes))
    lab = labels >= 0
    Y[np.flatnonzero(lab), labels[lab]] = 1.0
    return Y


def mu_from_alpha(alpha) -> float:
    return 2.0 * (1.0 - alpha) / alpha


def conjugate_gradient(matvec, b, tol=1e-10, max_iters=1000, x0=None):
    """Solve ``A x = b`` for SPD ``A``; stops at ``|r| <= tol * |b|``.

    Returns ``(x, relative_residual, iterations)``.
    """
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - matvec(x)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros_like(b), 0.0, 0
    p = r.copy()
    rr = r @ r
    for it in range(max_iters):
        if np.sqrt(rr) <= tol * bnorm:
            return x, np.sqrt(rr) / bnorm, it
        Ap = matvec(p)
        step = rr / (p @ Ap)
        x += step * p
        r -= step * Ap
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
    res = np.sqrt(rr) / bnorm
    if res > tol:
        raise NumericError(f"CG did not converge in {max_iters} iterations, residual {res:.3e}")
    return x, res, max_iters


def propagate(graph: AffinityGraph, Y, alpha=0.99, tol=1e-10, max_cg_iters=1000, method="auto"):
    """Solve ``(I - alpha S) F = (1 - alpha) Y``.

    ``method`` is ``"dense"``, ``"cg"`` or ``"auto"`` (dense up to 500 nodes).
    Returns ``(F, residual)`` where ``residual`` is the largest relative
    residual over class columns.
    """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    Y = np.asarray(Y, dtype=np.float64)
    n = graph.n
    if Y.shape[0] != n:
        raise ValueError(f"label seed has {Y.shape[0]} rows for a {n}-node graph")
    if method == "auto":
        method = "dense" if n <= DENSE_MAX_N else "cg"
    B = (1.0 - alpha) * Y
    if method == "dense":
        A = np.eye(n) - alpha * graph.S.toarray()
        F = np.linalg.solve(A, B)
    elif method == "cg":
        S = graph.S
        F = np.empty_like(B)
        for c in range(B.shape[1]):
            F[:, c], _, _ = conjugate_gradient(
                lambda x: x - alpha * (S @ x), B[:, c], tol, max_cg_iters
            )
    else:
        raise ValueError(f"unknown method {method!r}")
    R = B - (F - alpha * (graph.S @ F))
    bn = np.linalg.norm(B, axis=0)
    rn = np.linalg.norm(R, axis=0)
    residual = float(np.max(np.where(bn > 0, rn / np.where(bn > 0, bn, 1.0), rn), initial=0.0))
    return F, residual


def q_gradient(graph: AffinityGraph, F, Y, mu):
    """Gradient of Q(F) written directly from W and D."""
    F = np.asarray(F, dtype=np.float64)
    inv = 1.0 / np.sqrt(graph.degree)
    G = F * inv[:, None]
    WG = graph.W @ G
    smooth = 2.0 * (F - inv[:, None] * WG)
    return smooth + mu * (F - Y)


def extract_pseudo_labels(F) -> np.ndarray:
    """Row argmax; ties resolve to the lowest class index."""
    return np.asarray(F).argmax(axis=1)


def _probability_rows(F):
    P = np.clip(np.asarray(F, dtype=np.float64), 0.0, None)
    sums = P.sum(axis=1, keepdims=True)
    C = P.shape[1]
    return np.where(sums > 0, P / np.where(sums > 0, sums, 1.0), 1.0 / C)


def entropy_weights(F) -> np.ndarray:
    """1 - H(p_i) / ln C with p_i the clamped, renormalized row of F."""
    P = _probability_rows(F)
    C = P.shape[1]
    if C < 2:
        raise ValueError("entropy weights need at least 2 classes")
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(P > 0, P * np.log(P), 0.0)
    H = -plogp.sum(axis=1)
    return np.clip(1.0 - H / np.log(C), 0.0, 1.0)


def class_weights(labels_true, labels_pseudo, n_classes) -> np.ndarray:
    """Reciprocal class frequencies over true labels plus pseudo-labels;
    classes that never occur get weight 1."""
    counts = np.bincount(np.asarray(labels_true, dtype=np.int64), minlength=n_classes)
    counts = counts + np.bincount(np.asarray(labels_pseudo, dtype=np.int64), minlength=n_classes)
    counts = counts[:n_classes].astype(np.float64)
    return np.where(counts > 0, 1.0 / np.where(counts > 0, counts, 1.0), 1.0)


def graph_pseudo_labels(
    V, labels, n_classes, k_nn=10, gamma=3.0, alpha=0.99, tol=1e-10, max_cg_iters=1000,
    method="auto",
):
    """Graph build, diffusion, and weight computation in one call.

    ``labels`` holds the class of each labeled sample and -1 elsewhere.
    Class weights count true labels for labeled samples and pseudo-labels for
    the rest.
    """
    labels = np.asarray(labels)
    graph = build_graph(V, k_nn, gamma)
    Y = label_seed(labels, n_classes)
    F, residual = propagate(graph, Y, alpha, tol, max_cg_iters, method)
    yhat = extract_pseudo_labels(F)
    omega = entropy_weights(F)
    lab = labels >= 0
    zeta = class_weights(labels[lab], yhat[~lab], n_classes)
    return PropagationResult(F, yhat, omega, zeta, alpha, residual), graph
