"""Lloyd's k-means with k-means++ seeding on (L2-normalized) embeddings."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ClusterResult:
    centroids: np.ndarray  # (K, d)
    assignments: np.ndarray  # (n,)
    inertia: float
    iterations_run: int
    inertia_history: list = field(default_factory=list)

    @property
    def K(self) -> int:
        return self.centroids.shape[0]

    def to_json(self) -> dict:
        return {
            "K": self.K,
            "inertia": self.inertia,
            "iterations_run": self.iterations_run,
            "assignments": self.assignments.tolist(),
            "cluster_sizes": np.bincount(self.assignments, minlength=self.K).tolist(),
        }


def sq_distances(V, M):
    """Squared Euclidean distances, (n, K).  Computed from differences, not the
    dot-product expansion, so exact ties stay exact."""
    V = np.asarray(V, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    if V.shape[1] != M.shape[1]:
        raise ValueError(f"embedding dim {V.shape[1]} != centroid dim {M.shape[1]}")
    out = np.empty((V.shape[0], M.shape[0]))
    for k in range(M.shape[0]):
        diff = V - M[k]
        out[:, k] = np.einsum("ij,ij->i", diff, diff)
    return out


def assign(V, M) -> np.ndarray:
    """Nearest centroid per row; ties go to the lowest index."""
    return sq_distances(V, M).argmin(axis=1)


def seed_centroids(V, K, seed=0) -> np.ndarray:
    """k-means++ seeding."""
    V = np.asarray(V, dtype=np.float64)
    n = V.shape[0]
    if not 1 <= K <= n:
        raise ValueError(f"K must lie in [1, {n}], got {K}")
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(n))]
    d2 = sq_distances(V, V[chosen[0]][None, :])[:, 0]
    for _ in range(1, K):
        total = d2.sum()
        if total <= 0:
            # every row already coincides with a chosen centroid
            chosen.append(chosen[-1])
            continue
        nxt = int(rng.choice(n, p=d2 / total))
        chosen.append(nxt)
        d2 = np.minimum(d2, sq_distances(V, V[nxt][None, :])[:, 0])
    return V[chosen].copy()


def _repair_empty(V, labels, dist, K):
    """Move each empty cluster's centroid onto the sample farthest from its own
    centroid.  Returns the new labels and the list of (cluster, sample) moves."""
    counts = np.bincount(labels, minlength=K)
    moves = []
    if counts.min() > 0:
        return labels, moves
    labels = labels.copy()
    own = dist[np.arange(len(labels)), labels].copy()
    for k in np.flatnonzero(counts == 0):
        # only steal from clusters that keep at least one member
        donors = counts[labels] > 1
        if not donors.any():
            break
        cand = np.where(donors, own, -np.inf)
        i = int(cand.argmax())
        counts[labels[i]] -= 1
        counts[k] += 1
        labels[i] = k
        own[i] = 0.0
        moves.append((int(k), i))
    return labels, moves


def kmeans(V, K, max_iters=100, seed=0, init=None, callback=None) -> ClusterResult:
    """Lloyd iterations until assignments stop changing or ``max_iters``.

    ``init`` warm-starts from given centroids instead of k-means++.
    ``callback(iteration, inertia)`` observes the inertia after each
    assignment step.
    """
    V = np.asarray(V, dtype=np.float64)
    n = V.shape[0]
    if not 1 <= K <= n:
        raise ValueError(f"K must lie in [1, {n}], got {K}")
    if not np.all(np.isfinite(V)):
        raise ValueError("embedding contains non-finite values")
    if init is None:
        M = seed_centroids(V, K, seed)
    else:
        M = np.array(init, dtype=np.float64)
        if M.shape != (K, V.shape[1]):
            raise ValueError(f"init centroids have shape {M.shape}, expected {(K, V.shape[1])}")

    history = []
    labels = None
    iters = 0
    for it in range(max(1, max_iters)):
        dist = sq_distances(V, M)
        new = dist.argmin(axis=1)
        new, moves = _repair_empty(V, new, dist, K)
        for k, i in moves:
            M[k] = V[i]
        inertia = float(dist[np.arange(n), new].sum())
        if moves:
            inertia = float(sq_distances(V, M)[np.arange(n), new].sum())
        history.append(inertia)
        if callback is not None:
            callback(it, inertia)
        iters = it + 1
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        if it + 1 == max_iters:
            break
        for k in range(K):
            members = V[labels == k]
            if len(members):
                M[k] = members.mean(axis=0)
    final = sq_distances(V, M)
    inertia = float(final[np.arange(n), labels].sum())
    return ClusterResult(M, labels, inertia, iters, history)
