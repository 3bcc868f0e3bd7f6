"""
Label propagation against a dense inverse
=========================================

Builds a cosine kNN graph on random unit vectors, propagates two seed
labels with conjugate gradients, and checks the answer against a direct
solve and against the gradient of the smoothness objective.
"""
import numpy as np

from cyclecluster import build_graph, label_seed, mu_from_alpha, propagate, q_gradient

rng = np.random.default_rng(0)
V = rng.normal(size=(40, 3))
V /= np.linalg.norm(V, axis=1, keepdims=True)

graph = build_graph(V, k_nn=5, gamma=3.0)
print("edges:", graph.W.nnz // 2, " min degree:", graph.degree.min())

labels = np.full(40, -1)
labels[:2] = [0, 1]
Y = label_seed(labels, 2)

alpha = 0.99
F, residual = propagate(graph, Y, alpha, method="cg")
print("CG relative residual:", residual)

# direct solve of the same linear system
S = graph.S.toarray()
F_dense = np.linalg.solve(np.eye(40) - alpha * S, (1 - alpha) * Y)
print("max |F_cg - F_dense|:", np.abs(F - F_dense).max())

# F is the minimiser of the smoothness + fit objective, so its gradient vanishes
print("max |dQ/dF|:", np.abs(q_gradient(graph, F, Y, mu_from_alpha(alpha))).max())

# the class of each node is the argmax of its row
print("pseudo-labels:", F.argmax(1))
