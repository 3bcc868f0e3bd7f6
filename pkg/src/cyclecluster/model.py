"""Shared classifier: MLP feature extractor, L2 normalization, one FC head.

The network is ``f = g o z``.  ``z`` is a stack of dense layers (leaky-ReLU
between them, linear last layer) followed by row-wise L2 normalization; ``g``
is a single dense head of width ``H = max(K, C)``.  The class task reads the
first ``C`` head outputs and the clustering task the first ``K``.

Gradients are computed by hand; there is no autodiff.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_VERSION = 1
LOG_PROB_FLOOR = np.log(1e-12)


class NumericError(ArithmeticError):
    """Non-finite values showed up during a forward pass or an update."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


@dataclass
class ModelParams:
    weights: list
    biases: list
    slope: float = 0.01

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def embed_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def head_width(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def sizes(self) -> list:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights[:-1]]

    def arrays(self) -> list:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(
            [W.copy() for W in self.weights], [b.copy() for b in self.biases], self.slope
        )

    def zeros_like(self) -> "ModelParams":
        return ModelParams(
            [np.zeros_like(W) for W in self.weights],
            [np.zeros_like(b) for b in self.biases],
            self.slope,
        )

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())


def init_params(sizes, head_width, seed=0, slope=0.01, extractor_bias=True) -> ModelParams:
    """Glorot-uniform weights.

    ``sizes`` lists the extractor widths ``[d_in, h_1, ..., d_p]``.  Extractor
    biases are uniform in +-1/sqrt(fan_in) unless ``extractor_bias`` is False;
    with zero biases the extractor is positively homogeneous and the
    normalized embedding would only see the direction of each input.  The
    head bias starts at zero.
    """
    if len(sizes) < 2:
        raise ValueError("extractor needs at least an input and an embedding size")
    rng = np.random.default_rng(seed)
    dims = list(sizes) + [head_width]
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        if extractor_bias and i < len(dims) - 2:
            bound = 1.0 / np.sqrt(fan_in)
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        else:
            biases.append(np.zeros(fan_out))
    return ModelParams(weights, biases, slope)


@dataclass
class ForwardTrace:
    params: ModelParams
    inputs: list = field(default_factory=list)  # input to each extractor layer
    pre: list = field(default_factory=list)  # pre-activation of each extractor layer
    raw_embedding: np.ndarray | None = None
    norms: np.ndarray | None = None
    embedding: np.ndarray | None = None
    head_width: int = 0


def _leaky(x, slope):
    return np.where(x > 0, x, slope * x)


def _check(a, layer):
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite activations at layer {layer}", layer)


def l2_normalize(V):
    """Row-wise L2 normalization; zero rows stay zero."""
    norms = np.sqrt((V**2).sum(axis=1))
    safe = np.where(norms > 0, norms, 1.0)
    return V / safe[:, None], norms


def _extract(params: ModelParams, X, trace=None):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise ValueError(f"expected input dim {params.input_dim}, got shape {X.shape}")
    h = X
    last = params.n_layers - 2
    for i in range(params.n_layers - 1):
        a = h @ params.weights[i] + params.biases[i]
        _check(a, i)
        if trace is not None:
            trace.inputs.append(h)
            trace.pre.append(a)
        h = a if i == last else _leaky(a, params.slope)
    return h


def embed(params: ModelParams, X) -> np.ndarray:
    """L2-normalized feature embedding of a batch."""
    raw = _extract(params, X)
    return l2_normalize(raw)[0]


def forward(params: ModelParams, X, head_width=None):
    """Scores from the first ``head_width`` head neurons, plus the backprop trace."""
    H = params.head_width
    if head_width is None:
        head_width = H
    if not 1 <= head_width <= H:
        raise ValueError(f"head_width {head_width} not in [1, {H}]")
    trace = ForwardTrace(params, head_width=head_width)
    raw = _extract(params, X, trace)
    emb, norms = l2_normalize(raw)
    trace.raw_embedding, trace.norms, trace.embedding = raw, norms, emb
    # full head then slice, so every width sees bit-identical columns
    scores = (emb @ params.weights[-1] + params.biases[-1])[:, :head_width]
    _check(scores, params.n_layers - 1)
    return scores, trace


def log_softmax(scores):
    shifted = scores - scores.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(scores):
    return np.exp(log_softmax(scores))


def cross_entropy_loss(scores, targets, weights=None):
    """Weighted mean cross-entropy and its gradient with respect to ``scores``.

    loss = (1/B) sum_i w_i * -log softmax(s_i)[t_i]
    """
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    B, width = scores.shape
    if targets.shape != (B,):
        raise ValueError(f"expected {B} targets, got shape {targets.shape}")
    if B and (targets.min() < 0 or targets.max() >= width):
        raise ValueError(f"targets must lie in [0, {width})")
    w = np.ones(B) if weights is None else np.asarray(weights, dtype=np.float64)
    if np.any(w < 0):
        raise ValueError("per-sample weights must be non-negative")
    if B == 0:
        return 0.0, np.zeros_like(scores)
    logp = log_softmax(scores)
    picked = np.maximum(logp[np.arange(B), targets], LOG_PROB_FLOOR)
    loss = float(-(w * picked).sum() / B)
    grad = np.exp(logp)
    grad[np.arange(B), targets] -= 1.0
    grad *= (w / B)[:, None]
    return loss, grad


def backward(trace: ForwardTrace, grad_scores) -> ModelParams:
    """Exact parameter gradients given dLoss/dScores for the traced batch."""
    params = trace.params
    grad_scores = np.asarray(grad_scores, dtype=np.float64)
    B = trace.embedding.shape[0]
    if grad_scores.shape != (B, trace.head_width):
        raise ValueError(
            f"grad shape {grad_scores.shape} does not match scores {(B, trace.head_width)}"
        )
    grads = params.zeros_like()
    k = trace.head_width
    grads.weights[-1][:, :k] = trace.embedding.T @ grad_scores
    grads.biases[-1][:k] = grad_scores.sum(axis=0)
    g_emb = grad_scores @ params.weights[-1][:, :k].T

    # d(v/|v|) = (g - u (u.g)) / |v|, zero for the zero-vector guard
    u, norms = trace.embedding, trace.norms
    safe = np.where(norms > 0, norms, 1.0)
    g = (g_emb - u * (u * g_emb).sum(axis=1, keepdims=True)) / safe[:, None]
    g[norms == 0] = 0.0

    last = params.n_layers - 2
    for i in range(last, -1, -1):
        if i != last:
            g = g * np.where(trace.pre[i] > 0, 1.0, params.slope)
        grads.weights[i] = trace.inputs[i].T @ g
        grads.biases[i] = g.sum(axis=0)
        if i > 0:
            g = g @ params.weights[i].T
    return grads


def predict(params: ModelParams, X, n_classes) -> np.ndarray:
    scores, _ = forward(params, X, n_classes)
    return scores.argmax(axis=1)


# ---------------------------------------------------------------------------
# optimization


@dataclass
class OptimizerState:
    buffers: ModelParams
    lr0: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 2e-4
    anneal_epochs: int = 210
    step: int = 0
    epoch: int = 0

    def __post_init__(self):
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")

    @classmethod
    def for_params(cls, params: ModelParams, **kw) -> "OptimizerState":
        return cls(params.zeros_like(), **kw)


def sgd_step(params: ModelParams, grads: ModelParams, state: OptimizerState, lr: float):
    """SGD with momentum and coupled weight decay, in place.

    buf <- momentum * buf + grad + wd * param;  param <- param - lr * buf
    """
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    for g in grads.arrays():
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient")
    for p, g, buf in zip(params.arrays(), grads.arrays(), state.buffers.arrays()):
        buf *= state.momentum
        buf += g + state.weight_decay * p
        p -= lr * buf
    state.step += 1
    return params, state


def cosine_lr(epoch, lr0, anneal_epochs) -> float:
    """lr0 * (1 + cos(pi * epoch / T)) / 2, zero once ``epoch`` passes ``T``."""
    if epoch >= anneal_epochs:
        return 0.0
    return lr0 * 0.5 * (1.0 + np.cos(np.pi * epoch / anneal_epochs))


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: ModelParams, state: OptimizerState | None = None, meta=None):
    doc = {
        "version": CHECKPOINT_VERSION,
        "slope": params.slope,
        "layers": [
            {"shape": list(W.shape), "weight": W.ravel().tolist(), "bias": b.tolist()}
            for W, b in zip(params.weights, params.biases)
        ],
        "optimizer": None,
        "meta": meta or {},
    }
    if state is not None:
        doc["optimizer"] = {
            "lr0": state.lr0,
            "momentum": state.momentum,
            "weight_decay": state.weight_decay,
            "anneal_epochs": state.anneal_epochs,
            "step": state.step,
            "epoch": state.epoch,
            "buffers": [a.ravel().tolist() for a in state.buffers.arrays()],
        }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    """Returns ``(params, state_or_None, meta)``."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    weights, biases = [], []
    for layer in doc["layers"]:
        weights.append(np.array(layer["weight"], dtype=np.float64).reshape(layer["shape"]))
        biases.append(np.array(layer["bias"], dtype=np.float64))
    params = ModelParams(weights, biases, doc["slope"])
    state = None
    opt = doc.get("optimizer")
    if opt is not None:
        bufs = params.zeros_like()
        for a, flat in zip(bufs.arrays(), opt["buffers"]):
            a[...] = np.array(flat).reshape(a.shape)
        state = OptimizerState(
            bufs, opt["lr0"], opt["momentum"], opt["weight_decay"],
            opt["anneal_epochs"], opt["step"], opt["epoch"],
        )
    return params, state, doc.get("meta", {})
