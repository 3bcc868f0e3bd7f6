"""Cyclic training loop: supervised warm-up, then per epoch
k-means pseudo-labels, graph pseudo-labels, one clustering pass, one
weighted semi-supervised pass."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import model as nn
from .dataset import Pool, SplitSpec
from .kmeans import kmeans
from .propagation import graph_pseudo_labels

log = __import__("logging").getLogger(__name__)


@dataclass
class TrainConfig:
    K: int = 10
    epochs: int = 30
    init_epochs: int = 10
    batch_size: int = 100
    labeled_batch: int = 50
    unlabeled_batch: int = 50
    lr0: float = 0.05
    anneal_epochs: int | None = None  # defaults to epochs
    momentum: float = 0.9
    weight_decay: float = 2e-4
    hidden: tuple = (128,)
    embed_dim: int = 32
    slope: float = 0.01
    k_nn: int = 10
    gamma: float = 3.0
    alpha: float = 0.99
    kmeans_iters: int = 100
    cg_tol: float = 1e-10
    cg_max_iters: int = 1000
    warm_start_kmeans: bool = True
    purely_graphical: bool = False
    balance_class_weights: bool = True
    model_seed: int = 0
    shuffle_seed: int = 0
    kmeans_seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.anneal_epochs is None:
            self.anneal_epochs = self.epochs
        problems = []
        if self.epochs < 1:
            problems.append(("epochs", "must be >= 1"))
        if self.init_epochs < 0:
            problems.append(("init_epochs", "must be >= 0"))
        if self.K < 1:
            problems.append(("K", "must be >= 1"))
        if self.labeled_batch < 1:
            problems.append(("labeled_batch", "must be >= 1"))
        if self.unlabeled_batch < 1:
            problems.append(("unlabeled_batch", "must be >= 1"))
        if self.batch_size != self.labeled_batch + self.unlabeled_batch:
            problems.append(("batch_size", "must equal labeled_batch + unlabeled_batch"))
        if self.anneal_epochs < self.epochs:
            problems.append(("anneal_epochs", "must be >= epochs"))
        if not 0 < self.alpha < 1:
            problems.append(("alpha", "must lie in (0, 1)"))
        if not 0 <= self.momentum < 1:
            problems.append(("momentum", "must lie in [0, 1)"))
        if problems:
            raise ConfigError(problems)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError([(k, "unknown key") for k in unknown])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = problems
        super().__init__("; ".join(f"{k}: {msg}" for k, msg in problems))


@dataclass
class EpochReport:
    epoch: int
    lr: float
    loss_cluster: float
    loss_weighted: float
    train_error: float
    test_error: float | None
    inertia: float | None
    lp_residual: float
    pseudo_label_error: float
    cluster_steps: int
    ssl_steps: int
    wall_time: float = field(default=0.0, compare=False)

    def to_json(self, with_time=True) -> dict:
        d = asdict(self)
        if not with_time:
            d.pop("wall_time")
        return d


@dataclass
class ExperimentResult:
    mean_error: float
    std_error: float
    errors: list
    reports: list = field(default_factory=list)


def _emit(hook, event, **info):
    if hook is not None:
        hook(event, **info)


def head_width(config: TrainConfig, n_classes: int) -> int:
    return max(config.K, n_classes)


def new_model(config: TrainConfig, d_in: int, n_classes: int):
    params = nn.init_params(
        [d_in, *config.hidden, config.embed_dim],
        head_width(config, n_classes),
        seed=config.model_seed,
        slope=config.slope,
    )
    state = nn.OptimizerState.for_params(
        params,
        lr0=config.lr0,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
        anneal_epochs=config.anneal_epochs,
    )
    return params, state


def _step(params, state, X, targets, width, weights, lr):
    scores, trace = nn.forward(params, X, width)
    loss, g = nn.cross_entropy_loss(scores, targets, weights)
    grads = nn.backward(trace, g)
    nn.sgd_step(params, grads, state, lr)
    return loss


def supervised_init(params, state, pool: Pool, config: TrainConfig, hook=None):
    """``init_epochs`` shuffled passes of plain cross-entropy on labeled data."""
    split = pool.split
    lab = split.labeled_ids
    C = pool.class_count
    rng = np.random.default_rng([config.shuffle_seed, 0])
    b = min(config.batch_size, len(lab))
    steps = len(lab) // b
    for _ in range(config.init_epochs):
        order = rng.permutation(lab)
        for s in range(steps):
            ids = order[s * b : (s + 1) * b]
            _step(params, state, pool.features[ids], pool.targets[ids], C, None, config.lr0)
            _emit(hook, "init_step", ids=ids)
    return params


def evaluate(params, pool: Pool, ids=None) -> float:
    """Error rate of the class head on ``ids`` (default: all samples)."""
    if ids is None:
        ids = np.arange(pool.n)
    ids = np.asarray(ids)
    if len(ids) == 0:
        return 0.0
    pred = nn.predict(params, pool.features[ids], pool.class_count)
    return float(np.mean(pred != pool.targets[ids]))


def compute_pseudo_labels(params, pool: Pool, config: TrainConfig, epoch, prev_centroids=None,
                          hook=None):
    """Embeds every sample and returns ``(cluster_result_or_None, propagation_result)``."""
    V = nn.embed(params, pool.features)
    clusters = None
    if not config.purely_graphical:
        init = prev_centroids if config.warm_start_kmeans else None
        clusters = kmeans(
            V, config.K, config.kmeans_iters, seed=[config.kmeans_seed, epoch], init=init
        )
        _emit(hook, "kmeans", result=clusters)
    lp, _ = graph_pseudo_labels(
        V, pool.labels, pool.class_count, config.k_nn, config.gamma, config.alpha,
        config.cg_tol, config.cg_max_iters,
    )
    _emit(hook, "propagate", result=lp)
    return clusters, lp


def run_epoch(params, state, pool: Pool, config: TrainConfig, epoch, test_pool=None,
              hook=None, prev_centroids=None):
    """One cyclic epoch.  Returns ``(report, cluster_result)``."""
    t0 = time.perf_counter()
    split = pool.split
    lab, unl = split.labeled_ids, split.unlabeled_ids
    n, C = pool.n, pool.class_count
    X = pool.features
    rng = np.random.default_rng([config.shuffle_seed, epoch + 1])
    lr = nn.cosine_lr(epoch, config.lr0, config.anneal_epochs)
    state.epoch = epoch

    clusters, lp = compute_pseudo_labels(params, pool, config, epoch, prev_centroids, hook)
    yhat, omega, zeta = lp.pseudo_labels, lp.entropy_weights, lp.class_weights
    if config.balance_class_weights:
        # constant rescale so a perfectly balanced pool has unit class weights
        zeta = zeta * (n / C)

    cluster_losses = []
    cluster_steps = 0
    if clusters is not None:
        b = config.batch_size
        order = rng.permutation(n)
        for s in range(n // b):
            ids = order[s * b : (s + 1) * b]
            loss = _step(params, state, X[ids], clusters.assignments[ids], config.K, None, lr)
            cluster_losses.append(loss)
            cluster_steps += 1
            _emit(hook, "cluster_step", ids=ids, lr=lr)

    bl, bu = config.labeled_batch, config.unlabeled_batch
    steps = len(unl) // bu
    ssl_losses = []
    if steps:
        u_order = rng.permutation(unl)
        if len(lab) < bl * steps:
            l_draw = rng.choice(lab, size=bl * steps, replace=True)
        else:
            l_draw = rng.permutation(lab)[: bl * steps]
        B = bl + bu
        for s in range(steps):
            li = l_draw[s * bl : (s + 1) * bl]
            ui = u_order[s * bu : (s + 1) * bu]
            ids = np.concatenate([li, ui])
            targets = np.concatenate([pool.targets[li], yhat[ui]])
            # two sub-batch means folded into one mean over B samples
            w = np.concatenate([zeta[pool.targets[li]] * (B / bl), zeta[yhat[ui]] * omega[ui] * (B / bu)])
            loss = _step(params, state, X[ids], targets, C, w, lr)
            ssl_losses.append(loss)
            _emit(hook, "ssl_step", labeled_ids=li, unlabeled_ids=ui, weights=w, lr=lr)

    report = EpochReport(
        epoch=epoch,
        lr=float(lr),
        loss_cluster=float(np.mean(cluster_losses)) if cluster_losses else 0.0,
        loss_weighted=float(np.mean(ssl_losses)) if ssl_losses else 0.0,
        train_error=evaluate(params, pool, unl),
        test_error=evaluate(params, test_pool) if test_pool is not None else None,
        inertia=clusters.inertia if clusters is not None else None,
        lp_residual=lp.residual,
        pseudo_label_error=float(np.mean(yhat[unl] != pool.targets[unl])) if len(unl) else 0.0,
        cluster_steps=cluster_steps,
        ssl_steps=len(ssl_losses),
        wall_time=time.perf_counter() - t0,
    )
    for v in (report.loss_cluster, report.loss_weighted):
        if not np.isfinite(v):
            raise nn.NumericError(f"non-finite loss in epoch {epoch}")
    return report, clusters


def train(pool: Pool, config: TrainConfig, test_pool=None, hook=None, on_epoch=None):
    """Full run on a split pool.  Returns ``(params, state, reports)``."""
    if pool.split is None:
        raise ValueError("pool has no labeled/unlabeled split")
    params, state = new_model(config, pool.dim, pool.class_count)
    supervised_init(params, state, pool, config, hook)
    reports = []
    centroids = None
    for epoch in range(config.epochs):
        try:
            report, clusters = run_epoch(
                params, state, pool, config, epoch, test_pool, hook, centroids
            )
        except nn.NumericError as exc:
            exc.epoch = epoch
            raise
        if clusters is not None:
            centroids = clusters.centroids
        reports.append(report)
        if on_epoch is not None:
            on_epoch(report)
        log.debug("epoch %d: unlabeled error %.4f", epoch, report.train_error)
    return params, state, reports


def summarize(errors):
    """Mean and sample standard deviation (0 for a single run)."""
    errors = np.asarray(errors, dtype=np.float64)
    mean = float(errors.mean())
    std = float(errors.std(ddof=1)) if len(errors) > 1 else 0.0
    return mean, std


def fit(pool: Pool, config: TrainConfig, mode="cyclecluster", test_pool=None, hook=None,
        on_epoch=None):
    """Train one split in the given ``mode``: ``"cyclecluster"``,
    ``"purely_graphical"`` (clustering pass skipped) or ``"supervised"``
    (warm-up only).  Returns ``(params, state, reports)``."""
    if mode == "purely_graphical" and not config.purely_graphical:
        config = TrainConfig.from_dict({**config.to_dict(), "purely_graphical": True})
    elif mode == "supervised":
        params, state = new_model(config, pool.dim, pool.class_count)
        supervised_init(params, state, pool, config, hook)
        return params, state, []
    elif mode not in ("cyclecluster", "purely_graphical"):
        raise ValueError(f"unknown mode {mode!r}")
    return train(pool, config, test_pool, hook, on_epoch)


def run_experiment(config: TrainConfig, pool: Pool, splits, test_pool=None, mode="cyclecluster",
                   hook=None) -> ExperimentResult:
    """Independent training per split; final error is measured on ``test_pool``
    when given, otherwise on the split's unlabeled samples."""
    splits = list(splits)
    if not splits:
        raise ValueError("need at least one split")
    errors, reports = [], []
    for split in splits:
        p = pool.with_split(split)
        params, _, run_reports = fit(p, config, mode, test_pool, hook)
        if test_pool is not None:
            errors.append(evaluate(params, test_pool))
        else:
            errors.append(evaluate(params, p, split.unlabeled_ids))
        reports.append(run_reports)
    mean, std = summarize(errors)
    return ExperimentResult(mean, std, errors, reports)
