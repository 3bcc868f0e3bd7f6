"""
Two moons with six labels
=========================

Trains the clustering + label-propagation cycle on two interleaved moons
with three labels per class, then compares it with the two baselines:
the supervised warm-up alone, and the cycle without its clustering pass.
"""
import numpy as np

from cyclecluster import TrainConfig, embed, fit, generate_two_moons, make_split, run_experiment

pool = generate_two_moons(1000, noise=0.1, seed=0)
split = make_split(pool, 6, seed=0)
print("labeled ids:", split.labeled_ids, "targets:", pool.targets[split.labeled_ids])

# K = 20 over-clusters two classes on purpose; the clustering head only has
# to carve the embedding into tight pieces, label propagation does the rest.
cfg = TrainConfig(K=20, epochs=40, lr0=0.1, batch_size=20, labeled_batch=10, unlabeled_batch=10)


# per-epoch log; one split is noisy, so read the trend loosely
def show(report):
    if report.epoch % 5 == 0 or report.epoch == cfg.epochs - 1:
        print(f"epoch {report.epoch:2d}  lr {report.lr:.4f}  inertia {report.inertia:8.3f}  "
              f"pseudo-label error {report.pseudo_label_error:.3f}  "
              f"unlabeled error {report.train_error:.3f}")


params, _, _ = fit(pool.with_split(split), cfg, on_epoch=show)

# a single split can go either way between the two graph-based runs;
# compare on five splits instead
splits = [make_split(pool, 6, seed=s) for s in range(5)]
for mode in ("supervised", "purely_graphical", "cyclecluster"):
    res = run_experiment(cfg, pool, splits, mode=mode)
    print(f"{mode:>17}: unlabeled error {res.mean_error:.4f} +- {res.std_error:.4f}")

# the embedding is on the unit sphere; class means end up far apart
V = embed(params, pool.features)
m0, m1 = (V[pool.targets == c].mean(0) for c in (0, 1))
print("cosine between class means:", float(m0 @ m1 / np.linalg.norm(m0) / np.linalg.norm(m1)))
