"""
Over-clustering sweep
=====================

Three Gaussian blobs, nine labels, and the cluster count K swept from the
true class count up to ten times it.  The purely graphical run (no
clustering pass) is the reference line.
"""
from cyclecluster import TrainConfig, generate_blobs, make_split, run_experiment

pool = generate_blobs(600, 3, 3, separation=3.0, seed=0)
splits = [make_split(pool, 9, seed=s) for s in range(5)]
base = dict(epochs=40, lr0=0.1, batch_size=20, labeled_batch=10, unlabeled_batch=10)

ref = run_experiment(TrainConfig(K=3, **base), pool, splits, mode="purely_graphical")
print(f"purely graphical  {ref.mean_error:.4f} +- {ref.std_error:.4f}")

for K in (3, 10, 30):
    res = run_experiment(TrainConfig(K=K, **base), pool, splits)
    print(f"K = {K:<3}           {res.mean_error:.4f} +- {res.std_error:.4f}")

# same grid from the shell:
#   python -m cyclecluster sweep --config cfg.toml --K 3,10,30 --purely-graphical
