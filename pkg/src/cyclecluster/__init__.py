"""Semi-supervised classification by cyclic clustering regularisation and
graph pseudo-labels."""
from .dataset import (
    DataFormatError,
    Pool,
    SplitSpec,
    generate_blobs,
    generate_two_moons,
    load_csv,
    load_idx_images,
    make_split,
    save_csv,
    save_idx_images,
)
from .kmeans import ClusterResult, assign, kmeans, seed_centroids
from .model import (
    ModelParams,
    NumericError,
    OptimizerState,
    backward,
    cosine_lr,
    cross_entropy_loss,
    embed,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
    sgd_step,
)
from .propagation import (
    AffinityGraph,
    PropagationResult,
    build_graph,
    class_weights,
    entropy_weights,
    extract_pseudo_labels,
    graph_pseudo_labels,
    label_seed,
    mu_from_alpha,
    propagate,
    q_gradient,
)
from .trainer import (
    EpochReport,
    ExperimentResult,
    TrainConfig,
    evaluate,
    fit,
    run_epoch,
    run_experiment,
    supervised_init,
    train,
)

__version__ = "0.1.0"
