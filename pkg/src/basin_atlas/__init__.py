"""Loss-landscape connectivity analysis for sweeps of small seeded classifiers."""

from .params import (
    Checkpoint,
    CheckpointFormatError,
    ParamVector,
    ShapeManifest,
    convex_combine,
    euclidean_distance,
    free_vector,
    interpolate,
    load_checkpoint,
    save_checkpoint,
)
from .model import (
    Batch,
    ModelConfig,
    PartitionedParams,
    collapse_logits,
    forward,
    gradient,
    init_body,
    init_head,
    init_params,
    loss_acc,
)
from .tasks import (
    DatasetSplit,
    Example,
    TaskSpec,
    encode_batch,
    gen_forced_fixture,
    gen_split,
    overlap_oracle,
    positional_oracle,
)
from .training import (
    DivergenceError,
    RunRecord,
    TrainConfig,
    evaluate,
    finetune,
    lr_at,
    pretrain_body,
)
from .connectivity import (
    BasinCheckReport,
    LossCurve,
    auc,
    barrier_height,
    convexity_gap,
    epsilon_basin_check,
    epsilon_basin_check_fn,
    eval_linear_path,
    eval_path_fn,
)
from .geometry import (
    PlaneBasis,
    PlaneGrid,
    PolyChain,
    SharpnessConfig,
    epsilon_sharpness,
    eval_chain_path,
    fit_low_loss_curve,
    init_chain,
    plane_basis,
    plane_loss_surface,
    sharpness_ascent,
)
from .analysis import (
    ClusterReport,
    DistanceMatrix,
    DynamicsReport,
    StatsReport,
    cluster_stats,
    correlation_matrix,
    dynamics,
    jacobi_eigh,
    kmeans,
    least_squares_fit,
    pairwise_matrix,
    pearson,
    spectral_cluster,
)

__version__ = "0.1.0"
