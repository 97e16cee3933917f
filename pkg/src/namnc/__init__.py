"""Neural additive nowcasting: predict the next step of K series jointly,
with every prediction decomposing exactly into per-input-point contributions.
"""

from .data import (
    DataError,
    FoldSpec,
    NormStats,
    TimeSeriesDataset,
    Windows,
    WindowSample,
    generate_synthetic,
    load_csv,
    make_windows,
    save_csv,
    standardize,
    ts_kfold,
)
from .explain import (
    ImportanceGrid,
    SweepResult,
    export_explanations,
    importance,
    sweep,
)
from .model import (
    ContributionTensor,
    FeatureNet,
    NamNcModel,
    count_params,
    feature_net_forward,
    init_model,
    load_checkpoint,
    save_checkpoint,
)
from .numeric import (
    AdamOptimizer,
    AdamState,
    adam_step,
    dropout_mask,
    finite_diff_grad,
    finite_diff_grads,
    leaky_relu,
    rng_stream,
    spawn_seeds,
)
from .training import (
    CvResult,
    MetricsReport,
    ModelConfig,
    RepetitionRecord,
    RunRecord,
    TrainConfig,
    TrainingDiverged,
    compute_metrics,
    evaluate,
    fit_dataset,
    persistence_baseline,
    run_cv,
    run_repetitions,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AdamOptimizer",
    "AdamState",
    "ContributionTensor",
    "CvResult",
    "DataError",
    "FeatureNet",
    "FoldSpec",
    "ImportanceGrid",
    "MetricsReport",
    "ModelConfig",
    "NamNcModel",
    "NormStats",
    "RepetitionRecord",
    "RunRecord",
    "SweepResult",
    "TimeSeriesDataset",
    "TrainConfig",
    "TrainingDiverged",
    "WindowSample",
    "Windows",
    "adam_step",
    "compute_metrics",
    "count_params",
    "dropout_mask",
    "evaluate",
    "export_explanations",
    "feature_net_forward",
    "finite_diff_grad",
    "finite_diff_grads",
    "fit_dataset",
    "generate_synthetic",
    "importance",
    "init_model",
    "leaky_relu",
    "load_checkpoint",
    "load_csv",
    "make_windows",
    "persistence_baseline",
    "rng_stream",
    "run_cv",
    "run_repetitions",
    "save_checkpoint",
    "save_csv",
    "spawn_seeds",
    "standardize",
    "sweep",
    "train",
    "ts_kfold",
]
