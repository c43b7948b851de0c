"""fedsel: a deterministic federated-learning simulator built around
diversity-driven (power-norm cosine) client selection."""

__version__ = "0.1.0"

from .data import (
    ClientDataset,
    LabeledDataset,
    PartitionSpec,
    generate_synthetic,
    load_csv,
    partition_dirichlet,
    partition_shards,
    save_csv,
)
from .errors import (
    ComparabilityError,
    ConfigError,
    DegenerateGradientError,
    DegenerateStatisticError,
    DimensionError,
    EmptyDatasetError,
    FedselError,
    LayoutError,
    NumericDivergenceError,
    NumericError,
    ParseError,
    SchemaError,
    ShapeError,
)
from .federation import (
    DataSpec,
    EtaSchedule,
    ExperimentConfig,
    ExperimentResult,
    ModelSpec,
    PolicySpec,
    RoundMetrics,
    global_loss,
    init_state,
    run_experiment,
    run_round,
)
from .model import (
    Architecture,
    Batch,
    ModelParameters,
    accuracy,
    apply_update,
    gradient,
    init_params,
    loss,
)
from .numerics import (
    GradientVector,
    covariance,
    kurtosis,
    lp_norm,
    multilayer_power_cosine,
    pearson,
    power_cosine,
    power_inner,
)
from .selection import (
    AoUQueue,
    SelectionDecision,
    select_loss_softmax,
    select_oracle,
    select_pncs,
    select_random,
    select_top_loss,
    subset_score,
)
from .sketch import GradientSummary, SketchConfig, estimate_cos_p, sketch
from .study import (
    FEATURE_NAMES,
    PairSample,
    StudyConfig,
    StudyReport,
    build_pair_dataset,
    extract_features,
    fit_logistic,
    relative_loss_table,
    run_study,
    scale_labels,
)

__all__ = [name for name in dir() if not name.startswith("_")]
