"""Margin-based mislabel detection and dataset filtering for text classification."""

__version__ = "0.1.0"

from .corpus import (
    Dataset,
    DatasetError,
    LabeledSample,
    LabelSpace,
    load_dataset,
    save_dataset,
)
from .dynamics import (
    AumRecord,
    DataMapRecord,
    DynamicsError,
    DynamicsTable,
    compute_aum,
    compute_datamap,
    ingest_dynamics,
    margin,
    write_dynamics,
)
from .noise import (
    ClusterSpec,
    NoiseMask,
    NoiseReport,
    dominant_class_report,
    generate_clustered_dataset,
    generate_separable_dataset,
    inject_noise,
    score_noise_identification,
)
from .pipeline import (
    ExperimentConfig,
    ExperimentResult,
    FilterAction,
    derive_seed,
    flip,
    load_experiment_config,
    percentile_sweep,
    run_experiment,
    run_two_run_scheme,
    sieve,
)
from .thresholds import (
    ThresholdResult,
    ThresholdRunPlan,
    build_threshold_run,
    compute_threshold,
    flag_mislabelled,
    governing_records,
    two_run_verdicts,
)
from .trainer import (
    FeatureVector,
    LinearModel,
    TrainConfig,
    TrainingDiverged,
    evaluate,
    featurize,
    gradient_check,
    init_model,
    train,
)
