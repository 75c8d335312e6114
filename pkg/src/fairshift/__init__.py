"""Fair robust log-loss classification under covariate shift.

Trains a probabilistic classifier on labeled source data so that, on an
unlabeled target sample related to the source by covariate shift, the
worst-case log loss is minimized subject to an equalized opportunity (or
demographic parity) constraint.  Ships the density-ratio pipeline, a
principal-component shift simulator, importance-weighted and
post-processing baselines, and an experiment harness with a CLI.
"""

__version__ = "0.1.0"

from .baselines import fit_hardt, hardt_postprocess, train_fair_lr, train_lr
from .core import (
    FairnessCriterion,
    DualParams,
    GroupMarginals,
    compute_q,
    compute_q_batch,
    estimate_group_marginals,
    expected_violation,
    fairness_weight,
    fairness_weight_vector,
    residual,
    solve_p,
    solve_p_batch,
)
from .data import (
    Dataset,
    FeatureMap,
    SchemaConfig,
    continuous_feature_names,
    feature_matrix,
    load_csv,
    phi,
    write_dataset_csv,
    zscore_normalize,
)
from .density import (
    DensityConfig,
    DensityInfo,
    PcaModel,
    build_density_info,
    default_epsilon,
    fit_pca,
    kde_density,
    normalize_densities,
    read_density_csv,
    write_density_csv,
)
from .errors import (
    ConvergenceWarningFlag,
    DataError,
    DegenerateGroupError,
    DivergenceError,
    DomainError,
    FairshiftError,
    NumericalError,
    SchemaError,
)
from .evaluation import (
    METHODS,
    AggregateRow,
    CellRecord,
    ExperimentConfig,
    ExperimentResult,
    MetricReport,
    aggregate_ci,
    evaluate,
    run_experiment,
    write_manifest,
)
from .models import (
    FairRobustModel,
    HardtMixing,
    HardtModel,
    LinearModel,
    Model,
    RbaModel,
    load_model,
    model_from_dict,
    model_to_dict,
    save_model,
)
from .shift import SealedLabels, ShiftConfig, ShiftSplit, biased_split
from .training import (
    FairRobustFit,
    MuSearchResult,
    TrainConfig,
    TrainState,
    fit_fair_robust_shift,
    search_mu,
    select_l2_strength,
    train_fair_robust,
    train_rba,
)

__all__ = [
    "__version__",
    "AggregateRow",
    "CellRecord",
    "ConvergenceWarningFlag",
    "DataError",
    "Dataset",
    "DegenerateGroupError",
    "DensityConfig",
    "DensityInfo",
    "DivergenceError",
    "DomainError",
    "DualParams",
    "ExperimentConfig",
    "ExperimentResult",
    "FairRobustFit",
    "FairRobustModel",
    "FairnessCriterion",
    "FairshiftError",
    "FeatureMap",
    "GroupMarginals",
    "HardtMixing",
    "HardtModel",
    "LinearModel",
    "METHODS",
    "MetricReport",
    "Model",
    "MuSearchResult",
    "NumericalError",
    "PcaModel",
    "RbaModel",
    "SchemaConfig",
    "SchemaError",
    "SealedLabels",
    "ShiftConfig",
    "ShiftSplit",
    "TrainConfig",
    "TrainState",
    "aggregate_ci",
    "biased_split",
    "build_density_info",
    "compute_q",
    "compute_q_batch",
    "continuous_feature_names",
    "default_epsilon",
    "estimate_group_marginals",
    "evaluate",
    "expected_violation",
    "fairness_weight",
    "fairness_weight_vector",
    "feature_matrix",
    "fit_hardt",
    "fit_fair_robust_shift",
    "fit_pca",
    "hardt_postprocess",
    "kde_density",
    "load_csv",
    "load_model",
    "model_from_dict",
    "model_to_dict",
    "normalize_densities",
    "phi",
    "read_density_csv",
    "residual",
    "run_experiment",
    "save_model",
    "search_mu",
    "select_l2_strength",
    "solve_p",
    "solve_p_batch",
    "train_fair_lr",
    "train_fair_robust",
    "train_lr",
    "train_rba",
    "write_dataset_csv",
    "write_density_csv",
    "write_manifest",
    "zscore_normalize",
]
