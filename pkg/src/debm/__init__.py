"""Estimate the ordering in which biomarkers turn abnormal from cross-sectional data.

The discriminative pipeline fits a constrained two-component Gaussian mixture
per biomarker, turns each subject's abnormality posteriors into an event
ordering, and aggregates those into a central ordering. A generative staged
baseline (marginal-likelihood ordering search) is included for comparison,
along with patient staging, a sigmoid-cascade simulator, and an experiment
harness.
"""

from .data import (
    LABELS,
    BiomarkerDataset,
    UntestableBiomarkerWarning,
    dataset_to_csv,
    load_dataset,
    save_dataset,
    significance_filter,
)
from .errors import DebmError, FitError, IngestionError, SchemaError
from .eval import (
    ExperimentResult,
    PositionalVariance,
    bootstrap_positional_variance,
    mann_whitney_auc,
    run_sweep,
    runtime_report,
    staging_auc_cv,
)
from .mixture import (
    BiomarkerMixture,
    FitBounds,
    GaussianParams,
    confidence_bounds,
    fit_all_biomarkers,
    fit_biomarker,
    initial_fit,
    posterior,
    posterior_matrix,
    refine_gmm,
)
from .models import (
    METHODS,
    DebmFit,
    EventLikelihoodMatrices,
    debm_fit,
    ebm_fit,
    ebm_log_likelihood,
    expected_stage,
    fit_method,
    fit_report,
    likelihood_matrices,
    stage_dataset,
    stage_subject,
    stage_with_mixtures,
)
from .ordering import (
    borda_ordering,
    central_ordering,
    consensus_objective,
    kendall_tau,
    normalized_kendall_tau,
    prob_kendall_tau,
    subject_ordering,
)
from .sim import DEFAULT_COUNTS, SimConfig, SimResult, default_config, simulate

__version__ = "0.1.0"

__all__ = [
    "LABELS",
    "METHODS",
    "DEFAULT_COUNTS",
    "BiomarkerDataset",
    "BiomarkerMixture",
    "DebmError",
    "DebmFit",
    "EventLikelihoodMatrices",
    "ExperimentResult",
    "FitBounds",
    "FitError",
    "GaussianParams",
    "IngestionError",
    "PositionalVariance",
    "SchemaError",
    "SimConfig",
    "SimResult",
    "UntestableBiomarkerWarning",
    "bootstrap_positional_variance",
    "borda_ordering",
    "central_ordering",
    "confidence_bounds",
    "consensus_objective",
    "dataset_to_csv",
    "debm_fit",
    "default_config",
    "ebm_fit",
    "ebm_log_likelihood",
    "expected_stage",
    "fit_all_biomarkers",
    "fit_biomarker",
    "fit_method",
    "fit_report",
    "initial_fit",
    "kendall_tau",
    "likelihood_matrices",
    "load_dataset",
    "mann_whitney_auc",
    "normalized_kendall_tau",
    "posterior",
    "posterior_matrix",
    "prob_kendall_tau",
    "refine_gmm",
    "run_sweep",
    "runtime_report",
    "save_dataset",
    "significance_filter",
    "simulate",
    "stage_dataset",
    "stage_subject",
    "stage_with_mixtures",
    "staging_auc_cv",
    "subject_ordering",
    "__version__",
]
