"""Simulation and verification lab for poisoning backdoor attacks on
nonparametric learners."""

from ._version import __version__
from .diagnostics import degenerate_directions, relative_change
from .distributions import (
    Dataset,
    GaussianClassPair,
    benchmark_model,
    class_density,
    clean_regression_fn,
    eigen_directions,
    min_density_g,
    sample_clean,
    tail_h,
)
from .exceptions import (
    BackdoorLabError,
    ConfigError,
    DegenerateModelError,
    InvalidCovarianceError,
    OffSupportError,
    PreconditionError,
)
from .generative import (
    ConditionalTable,
    GenerativeModelSpec,
    GenerativePairs,
    evaluate_generative_attack,
    fit_conditional_table,
    generative_loss,
    poison_generative,
)
from .harness import ExperimentConfig, run_bound_audit, run_figure4, run_sweep
from .learners import KernelSmoother, KNNProbability, classify, cv_bandwidth, predict_prob
from .poisoning import (
    PoisonedDataset,
    Trigger,
    make_trigger,
    poison_dataset,
    poisoned_regression_fn,
    sample_poisoned,
)
from .risk import LossSpec, RiskReport, estimate_risk, judge_success, replicate
from .theory import (
    bound_report,
    check_norm_condition,
    gaussian_g_lower_bound,
    lemma1_audit,
    magnitude_threshold,
    mills_bound,
    optimal_trigger,
    theorem1_upper,
    theorem2_lower,
)

__all__ = [name for name in dir() if not name.startswith("_")]
