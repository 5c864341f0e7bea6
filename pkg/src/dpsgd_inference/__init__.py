"""Differentially private SGD with valid statistical inference.

The package fits mean/linear/logistic models by noisy averaged SGD under a
chosen privacy framework and builds confidence intervals two ways: a private
plug-in covariance estimate, and self-normalization by the iterate partial
sums (no covariance release needed). A Monte Carlo harness reproduces the
method's coverage, interval-length, and variance-decomposition behavior.
"""

from .errors import (
    CalibrationError,
    ConfigError,
    DataError,
    DimensionError,
    DivergenceError,
    DpsgdError,
    EmptyFileError,
    MissingColumnError,
    NonNumericError,
    SingularMatrixError,
)
from .inference import (
    ConfidenceInterval,
    CovarianceEstimates,
    PivotTable,
    generate_pivot_table,
    load_default_pivot_table,
    oracle_ci,
    pivot_critical_value,
    plugin_ci,
    plugin_ci_corrected,
    plugin_covariance,
    random_scaling_ci,
    random_scaling_ci_corrected,
)
from .models import (
    CsvSchema,
    Dataset,
    DomainBounds,
    LossModel,
    ModelKind,
    Record,
    SensitivityBounds,
    SynthSpec,
    generate_synthetic,
    gradient,
    hessian_contrib,
    load_csv,
    score_outer,
    sensitivity_bounds,
)
from .optimizer import (
    GdConfig,
    OptimConfig,
    RunResult,
    ScalingAccumulators,
    clip_gradient,
    dpgd_run,
    dpsgd_run,
    finalize_scaling,
    gd_noise_sd,
)
from .privacy import (
    BudgetReport,
    NoiseScales,
    PrivacySpec,
    budget_report,
    calibrate_matrix_noise,
    calibrate_sigma1,
    gdp_mu_from_sigma,
    gdp_sigma_from_mu,
    perturb_symmetric,
    split_budget,
)
from .sampling import RngState, SamplingScheme, SchemeKind, draw_batch, gaussian, split

__version__ = "0.1.0"
