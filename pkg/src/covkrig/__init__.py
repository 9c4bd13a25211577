"""Stochastic kriging over a covariate space: per-design GP metamodels,
prediction-error measures (maximal IMSE, IPFS), convergence-rate checks,
and simulation-budget allocation."""

__version__ = "0.1.0"

from .errors import (
    ConfigurationError,
    CovkrigError,
    FitError,
    IllConditionedError,
    InsufficientReplicationsError,
    NoConvergenceError,
    NumericError,
    RegressorError,
    UnsupportedProblemError,
)
from .kernels import KERNEL_FAMILIES, GramMatrix, KernelSpec, cross_cov, gram, kernel_eval
from .measures import MeasureReport, apfs, imse_estimate, ipfs_estimate, measure_report
from .model import (
    FittedSK,
    MsePair,
    RegressorSpec,
    build_sk,
    finite_rank_mse,
    finite_rank_predict,
    fit,
    mse_opt,
    mse_opt_batch,
    predict,
    predict_batch,
    profile_loglik,
)
from .noise import NoiseEstimate, estimate_noise, known_noise, sample_variances, smooth_variances
from .problems import OptimalDesign, ProblemSpec, dejong, griewank, mm1, optimal_design, sample, true_mean, true_means
from .procedures import (
    ConvergenceRow,
    ConvergenceTable,
    ExperimentConfig,
    adaptive_mse_step,
    predict_m_for_target,
    run_adaptive_experiment,
    run_predict_m_experiment,
    run_static_experiment,
)
from .rates import (
    RateParams,
    allocation_bound,
    b_factor,
    finite_rank_limit,
    fit_loglog_slope,
    rate_function,
    simplified_rate,
    solve_allocation,
)
from .sampling import (
    CovariateSpace,
    RngStream,
    SamplingDistribution,
    draw_covariates,
    draw_test_points,
)
from .spectrum import (
    EigenSequence,
    effective_dimension,
    finite_rank_eigenvalues,
    nystrom_eigenvalues,
    se_gaussian_eigenvalues,
)
