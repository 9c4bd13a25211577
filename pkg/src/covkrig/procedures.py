"""Experiment procedures: static convergence runs, the greedy adaptive
design loop, and target-precision prediction of the sample size.

A static run draws, for every macro replication and every m in the
schedule, a fresh covariate sample, simulates n replications per (design,
point) pair, fits one SK model per design, and estimates the measures on a
fresh test sample.  The adaptive loop instead starts from the center of the
covariate space and repeatedly adds the candidate point with the largest
cross-design predictive MSE.  Log-log regression of the maximal IMSE on m
extrapolates the sample size needed for a target precision.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, FitError, IllConditionedError, NoConvergenceError
from .kernels import FINITE_RANK_LINEAR, KernelSpec
from .measures import default_m_prime, measure_report
from .model import DEFAULT_SEARCH_BUDGET, RegressorSpec, fit, mse_opt_batch
from .problems import ProblemSpec, sample, true_means
from .sampling import RngStream, SamplingDistribution, draw_covariates, draw_test_points

# stream purposes; cell and step indices are folded into the purpose slot
PURPOSE_TRAIN = 1
PURPOSE_TEST = 2
PURPOSE_SIM_BASE = 100  # + cell index
PURPOSE_POOL_BASE = 10_000  # + adaptive step
PURPOSE_ADAPT_SIM_BASE = 20_000  # + adaptive step
PURPOSE_ADAPT_TEST = 3
PURPOSE_SUBSAMPLE = 4

STATIC = "static"
ADAPTIVE = "adaptive"

_WARM_BUDGET = 64
_WARM_MIN_M = 20  # fits on smaller designs are too unstable to anchor a warm start


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one convergence experiment needs, independent of outputs."""

    problem: ProblemSpec
    dist: SamplingDistribution
    m_schedule: tuple
    n: int
    delta0: float
    kernel_families: tuple
    regressors: str = "constant"
    macro_reps: int = 1
    master_seed: int = 0
    m_prime: int = 0  # 0 = pick by dimension
    noise_degree: int | None = None
    noise_log: bool = False
    search_budget: int = DEFAULT_SEARCH_BUDGET
    kernel_spec: KernelSpec | None = None  # fixed hyperparameters (finite-rank)

    def __post_init__(self):
        sched = tuple(int(m) for m in self.m_schedule)
        if any(b <= a for a, b in zip(sched, sched[1:])):
            raise ConfigurationError("m_schedule must be strictly increasing")
        if not sched:
            raise ConfigurationError("m_schedule must be non-empty")
        object.__setattr__(self, "m_schedule", sched)
        fams = tuple(self.kernel_families)
        if not fams:
            raise ConfigurationError("at least one kernel family is required")
        object.__setattr__(self, "kernel_families", fams)
        if self.macro_reps < 1:
            raise ConfigurationError("macro_reps must be >= 1")
        if self.n < 1:
            raise ConfigurationError("n must be >= 1")

    def resolved_m_prime(self):
        return self.m_prime if self.m_prime > 0 else default_m_prime(self.problem.dim)


@dataclass(frozen=True)
class ConvergenceRow:
    problem: str
    kernel: str
    dist: str
    strategy: str
    m: int
    n: int
    macro_reps: int
    mean_max_imse: float
    se_max_imse: float
    mean_ipfs_ind: float
    se_ipfs_ind: float
    mean_ipfs_apfs: float
    se_ipfs_apfs: float
    failures: int = 0


@dataclass
class ConvergenceTable:
    rows: list
    meta: dict = field(default_factory=dict)

    def pairs(self, kernel=None, strategy=None, column="mean_max_imse"):
        """(m, value) pairs for one kernel/strategy, for slope fitting."""
        rows = [
            r
            for r in self.rows
            if (kernel is None or r.kernel == kernel)
            and (strategy is None or r.strategy == strategy)
        ]
        kernels = {r.kernel for r in rows}
        strategies = {r.strategy for r in rows}
        if len(kernels) > 1 or len(strategies) > 1:
            raise ConfigurationError("pairs() needs a unique (kernel, strategy); pass filters")
        return [(r.m, getattr(r, column)) for r in sorted(rows, key=lambda r: r.m)]


def _simulate_design_tables(cfg, X, rep, cell, n):
    """Replication tables for every design at the points X; (k, m, n) array."""
    m = X.shape[0]
    k = cfg.problem.k
    out = np.empty((k, m, n))
    for i in range(k):
        for j in range(m):
            stream = RngStream(cfg.master_seed, (rep, PURPOSE_SIM_BASE + cell, i, j, 0))
            out[i, j] = sample(cfg.problem, i, X[j], n, stream)
    return out


def _fit_designs(cfg, family, X, tables, warm=None, budget=None):
    """One fitted model per design; FitError propagates to the caller."""
    models = []
    for i in range(cfg.problem.k):
        models.append(
            fit(
                X,
                tables[i],
                family,
                regressors=cfg.regressors,
                noise_degree=cfg.noise_degree,
                noise_log=cfg.noise_log,
                search_budget=budget or cfg.search_budget,
                warm_start=warm[i] if warm else None,
                kernel_spec=cfg.kernel_spec,
            )
        )
    return models


def _warm_params(models):
    return [
        (mod.kernel.tau2, mod.kernel.phi) if mod.kernel.stationary else None for mod in models
    ]


class _CellResult(NamedTuple):
    max_imse: float
    ipfs_ind: float
    ipfs_apfs: float
    failed: bool


def _static_macro_rep(cfg: ExperimentConfig, rep: int):
    """All (kernel, m) cells of one macro replication; simulations are shared
    across kernel families within a cell, and hyperparameter searches after
    the first m checkpoint warm-start from the previous optimum with a
    reduced budget."""
    m_prime = cfg.resolved_m_prime()
    results = {}
    warm = {family: None for family in cfg.kernel_families}
    for cell, m in enumerate(cfg.m_schedule):
        X = draw_covariates(cfg.dist, m, RngStream(cfg.master_seed, (rep, PURPOSE_TRAIN, 0, cell, 0)))
        Xtest = draw_test_points(
            cfg.dist, m_prime, RngStream(cfg.master_seed, (rep, PURPOSE_TEST, 0, cell, 0))
        )
        tables = _simulate_design_tables(cfg, X, rep, cell, cfg.n)
        truth = true_means(cfg.problem, Xtest)
        for family in cfg.kernel_families:
            try:
                models = _fit_designs(
                    cfg,
                    family,
                    X,
                    tables,
                    warm=warm[family],
                    budget=_WARM_BUDGET if warm[family] else None,
                )
                warm[family] = _warm_params(models) if m >= _WARM_MIN_M else None
                rep_report = measure_report(models, Xtest, cfg.delta0, true_means=truth)
                results[(family, m)] = _CellResult(
                    rep_report.max_imse, rep_report.ipfs_indicator, rep_report.ipfs_apfs, False
                )
            except (FitError, IllConditionedError):
                results[(family, m)] = _CellResult(math.nan, math.nan, math.nan, True)
    return results


def _mean_se(values):
    vals = np.asarray([v for v in values if not math.isnan(v)], dtype=float)
    if vals.size == 0:
        return math.nan, math.nan
    se = float(np.std(vals, ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    return float(np.mean(vals)), se


def _aggregate(cfg, per_rep, strategy):
    rows = []
    for family in cfg.kernel_families:
        for m in cfg.m_schedule:
            cells = [per_rep[rep][(family, m)] for rep in range(cfg.macro_reps)]
            mean_imse, se_imse = _mean_se([c.max_imse for c in cells])
            mean_ind, se_ind = _mean_se([c.ipfs_ind for c in cells])
            mean_apfs, se_apfs = _mean_se([c.ipfs_apfs for c in cells])
            rows.append(
                ConvergenceRow(
                    problem=cfg.problem.kind,
                    kernel=family,
                    dist=cfg.dist.kind,
                    strategy=strategy,
                    m=m,
                    n=cfg.n,
                    macro_reps=cfg.macro_reps,
                    mean_max_imse=mean_imse,
                    se_max_imse=se_imse,
                    mean_ipfs_ind=mean_ind,
                    se_ipfs_ind=se_ind,
                    mean_ipfs_apfs=mean_apfs,
                    se_ipfs_apfs=se_apfs,
                    failures=sum(c.failed for c in cells),
                )
            )
    return rows


def run_static_experiment(cfg: ExperimentConfig, workers: int = 1) -> ConvergenceTable:
    """Fixed-distribution convergence experiment over the whole m schedule.

    Macro replications use disjoint stream paths, so results are identical
    whether they run serially or across worker processes.
    """
    reps = range(cfg.macro_reps)
    if workers > 1 and cfg.macro_reps > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_rep = list(pool.map(_static_macro_rep, [cfg] * cfg.macro_reps, reps))
    else:
        per_rep = [_static_macro_rep(cfg, rep) for rep in reps]
    rows = _aggregate(cfg, per_rep, STATIC)
    meta = {"strategy": STATIC, "m_prime": cfg.resolved_m_prime(), "master_seed": cfg.master_seed}
    return ConvergenceTable(rows=rows, meta=meta)


# ---------------------------------------------------------------------------
# Adaptive MSE procedure
# ---------------------------------------------------------------------------


def adaptive_mse_step(models, dist, pool_size: int, stream: RngStream, candidates=None):
    """Next covariate point: the candidate maximizing max_i MSE_i(x).

    Candidates default to pool_size fresh draws from the sampling
    distribution; an explicit candidate array overrides the pool.  The first
    maximizer in scan order wins ties.
    """
    if candidates is None:
        candidates = draw_covariates(dist, pool_size, stream)
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    crit = np.max(
        np.column_stack([mse_opt_batch(mod, candidates).total for mod in models]), axis=1
    )
    return candidates[int(np.argmax(crit))].copy()


def _default_hyperparams(family, X, means_all):
    # tiny designs cannot support the likelihood search; fall back to scale heuristics
    spread = float(np.var(means_all))
    tau2 = spread if spread > 0 else 1.0
    if X.shape[0] >= 2:
        from .model import _median_pairwise_distance

        phi = 1.0 / _median_pairwise_distance(X)
    else:
        phi = 1.0
    return KernelSpec(family=family, tau2=tau2, phi=phi)


def _fit_adaptive(cfg, family, X, tables, warm):
    """Refit all designs mid-trajectory; tiny designs and failed searches fall
    back to scale-heuristic hyperparameters so the loop can continue."""
    from .model import build_sk
    from .noise import estimate_noise

    models = []
    k = cfg.problem.k
    min_fit_m = 4
    for i in range(k):
        rows = tables[i]
        means = np.array([np.mean(r) for r in rows])
        regr = RegressorSpec(cfg.regressors)
        if cfg.kernel_spec is not None or family == FINITE_RANK_LINEAR:
            spec = cfg.kernel_spec
            models.append(build_sk(spec, regr, X, means, estimate_noise(rows, X, cfg.noise_degree, log_scale=cfg.noise_log)))
            continue
        if X.shape[0] < min_fit_m:
            spec = _default_hyperparams(family, X, np.concatenate(rows))
            models.append(build_sk(spec, regr, X, means, estimate_noise(rows, X, cfg.noise_degree, log_scale=cfg.noise_log)))
            continue
        try:
            models.append(
                fit(
                    X,
                    rows,
                    family,
                    regressors=cfg.regressors,
                    noise_degree=cfg.noise_degree,
                    noise_log=cfg.noise_log,
                    search_budget=_WARM_BUDGET if warm and warm[i] else cfg.search_budget,
                    warm_start=warm[i] if warm else None,
                )
            )
        except FitError:
            spec = _default_hyperparams(family, X, np.concatenate(rows))
            models.append(build_sk(spec, regr, X, means, estimate_noise(rows, X, cfg.noise_degree, log_scale=cfg.noise_log)))
    return models


def run_adaptive_experiment(
    cfg: ExperimentConfig, n0: int | None = None, pool_size: int = 512, workers: int = 1
) -> ConvergenceTable:
    """Greedy maximal-MSE design: seed at the space center, then iterate
    candidate selection, simulation of n0 replications per design, and refit.

    Measures are computed whenever the design size reaches a value in the
    schedule.  Needs a bounded covariate space (the center must exist).
    """
    if not cfg.dist.space.bounded:
        raise ConfigurationError("the adaptive procedure needs a bounded covariate space")
    if n0 is None:
        n0 = cfg.n
    reps = range(cfg.macro_reps)
    args = [(cfg, rep, n0, pool_size) for rep in reps]
    if workers > 1 and cfg.macro_reps > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_rep = list(pool.map(_adaptive_macro_rep_star, args))
    else:
        per_rep = [_adaptive_macro_rep_star(a) for a in args]
    rows = _aggregate(cfg, per_rep, ADAPTIVE)
    meta = {
        "strategy": ADAPTIVE,
        "n0": n0,
        "pool_size": pool_size,
        "m_prime": cfg.resolved_m_prime(),
        "master_seed": cfg.master_seed,
        "maximizer": f"pool of {pool_size} draws per step",
    }
    return ConvergenceTable(rows=rows, meta=meta)


def _adaptive_macro_rep_star(args):
    return _adaptive_macro_rep(*args)


def _adaptive_macro_rep(cfg: ExperimentConfig, rep: int, n0: int, pool_size: int):
    """Each kernel family runs its own trajectory: the selected points depend
    on that family's fitted models, so simulations cannot be shared."""
    results = {}
    for fam_idx, family in enumerate(cfg.kernel_families):
        results.update(_adaptive_trajectory(cfg, rep, family, fam_idx, n0, pool_size))
    return results


def _adaptive_trajectory(cfg, rep, family, fam_idx, n0, pool_size):
    k = cfg.problem.k
    m_final = cfg.m_schedule[-1]
    m_prime = cfg.resolved_m_prime()
    checkpoints = set(cfg.m_schedule)
    results = {}

    center = cfg.dist.space.center()
    X = center[None, :].copy()
    tables = [[_sample_adaptive(cfg, rep, 0, i, fam_idx, center, n0)] for i in range(k)]
    models = _fit_adaptive(cfg, family, X, tables, None)

    step = 0
    while True:
        m_now = X.shape[0]
        if m_now in checkpoints:
            Xtest = draw_test_points(
                cfg.dist, m_prime, RngStream(cfg.master_seed, (rep, PURPOSE_ADAPT_TEST, 0, m_now, 0))
            )
            truth = true_means(cfg.problem, Xtest)
            try:
                rp = measure_report(models, Xtest, cfg.delta0, true_means=truth)
                results[(family, m_now)] = _CellResult(
                    rp.max_imse, rp.ipfs_indicator, rp.ipfs_apfs, False
                )
            except (FitError, IllConditionedError):
                results[(family, m_now)] = _CellResult(math.nan, math.nan, math.nan, True)
        if m_now >= m_final:
            break
        step += 1
        x_next = adaptive_mse_step(
            models,
            cfg.dist,
            pool_size,
            RngStream(cfg.master_seed, (rep, PURPOSE_POOL_BASE + step, fam_idx, 0, 0)),
        )
        X = np.vstack([X, x_next[None, :]])
        for i in range(k):
            tables[i].append(_sample_adaptive(cfg, rep, step, i, fam_idx, x_next, n0))
        models = _fit_adaptive(cfg, family, X, tables, _warm_params(models))
    return results


def _sample_adaptive(cfg, rep, step, design, fam_idx, x, n0):
    stream = RngStream(cfg.master_seed, (rep, PURPOSE_ADAPT_SIM_BASE + step, design, fam_idx, 0))
    return sample(cfg.problem, design, x, n0, stream)


# ---------------------------------------------------------------------------
# Target-precision prediction of m
# ---------------------------------------------------------------------------


class PredictMResult(NamedTuple):
    m_hat: int
    slope: float
    intercept: float


def predict_m_for_target(imse_by_m, c0: float) -> PredictMResult:
    """Extrapolate the sample size whose maximal IMSE hits the target c0.

    Ordinary least squares of log(max IMSE) on log(m), then
    m_hat = ceil(exp((log c0 - intercept) / slope)) with a one-ulp-scale
    slack so that exact hits do not round up.  A nonnegative slope means the
    precision is unreachable by extrapolation.
    """
    pts = [(int(m), float(v)) for m, v in imse_by_m]
    if len(pts) < 3:
        raise ConfigurationError("need at least 3 (m, max_imse) points")
    if any(v <= 0 for _, v in pts):
        raise ConfigurationError("max_imse values must be positive")
    if c0 <= 0:
        raise ConfigurationError("c0 must be positive")
    logm = np.log([m for m, _ in pts])
    logv = np.log([v for _, v in pts])
    slope, intercept = np.polyfit(logm, logv, 1)
    if slope >= 0:
        raise NoConvergenceError(f"fitted log-log slope {slope:.4g} is nonnegative")
    m_hat = int(math.ceil(math.exp((math.log(c0) - intercept) / slope) - 1e-9))
    return PredictMResult(m_hat=m_hat, slope=float(slope), intercept=float(intercept))


DEFAULT_SUBSAMPLE_SCHEDULE = (10, 15, 23, 35, 53, 80)


def subsampled_imse_curve(
    cfg: ExperimentConfig,
    subsample_schedule=DEFAULT_SUBSAMPLE_SCHEDULE,
    resamples: int = 10,
    rep: int = 0,
):
    """Mean estimated maximal IMSE at each subsample size of one drawn design.

    Draws max(schedule) points once, simulates once, then refits on random
    subsets without replacement, averaging the measure over the resamples.
    Uses the first kernel family of the config.
    """
    schedule = tuple(int(s) for s in subsample_schedule)
    m_top = max(schedule)
    family = cfg.kernel_families[0]
    if cfg.noise_degree is None:
        # pin the smoothing basis across subsample sizes; the usual
        # small-m auto switch would put a jump into the fitted curve
        from .noise import SMALL_M_POOL_THRESHOLD

        degree = 0 if m_top < SMALL_M_POOL_THRESHOLD else 1
        cfg = replace(cfg, noise_degree=degree)
    X = draw_covariates(cfg.dist, m_top, RngStream(cfg.master_seed, (rep, PURPOSE_TRAIN, 0, 0, 0)))
    Xtest = draw_test_points(
        cfg.dist, cfg.resolved_m_prime(), RngStream(cfg.master_seed, (rep, PURPOSE_TEST, 0, 0, 0))
    )
    tables = _simulate_design_tables(cfg, X, rep, 0, cfg.n)
    truth = true_means(cfg.problem, Xtest)
    curve = []
    for si, s in enumerate(sorted(schedule)):
        draws = 1 if s == m_top else resamples
        vals = []
        for r in range(draws):
            rng = RngStream(cfg.master_seed, (rep, PURPOSE_SUBSAMPLE, si, r, 0)).generator()
            idx = np.sort(rng.choice(m_top, size=s, replace=False))
            models = _fit_designs(cfg, family, X[idx], tables[:, idx, :])
            rp = measure_report(models, Xtest, cfg.delta0, true_means=truth)
            vals.append(rp.max_imse)
        curve.append((s, float(np.mean(vals))))
    return curve


def run_predict_m_experiment(
    cfg: ExperimentConfig,
    c0: float,
    subsample_schedule=DEFAULT_SUBSAMPLE_SCHEDULE,
    resamples: int = 10,
):
    """Subsample, fit the log-log line, and predict the m for precision c0."""
    curve = subsampled_imse_curve(cfg, subsample_schedule, resamples)
    result = predict_m_for_target(curve, c0)
    return {
        "curve": curve,
        "m_hat": result.m_hat,
        "slope": result.slope,
        "intercept": result.intercept,
        "c0": c0,
        "subsample_schedule": tuple(sorted(int(s) for s in subsample_schedule)),
        "resamples": resamples,
    }
