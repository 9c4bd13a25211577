"""Theoretical convergence-rate functions, empirical slope fits, and the
budget-allocation bound with its min-max solver.

The maximal IMSE decays (in probability over the covariate draw) no slower
than a kernel-class-dependent rate in the number of covariate points m and
replications n:

    finite rank   R_F = max( 1/(mn),  m^(-r*/2) )
    exp decay     R_E = max( log(mn)^(d/k*) / (mn),
                             log(mn)^(r*(k*+d)/k*) / m^(r*/2) )
    poly decay    R_P = max( (mn)^(-2v*/(2v*+d)),
                             n^(d r*/(2v*+d)) log(mn)^(r*) / m^(r*(2v*-d)/(2v*+d)) )

For a fixed n these simplify to 1/m, log(m)^(d/k*)/m and m^(-2v*/(2v*+d)).
The finite-rank linear kernel attains its rate exactly: mn times the maximal
IMSE converges to (d+1) sigma^2.

For unequal replication counts across designs, with rho_i = m n_i / n_tot,
each design's expected IMSE is bounded by R_i(rho_i) built from its spectrum
(effective dimension and trace tails); minimizing max_i R_i(rho_i) over the
simplex gives an approximately optimal budget split.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .spectrum import EigenSequence, effective_dimension

FINITE_RANK_CLASS = "finite_rank"
EXP_DECAY = "exp_decay"
POLY_DECAY = "poly_decay"
KERNEL_CLASSES = (FINITE_RANK_CLASS, EXP_DECAY, POLY_DECAY)

DEFAULT_ZETA_MAX = 1000


@dataclass(frozen=True)
class RateParams:
    """Assumption-level constants entering the rate and allocation bounds.

    r_star and rho_star are moment constants (defaults 2 and 1, the weakest
    admissible); kappa_star / nu_star parametrize the eigenvalue decay of the
    exponential / polynomial classes.  The remaining fields only enter the
    allocation bound.
    """

    kernel_class: str
    d: int
    r_star: float = 2.0
    kappa_star: float | None = None
    nu_star: float | None = None
    rho_star: float = 1.0
    sigma_bar2: float = 1.0
    sigma_underbar2: float = 1.0
    c_f: float = 1.0
    q: int = 1
    lambda_min_ff: float = 1.0

    def __post_init__(self):
        if self.kernel_class not in KERNEL_CLASSES:
            raise ConfigurationError(f"unknown kernel class {self.kernel_class!r}")
        if self.d < 1:
            raise ConfigurationError("d must be >= 1")
        if self.r_star < 2:
            raise ConfigurationError("r_star must be >= 2")
        if self.kernel_class == EXP_DECAY and (self.kappa_star is None or self.kappa_star <= 0):
            raise ConfigurationError("exp_decay needs kappa_star > 0")
        if self.kernel_class == POLY_DECAY and (self.nu_star is None or self.nu_star <= self.d / 2):
            raise ConfigurationError("poly_decay needs nu_star > d/2")
        if self.sigma_bar2 <= 0 or self.sigma_underbar2 <= 0:
            raise ConfigurationError("noise variance bounds must be positive")
        if self.q < 0 or (self.q > 0 and self.lambda_min_ff <= 0):
            raise ConfigurationError("q >= 1 needs lambda_min_ff > 0")

    @property
    def c_dagger(self):
        return 0.0 if self.q == 0 else self.c_f**2 / self.lambda_min_ff


def rate_function(params: RateParams, m: int, n: int) -> float:
    """The displayed rate R_F, R_E or R_P at (m, n), log terms included."""
    if m < 1 or n < 1:
        raise ConfigurationError("m and n must be >= 1")
    r = params.r_star
    d = params.d
    mn = float(m) * float(n)
    if params.kernel_class == FINITE_RANK_CLASS:
        return max(1.0 / mn, m ** (-r / 2.0))
    log_mn = math.log(mn)
    if params.kernel_class == EXP_DECAY:
        kap = params.kappa_star
        first = log_mn ** (d / kap) / mn
        second = log_mn ** (r * (kap + d) / kap) / m ** (r / 2.0)
        return max(first, second)
    nu = params.nu_star
    first = mn ** (-2.0 * nu / (2.0 * nu + d))
    second = n ** (d * r / (2.0 * nu + d)) * log_mn**r / m ** (r * (2.0 * nu - d) / (2.0 * nu + d))
    return max(first, second)


def simplified_rate(params: RateParams, m: int) -> float:
    """Fixed-n simplification: 1/m, log(m)^(d/k*)/m, or m^(-2v*/(2v*+d))."""
    if params.kernel_class == FINITE_RANK_CLASS:
        return 1.0 / m
    if params.kernel_class == EXP_DECAY:
        return math.log(m) ** (params.d / params.kappa_star) / m if m > 1 else 1.0
    nu = params.nu_star
    return m ** (-2.0 * nu / (2.0 * nu + params.d))


def finite_rank_limit(d: int, sigma2: float) -> float:
    """Exact limit of mn * maximal IMSE for the finite-rank linear kernel."""
    if d < 1:
        raise ConfigurationError("d must be >= 1")
    if sigma2 <= 0:
        raise ConfigurationError("sigma2 must be positive")
    return (d + 1) * sigma2


def fit_loglog_slope(pairs, m_min: int = 0):
    """OLS slope of log(mean max IMSE) on log m, with its standard error.

    Accepts (m, value) pairs or a ConvergenceTable holding a single
    (kernel, strategy) combination.
    """
    if hasattr(pairs, "pairs"):
        pairs = pairs.pairs()
    pts = [(int(m), float(v)) for m, v in pairs if int(m) >= m_min]
    if len(pts) < 3:
        raise ConfigurationError("need at least 3 rows with m >= m_min")
    if any(v <= 0 or math.isnan(v) for _, v in pts):
        raise ConfigurationError("slope fit needs positive finite values")
    x = np.log([m for m, _ in pts])
    y = np.log([v for _, v in pts])
    n = x.size
    xbar = x.mean()
    sxx = float(np.sum((x - xbar) ** 2))
    slope = float(np.sum((x - xbar) * (y - y.mean())) / sxx)
    intercept = float(y.mean() - slope * xbar)
    resid = y - (intercept + slope * x)
    if n > 2:
        stderr = math.sqrt(float(resid @ resid) / (n - 2) / sxx)
    else:
        stderr = 0.0
    return slope, stderr


# ---------------------------------------------------------------------------
# Budget allocation across designs
# ---------------------------------------------------------------------------


def b_factor(m: int, zeta, r_star: float):
    """b(m, zeta, r*) = max( sqrt(max(r*, log zeta)),
    max(r*, log zeta) / m^(1/2 - 1/r*) )."""
    zeta = np.asarray(zeta, dtype=float)
    inner = np.maximum(r_star, np.log(zeta))
    expo = 0.5 - 1.0 / r_star
    return np.maximum(np.sqrt(inner), inner / m**expo)


def allocation_bound(
    params_per_design,
    eigs_per_design,
    n_tot: int,
    m: int,
    rho,
    zeta_max: int = DEFAULT_ZETA_MAX,
):
    """R_i(rho_i) for every design, the inner infimum over zeta scanned
    exhaustively on {1, ..., zeta_max}."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise ConfigurationError("every rho_i must be positive")
    if np.sum(rho) > 1.0 + 1e-9:
        raise ConfigurationError("rho must lie on (or under) the simplex")
    if zeta_max < 1:
        raise ConfigurationError("zeta_max must be >= 1")
    k = len(params_per_design)
    if len(eigs_per_design) != k or rho.size != k:
        raise ConfigurationError("params, eigs and rho must have matching lengths")
    return np.array(
        [
            _bound_one(params_per_design[i], eigs_per_design[i], n_tot, m, float(rho[i]), zeta_max)
            for i in range(k)
        ]
    )


def allocation_leading_terms(p: RateParams, eigs: EigenSequence, n_tot: int, rho: float):
    """The first two (budget-driven) terms of R_i, strictly decreasing in rho."""
    a = p.sigma_bar2 / (n_tot * rho)
    gam = effective_dimension(eigs, a)
    return 2.0 * a * gam + 64.0 * p.c_dagger * p.q * p.sigma_bar2 * eigs.trace() / (n_tot * rho)


def _bound_one(p: RateParams, eigs: EigenSequence, n_tot, m, rho, zeta_max):
    sb2 = p.sigma_bar2
    su2 = p.sigma_underbar2
    a = sb2 / (n_tot * rho)
    gam = effective_dimension(eigs, a)
    tr = eigs.trace()
    cd = p.c_dagger
    t1 = 2.0 * sb2 / (n_tot * rho) * gam
    t2 = 64.0 * cd * p.q * sb2 * tr / (n_tot * rho)

    zetas = np.arange(1, zeta_max + 1)
    tails = np.array([eigs.trace_tail(int(z)) for z in zetas])
    bvals = b_factor(m, zetas, p.r_star)
    coef1 = (
        64.0 * cd * p.q * p.rho_star**4 * sb2 / su2**2 * tr**2
        + 8.0 * cd * p.q * tr
        + 3.0 / sb2 * tr
        + 1.0
    )
    coef2 = 8.0 * cd * p.q * tr**2 + tr
    inner = coef1 * tails * (n_tot * rho) + coef2 * (
        300.0 * p.rho_star**2 * bvals / math.sqrt(m) * gam
    ) ** p.r_star
    return float(t1 + t2 + np.min(inner))


def _rho_grid(resolution):
    n_steps = max(2, int(round(1.0 / resolution)))
    return np.linspace(resolution, 1.0, n_steps)


def solve_allocation(
    params_per_design,
    eigs_per_design,
    n_tot: int,
    m: int,
    grid_resolution: float = 1e-3,
    zeta_max: int = DEFAULT_ZETA_MAX,
):
    """Minimize max_i R_i(rho_i) over the simplex.

    Bisects on the common bound level t: the smallest feasible t has
    sum_i rho_i_min(t) = 1, where rho_i_min(t) is the least rho with
    R_i(rho) <= t.  Each R_i is tabulated on a rho grid; non-monotone
    tabulations (possible through the zeta scan) are handled by a full grid
    scan and flagged in the returned warnings.

    Returns (rho_star, bounds_at_rho_star, warnings).
    """
    k = len(params_per_design)
    if k < 1:
        raise ConfigurationError("need at least one design")
    grid = _rho_grid(grid_resolution)
    lo_envelopes = []  # running min from the left: smallest rho with R <= t
    hi_envelopes = []  # running min from the right: largest rho with R <= t
    warnings = []
    for i in range(k):
        vals = np.array(
            [
                _bound_one(params_per_design[i], eigs_per_design[i], n_tot, m, float(r), zeta_max)
                for r in grid
            ]
        )
        if np.any(np.diff(vals) > 1e-12 * np.maximum(vals[:-1], 1e-300)):
            warnings.append(f"design {i}: R_i not monotone on the rho grid; grid-scan envelope used")
        lo_envelopes.append(np.minimum.accumulate(vals))
        hi_envelopes.append(np.minimum.accumulate(vals[::-1])[::-1])

    def level_allocation(t):
        """Per-design [rho_min, rho_max] attaining level t, or None."""
        lo = np.empty(k)
        hi = np.empty(k)
        for i in range(k):
            idx = np.searchsorted(-lo_envelopes[i], -t)
            if idx >= grid.size:
                return None
            lo[i] = grid[idx]
            jdx = grid.size - 1 - np.searchsorted(-hi_envelopes[i][::-1], -t)
            hi[i] = grid[jdx]
        if np.sum(lo) <= 1.0 + 1e-12 <= np.sum(hi) + 2e-12:
            return lo, hi
        return None

    t_lo = float(max(env[-1] for env in lo_envelopes))  # best per-design level
    t_hi = float(max(env[np.searchsorted(grid, 1.0 / k)] for env in lo_envelopes))
    feasible = level_allocation(t_hi)
    while feasible is None:
        t_hi *= 2.0
        feasible = level_allocation(t_hi)
        if t_hi > 1e300:
            raise ConfigurationError("allocation bisection failed to bracket a feasible level")
    for _ in range(80):
        t_mid = 0.5 * (t_lo + t_hi)
        cand = level_allocation(t_mid)
        if cand is not None:
            t_hi, feasible = t_mid, cand
        else:
            t_lo = t_mid
    lo, hi = feasible
    # raise designs from their minimum toward their maximum to land on the simplex
    rho_star = lo.copy()
    deficit = 1.0 - float(np.sum(rho_star))
    for i in range(k):
        if deficit <= 0:
            break
        bump = min(hi[i] - rho_star[i], deficit)
        rho_star[i] += bump
        deficit -= bump
    rho_star = rho_star / np.sum(rho_star)
    bounds = allocation_bound(params_per_design, eigs_per_design, n_tot, m, rho_star, zeta_max)
    return rho_star, bounds, warnings
