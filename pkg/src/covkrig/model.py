"""Per-design stochastic kriging: fitting, prediction, and prediction MSE.

One design's model is y(x) = f(x)'beta + M(x), observed through replication
means Ybar with heteroscedastic noise.  With Sigma_y = Sigma_M(x^m, x^m) +
Sigma_eps, the MSE-optimal linear predictor and its MSE are

    yhat(x0)  = f(x0)'beta_hat + k0' Sigma_y^{-1} (Ybar - F beta_hat),
    beta_hat  = (F' Sigma_y^{-1} F)^{-1} F' Sigma_y^{-1} Ybar,
    MSE(x0)   = [Sigma(x0,x0) - k0' Sigma_y^{-1} k0]
              + eta' (F' Sigma_y^{-1} F)^{-1} eta,
    eta       = f(x0) - F' Sigma_y^{-1} k0,

with k0 = Sigma_M(x^m, x0).  The two bracketed pieces are the process and
regression contributions to the total MSE; the MSE never depends on Ybar.
Hyperparameters (tau2, phi) are chosen by maximizing the Gaussian marginal
log-likelihood of Ybar with beta profiled out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ConfigurationError, FitError, IllConditionedError, RegressorError
from .kernels import (
    FINITE_RANK_LINEAR,
    STATIONARY_FAMILIES,
    KernelSpec,
    gram,
    kernel_matrix,
    pairwise_dists,
    point_variance,
    stationary_corr,
)
from .noise import NoiseEstimate, estimate_noise

REGRESSOR_KINDS = ("none", "constant", "linear")

DEFAULT_SEARCH_BUDGET = 320
_GRID_SIDE = 16
_PHI_DECADES = (-2.0, 2.0)
_TAU2_DECADES = (-3.0, 3.0)
_NEG_MSE_TOL = 1e-10


@dataclass(frozen=True)
class RegressorSpec:
    """Known trend basis f(x): none (simple kriging), constant, or linear."""

    kind: str = "constant"

    def __post_init__(self):
        if self.kind not in REGRESSOR_KINDS:
            raise ConfigurationError(f"unknown regressor kind {self.kind!r}")

    def q(self, d: int) -> int:
        return {"none": 0, "constant": 1, "linear": d + 1}[self.kind]

    def design_matrix(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        m, d = X.shape
        if self.kind == "none":
            return np.empty((m, 0))
        if self.kind == "constant":
            return np.ones((m, 1))
        return np.column_stack([np.ones(m), X])


@dataclass(frozen=True, eq=False)
class MsePair:
    """Process and regression contributions to the optimal MSE; total is their sum."""

    mse_m: float | np.ndarray
    mse_beta: float | np.ndarray
    total: float | np.ndarray


@dataclass(frozen=True, eq=False)
class FittedSK:
    """One design's fitted model; immutable after construction.

    chol is the lower Cholesky factor of Sigma_y.  alpha and w_factor cache
    Sigma_y^{-1}(Ybar - F beta_hat) and L^{-1} F for prediction and MSE.
    """

    kernel: KernelSpec
    regressors: RegressorSpec
    beta_hat: np.ndarray
    noise: NoiseEstimate
    train_points: np.ndarray
    train_means: np.ndarray
    chol: np.ndarray
    loglik: float
    alpha: np.ndarray
    w_factor: np.ndarray
    gram_chol_beta: np.ndarray

    def __post_init__(self):
        for name in ("beta_hat", "train_points", "train_means", "chol", "alpha", "w_factor", "gram_chol_beta"):
            getattr(self, name).setflags(write=False)

    @property
    def m(self):
        return self.train_points.shape[0]

    @property
    def dim(self):
        return self.train_points.shape[1]


def _chol_with_escalation(sigma_y, scale):
    # The noise diagonal normally makes Sigma_y safely PD; escalate only on failure.
    for rel in (0.0, 1e-10, 1e-8, 1e-6):
        try:
            S = sigma_y if rel == 0.0 else sigma_y + rel * scale * np.eye(sigma_y.shape[0])
            return np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            continue
    pivot = float(np.min(np.linalg.eigvalsh(sigma_y)))
    raise IllConditionedError(
        f"Sigma_y not positive definite; smallest pivot {pivot:.6g}", smallest_pivot=pivot
    )


def _gls_pieces(L, F, y):
    """Triangular-solve workhorse shared by fitting and likelihood evaluation.

    Returns (beta, resid, alpha, w, lg) where w = L^{-1} F and lg is the
    Cholesky factor of F' Sigma_y^{-1} F (empty when q = 0).
    """
    u = solve_triangular(L, y, lower=True)
    q = F.shape[1]
    if q == 0:
        beta = np.empty(0)
        w = np.empty((L.shape[0], 0))
        lg = np.empty((0, 0))
        resid_white = u
    else:
        w = solve_triangular(L, F, lower=True)
        G = w.T @ w
        try:
            lg = np.linalg.cholesky(G)
        except np.linalg.LinAlgError:
            raise RegressorError("regression design matrix is rank deficient") from None
        beta = solve_triangular(
            lg.T, solve_triangular(lg, w.T @ u, lower=True), lower=False
        )
        resid_white = u - w @ beta
    alpha = solve_triangular(L.T, resid_white, lower=False)
    return beta, resid_white, alpha, w, lg


def _loglik_from_pieces(L, resid_white):
    m = L.shape[0]
    quad = float(resid_white @ resid_white)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return -0.5 * (quad + logdet + m * math.log(2.0 * math.pi))


def build_sk(
    kernel: KernelSpec,
    regressors: RegressorSpec,
    points,
    means,
    noise: NoiseEstimate,
    jitter_rel: float = 0.0,
) -> FittedSK:
    """Assemble a FittedSK from a fully specified kernel and noise model."""
    pts = np.atleast_2d(np.asarray(points, dtype=float)).copy()
    y = np.asarray(means, dtype=float).copy()
    if y.shape[0] != pts.shape[0]:
        raise ConfigurationError("points and means disagree on m")
    if noise.m != pts.shape[0]:
        raise ConfigurationError("noise estimate does not match the point count")
    K = gram(kernel, pts, jitter_rel=jitter_rel).entries.copy()
    K[np.diag_indices_from(K)] += noise.epsilon_diag()
    L = _chol_with_escalation(K, kernel.diag_scale(pts))
    F = regressors.design_matrix(pts)
    beta, resid_white, alpha, w, lg = _gls_pieces(L, F, y)
    ll = _loglik_from_pieces(L, resid_white)
    return FittedSK(
        kernel=kernel,
        regressors=regressors,
        beta_hat=beta,
        noise=noise,
        train_points=pts,
        train_means=y,
        chol=L,
        loglik=ll,
        alpha=alpha,
        w_factor=w,
        gram_chol_beta=lg,
    )


def profile_loglik(kernel: KernelSpec, regressors: RegressorSpec, points, means, noise) -> float:
    """Marginal log-likelihood at the given hyperparameters, beta profiled out."""
    return build_sk(kernel, regressors, points, means, noise).loglik


def predict_batch(model: FittedSK, X0):
    """Predictor values at each row of X0."""
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    K0 = kernel_matrix(model.kernel, model.train_points, X0)
    yhat = K0.T @ model.alpha
    if model.regressors.q(model.dim) > 0:
        yhat = yhat + model.regressors.design_matrix(X0) @ model.beta_hat
    return yhat


def predict(model: FittedSK, x0) -> float:
    return float(predict_batch(model, np.atleast_2d(np.asarray(x0, dtype=float)))[0])


def mse_opt_batch(model: FittedSK, X0) -> MsePair:
    """Process / regression / total MSE at each row of X0.

    Independent of the observed means by construction; tiny negative values
    from roundoff are clipped to zero after a tolerance check.
    """
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    K0 = kernel_matrix(model.kernel, model.train_points, X0)
    V = solve_triangular(model.chol, K0, lower=True)
    prior = point_variance(model.kernel, X0)
    mse_m = prior - np.einsum("ij,ij->j", V, V)
    scale = model.kernel.diag_scale(model.train_points)
    if np.min(mse_m) < -_NEG_MSE_TOL * scale:
        raise IllConditionedError(
            f"process MSE fell below the roundoff tolerance: {np.min(mse_m):.3g}"
        )
    mse_m = np.maximum(mse_m, 0.0)
    if model.regressors.q(model.dim) > 0:
        F0 = model.regressors.design_matrix(X0)
        eta = F0 - V.T @ model.w_factor
        half = solve_triangular(model.gram_chol_beta, eta.T, lower=True)
        mse_beta = np.einsum("ij,ij->j", half, half)
    else:
        mse_beta = np.zeros(X0.shape[0])
    return MsePair(mse_m=mse_m, mse_beta=mse_beta, total=mse_m + mse_beta)


def mse_opt(model: FittedSK, x0) -> MsePair:
    pair = mse_opt_batch(model, np.atleast_2d(np.asarray(x0, dtype=float)))
    return MsePair(
        mse_m=float(pair.mse_m[0]),
        mse_beta=float(pair.mse_beta[0]),
        total=float(pair.total[0]),
    )


# ---------------------------------------------------------------------------
# Finite-rank closed forms (kernel a * (x.x' + b), trend f == 0)
# ---------------------------------------------------------------------------


def _augment(X, b):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.column_stack([np.full(X.shape[0], math.sqrt(b)), X])


def finite_rank_mse(a: float, b: float, sigma2: float, n: int, points, x0):
    """Optimal MSE of the finite-rank model in (d+1)-dimensional space.

        MSE(x0) = a * x0~' (I_{d+1} + (a n / sigma2) Z'Z)^{-1} x0~

    with Z the augmented training matrix and x0~ = (sqrt(b), x0).  No m x m
    factorization is formed.  Accepts a single point or a batch of rows.
    """
    if sigma2 <= 0 or a <= 0 or b <= 0 or n < 1:
        raise ConfigurationError("finite_rank_mse needs a, b, sigma2 > 0 and n >= 1")
    Z = _augment(points, b)
    X0t = _augment(x0, b)
    A = np.eye(Z.shape[1]) + (a * n / sigma2) * (Z.T @ Z)
    sol = np.linalg.solve(A, X0t.T)
    vals = a * np.einsum("ij,ij->j", X0t.T, sol)
    x0_arr = np.asarray(x0, dtype=float)
    if x0_arr.ndim <= 1:
        return float(vals[0])
    return vals


def finite_rank_predict(a: float, b: float, sigma2: float, n: int, points, means, x0):
    """Closed-form predictor a * x0~' Z' (a Z Z' + (sigma2/n) I_m)^{-1} Ybar."""
    Z = _augment(points, b)
    X0t = _augment(x0, b)
    m = Z.shape[0]
    S = a * (Z @ Z.T) + (sigma2 / n) * np.eye(m)
    w = np.linalg.solve(S, np.asarray(means, dtype=float))
    vals = a * (X0t @ (Z.T @ w))
    x0_arr = np.asarray(x0, dtype=float)
    if x0_arr.ndim <= 1:
        return float(vals[0])
    return vals


# ---------------------------------------------------------------------------
# Maximum-likelihood fitting
# ---------------------------------------------------------------------------


def _median_pairwise_distance(pts):
    D = pairwise_dists(pts, pts)
    vals = D[np.triu_indices_from(D, k=1)]
    vals = vals[vals > 0]
    if vals.size == 0:
        return 1.0
    return float(np.median(vals))


class _LoglikCache:
    """Evaluates the profiled log-likelihood on (log10 tau2, log10 phi).

    The correlation matrix is rebuilt per phi and shared across tau2 values;
    failed factorizations count toward the budget but score -inf.
    """

    def __init__(self, family, pts, y, F, eps_diag, budget):
        self.family = family
        self.pts = pts
        self.y = y
        self.F = F
        self.eps_diag = eps_diag
        self.dists = pairwise_dists(pts, pts)
        self.budget = budget
        self.evals = 0
        self.failures = 0
        self.cache = {}
        self._corr_phi = None
        self._corr = None

    def _corr_for(self, phi):
        if self._corr_phi != phi:
            C = stationary_corr(self.family, self.dists, phi)
            self._corr = 0.5 * (C + C.T)
            self._corr_phi = phi
        return self._corr

    def __call__(self, log_tau2, log_phi):
        key = (round(log_tau2, 12), round(log_phi, 12))
        if key in self.cache:
            return self.cache[key]
        if self.evals >= self.budget:
            return -np.inf
        self.evals += 1
        tau2, phi = 10.0**log_tau2, 10.0**log_phi
        S = tau2 * self._corr_for(phi)
        S[np.diag_indices_from(S)] += self.eps_diag
        try:
            L = np.linalg.cholesky(S)
            _, resid_white, _, _, _ = _gls_pieces(L, self.F, self.y)
            val = _loglik_from_pieces(L, resid_white)
        except (np.linalg.LinAlgError, RegressorError):
            self.failures += 1
            val = -np.inf
        self.cache[key] = val
        return val


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_max(g, lo, hi, iters=8):
    """Golden-section maximization of g on [lo, hi]."""
    x1 = hi - _GOLDEN * (hi - lo)
    x2 = lo + _GOLDEN * (hi - lo)
    f1, f2 = g(x1), g(x2)
    for _ in range(iters):
        if f1 < f2:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + _GOLDEN * (hi - lo)
            f2 = g(x2)
        else:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - _GOLDEN * (hi - lo)
            f1 = g(x1)
    return (x1, f1) if f1 >= f2 else (x2, f2)


def fit(
    points,
    replication_table,
    kernel_family: str,
    regressors: RegressorSpec | str = "constant",
    noise_degree=None,
    noise_log: bool = False,
    search_budget: int = DEFAULT_SEARCH_BUDGET,
    warm_start: tuple | None = None,
    kernel_spec: KernelSpec | None = None,
    jitter_rel: float = 0.0,
) -> FittedSK:
    """Fit one design's SK model by maximum likelihood.

    The (tau2, phi) search is a log-spaced grid (phi scaled by the reciprocal
    median pairwise distance, tau2 by the variance of the replication means)
    followed by coordinate-wise golden-section refinement; search_budget caps
    likelihood evaluations.  When warm_start = (tau2, phi) is given, a small
    grid centered there replaces the global one.  Passing kernel_spec skips
    the search entirely (used for the finite-rank family, whose a and b are
    treated as known).
    """
    if isinstance(regressors, str):
        regressors = RegressorSpec(kind=regressors)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] < 2:
        raise ConfigurationError("fit needs at least two covariate points")
    rows = replication_table
    means = np.array([np.mean(np.asarray(r, dtype=float)) for r in _iter_rows(rows)])
    noise = estimate_noise(rows, pts, basis_degree=noise_degree, log_scale=noise_log)

    if kernel_spec is not None:
        return build_sk(kernel_spec, regressors, pts, means, noise, jitter_rel=jitter_rel)
    if kernel_family == FINITE_RANK_LINEAR:
        raise ConfigurationError("the finite-rank family has no free hyperparameters; pass kernel_spec")
    if kernel_family not in STATIONARY_FAMILIES:
        raise ConfigurationError(f"unknown kernel family {kernel_family!r}")

    F = regressors.design_matrix(pts)
    ll = _LoglikCache(kernel_family, pts, means, F, noise.epsilon_diag(), search_budget)

    phi0 = 1.0 / _median_pairwise_distance(pts)
    tau20 = max(float(np.var(means)), 1e-12)
    if warm_start is not None:
        t_grid = math.log10(warm_start[0]) + np.linspace(-0.5, 0.5, 5)
        p_grid = math.log10(warm_start[1]) + np.linspace(-0.5, 0.5, 5)
        step_t = step_p = 0.25
    else:
        side = min(_GRID_SIDE, max(4, int(math.sqrt(search_budget * 0.8))))
        t_grid = math.log10(tau20) + np.linspace(*_TAU2_DECADES, side)
        p_grid = math.log10(phi0) + np.linspace(*_PHI_DECADES, side)
        step_t = t_grid[1] - t_grid[0]
        step_p = p_grid[1] - p_grid[0]

    best = (-np.inf, None, None)
    for lt in t_grid:
        for lp in p_grid:
            v = ll(lt, lp)
            if v > best[0]:  # first maximizer in scan order wins ties
                best = (v, lt, lp)
    if best[1] is None or not np.isfinite(best[0]):
        raise FitError(
            f"all {ll.evals} hyperparameter candidates failed to factorize "
            f"({ll.failures} failures)"
        )

    _, lt, lp = best
    for _ in range(2):
        # refinement stays inside the declared search box
        lp, _ = _golden_max(
            lambda t: ll(lt, t), max(lp - step_p, p_grid[0]), min(lp + step_p, p_grid[-1])
        )
        lt, _ = _golden_max(
            lambda t: ll(t, lp), max(lt - step_t, t_grid[0]), min(lt + step_t, t_grid[-1])
        )
    # keep whichever point of everything evaluated scored best
    best_key = max(ll.cache, key=lambda k: ll.cache[k])
    if not np.isfinite(ll.cache[best_key]):
        raise FitError("hyperparameter search found no finite log-likelihood")
    lt, lp = best_key

    spec = KernelSpec(family=kernel_family, tau2=10.0**lt, phi=10.0**lp)
    return build_sk(spec, regressors, pts, means, noise, jitter_rel=jitter_rel)


def _iter_rows(replication_table):
    return list(replication_table)
