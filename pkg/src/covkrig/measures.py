"""Prediction-error measures: per-design IMSE, maximal IMSE, APFS and IPFS.

IMSE for one design is the mean of the model's optimal MSE over an
independent test sample from the covariate distribution.  For selection
quality, the probability of false selection at a point is approximated by
the normal-tail sum

    APFS(x0) = sum_{i != b} Phi( -(yhat_i - yhat_b + delta0)
                                 / sqrt(MSE_i + MSE_b) ),

where b is the design with the smallest prediction (ties to the lowest
index) and delta0 the indifference-zone parameter.  Averaging APFS over the
test sample estimates IPFS; when the exact means are available, the
indicator variant averages 1{ y_b(x0) - min_i y_i(x0) >= delta0 } instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import ConfigurationError, UnsupportedProblemError
from .model import FittedSK, mse_opt_batch, predict_batch


@dataclass(frozen=True, eq=False)
class MeasureReport:
    """Per-design IMSEs plus the scalar summary measures for one experiment cell."""

    imse_per_design: np.ndarray
    max_imse: float
    ipfs_apfs: float
    ipfs_indicator: float
    m_prime: int
    delta0: float

    def __post_init__(self):
        self.imse_per_design.setflags(write=False)


def default_m_prime(d: int) -> int:
    """Test-sample size by covariate dimension: 1e3 (d=1), 1e4 (d<=5), 1e5."""
    if d <= 1:
        return 1_000
    if d <= 5:
        return 10_000
    return 100_000


def imse_estimate(model: FittedSK, test_points) -> float:
    """Mean optimal MSE over the test sample (must be independent of training)."""
    return float(np.mean(mse_opt_batch(model, test_points).total))


def _predictions_and_mses(models, X0):
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    preds = np.column_stack([predict_batch(mod, X0) for mod in models])
    mses = np.column_stack([mse_opt_batch(mod, X0).total for mod in models])
    return preds, mses


def _apfs_values(preds, mses, delta0):
    if delta0 < 0:
        raise ConfigurationError("delta0 must be nonnegative")
    T, k = preds.shape
    best = np.argmin(preds, axis=1)  # ties resolve to the lowest index
    rows = np.arange(T)
    gap = preds - preds[rows, best][:, None] + delta0
    denom2 = mses + mses[rows, best][:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        z = gap / np.sqrt(denom2)
    terms = ndtr(-z)
    # zero denominator: both MSEs vanish, so the term is the exact indicator
    # 1{gap < 0}, which is 0 because the best design minimizes the predictions
    terms[denom2 == 0.0] = 0.0
    terms[rows, best] = 0.0
    return np.sum(terms, axis=1)


def apfs(models, x0, delta0: float) -> float:
    """Normal-approximation PFS at a single covariate point."""
    preds, mses = _predictions_and_mses(models, np.atleast_2d(np.asarray(x0, dtype=float)))
    return float(_apfs_values(preds, mses, delta0)[0])


def ipfs_estimate(models, test_points, delta0: float, true_means=None):
    """(mean APFS, mean false-selection indicator) over the test sample.

    true_means supplies the exact design means at the test points, either as
    a (T, k) array or a callable mapping the test points to one; the
    indicator variant needs it and raises without it.
    """
    X0 = np.atleast_2d(np.asarray(test_points, dtype=float))
    preds, mses = _predictions_and_mses(models, X0)
    apfs_mean = float(np.mean(_apfs_values(preds, mses, delta0)))
    if true_means is None:
        raise UnsupportedProblemError(
            "indicator IPFS needs the exact design means; this problem has no truth oracle"
        )
    truth = true_means(X0) if callable(true_means) else np.asarray(true_means, dtype=float)
    if truth.shape != preds.shape:
        raise ConfigurationError("true means must have shape (T, k)")
    best = np.argmin(preds, axis=1)
    false_sel = truth[np.arange(X0.shape[0]), best] - np.min(truth, axis=1) >= delta0
    return apfs_mean, float(np.mean(false_sel))


def measure_report(models, test_points, delta0: float, true_means=None) -> MeasureReport:
    """IMSE per design, maximal IMSE, and both IPFS estimates for one cell."""
    X0 = np.atleast_2d(np.asarray(test_points, dtype=float))
    imse = np.array([imse_estimate(mod, X0) for mod in models])
    apfs_mean, ind_mean = ipfs_estimate(models, X0, delta0, true_means=true_means)
    return MeasureReport(
        imse_per_design=imse,
        max_imse=float(np.max(imse)),
        ipfs_apfs=apfs_mean,
        ipfs_indicator=ind_mean,
        m_prime=X0.shape[0],
        delta0=float(delta0),
    )
