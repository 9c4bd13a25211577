"""Simulation-noise variance estimation from replications.

The noise covariance across covariate points is diagonal (no common random
numbers): entry j is var(point j) / n_j.  Per-point sample variances are
noisy at small replication counts, so they can be smoothed by least squares
on a low-degree polynomial basis before use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InsufficientReplicationsError

RAW = "raw"
LEAST_SQUARES = "least_squares"

# below this many points a linear basis is wobbly; pool instead
SMALL_M_POOL_THRESHOLD = 20


@dataclass(frozen=True, eq=False)
class NoiseEstimate:
    """Per-point noise variances (floored) and replication counts.

    The implied covariance of the averaged simulation errors is diagonal with
    entries per_point_var[j] / reps[j]; only the diagonal is ever stored.
    """

    per_point_var: np.ndarray
    reps: np.ndarray
    mode: str
    floor: float
    fell_back: bool = False

    def __post_init__(self):
        v = np.asarray(self.per_point_var, dtype=float)
        r = np.asarray(self.reps, dtype=int)
        if v.ndim != 1 or r.shape != v.shape:
            raise ConfigurationError("per_point_var and reps must be matching 1-d arrays")
        if np.any(v < self.floor) or self.floor <= 0:
            raise ConfigurationError("variances must respect a positive floor")
        v.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "per_point_var", v)
        object.__setattr__(self, "reps", r)

    @property
    def m(self):
        return self.per_point_var.size

    def epsilon_diag(self):
        """Diagonal of the covariance of the averaged errors: var_j / n_j."""
        return self.per_point_var / self.reps


def _rows(replication_table):
    if isinstance(replication_table, np.ndarray) and replication_table.ndim == 2:
        return [replication_table[j] for j in range(replication_table.shape[0])]
    return [np.asarray(row, dtype=float) for row in replication_table]


def sample_variances(replication_table):
    """Unbiased sample variance at each covariate point.

    Accepts an (m, n) array or a ragged list of per-point replication vectors;
    every point needs at least two replications.
    """
    rows = _rows(replication_table)
    out = np.empty(len(rows))
    for j, row in enumerate(rows):
        if row.size < 2:
            raise InsufficientReplicationsError(
                f"point {j} has {row.size} replication(s); need >= 2"
            )
        out[j] = np.var(row, ddof=1)
    return out


def replication_counts(replication_table):
    return np.array([row.size for row in _rows(replication_table)], dtype=int)


def default_floor(raw):
    return 1e-10 * max(float(np.max(raw)), 1.0)


def smooth_variances(
    raw, points, basis_degree: int, floor=None, reps=None, log_scale: bool = False
) -> NoiseEstimate:
    """Least-squares fit of the raw variances on a polynomial basis of x.

    basis_degree 0 regresses on the constant (pooled mean); degree 1 on
    (1, x).  Fitted values are floored.  With log_scale the regression runs
    on log variances and the fit is exponentiated, which keeps the fit
    positive when the true variance spans orders of magnitude (queueing
    responses near saturation).  A rank-deficient design matrix falls back
    to the raw variances with the fell_back flag set.
    """
    raw = np.asarray(raw, dtype=float)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    m = raw.size
    if basis_degree not in (0, 1):
        raise ConfigurationError("basis_degree must be 0 or 1")
    if floor is None:
        floor = default_floor(raw)
    if reps is None:
        reps = np.ones(m, dtype=int)
    n_terms = 1 if basis_degree == 0 else 1 + pts.shape[1]
    if m <= n_terms:
        raise ConfigurationError(f"need more than {n_terms} points for degree {basis_degree}")

    target = np.log(np.maximum(raw, floor)) if log_scale else raw
    if basis_degree == 0:
        fitted = np.full(m, float(np.mean(target)))
        fell_back = False
    else:
        B = np.column_stack([np.ones(m), pts])
        sol, _, rank, _ = np.linalg.lstsq(B, target, rcond=None)
        if rank < B.shape[1]:
            fitted, fell_back = (np.log(np.maximum(raw, floor)) if log_scale else raw.copy()), True
        else:
            fitted, fell_back = B @ sol, False
    if log_scale:
        fitted = np.exp(fitted)

    fitted = np.maximum(fitted, floor)
    mode = RAW if fell_back else LEAST_SQUARES
    return NoiseEstimate(
        per_point_var=fitted, reps=reps, mode=mode, floor=float(floor), fell_back=fell_back
    )


def estimate_noise(replication_table, points, basis_degree=None, log_scale: bool = False) -> NoiseEstimate:
    """Sample variances followed by smoothing; degree defaults to 0 for small
    point sets and 1 otherwise.  Point sets too small to support the basis
    keep the raw (floored) variances."""
    raw = sample_variances(replication_table)
    reps = replication_counts(replication_table)
    if basis_degree is None:
        basis_degree = 0 if raw.size < SMALL_M_POOL_THRESHOLD else 1
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n_terms = 1 if basis_degree == 0 else 1 + pts.shape[1]
    if raw.size <= n_terms:
        floor = default_floor(raw)
        return NoiseEstimate(
            per_point_var=np.maximum(raw, floor), reps=reps, mode=RAW, floor=floor
        )
    return smooth_variances(raw, points, basis_degree, reps=reps, log_scale=log_scale)


def known_noise(variance, reps, m=None) -> NoiseEstimate:
    """Noise model with a known (true) variance; used when sigma^2 is given."""
    if np.isscalar(variance):
        if m is None:
            raise ConfigurationError("scalar variance needs m")
        variance = np.full(m, float(variance))
    variance = np.asarray(variance, dtype=float)
    if np.isscalar(reps):
        reps = np.full(variance.size, int(reps))
    floor = min(float(np.min(variance)), default_floor(variance))
    return NoiseEstimate(
        per_point_var=variance, reps=np.asarray(reps, dtype=int), mode=RAW, floor=floor
    )
