"""Covariance kernels and Gram-matrix construction.

Five families are implemented.  The four stationary ones share the scale
``tau2`` and rate ``phi`` and depend only on the Euclidean distance
r = ||x - x'||:

    sqexp      tau2 * exp(-phi * r**2)
    matern52   tau2 * (1 + sqrt(5)*phi*r + (5/3)*phi**2*r**2) * exp(-sqrt(5)*phi*r)
    matern32   tau2 * (1 + sqrt(3)*phi*r) * exp(-sqrt(3)*phi*r)
    exp        tau2 * exp(-phi * r)

The fifth is the finite-rank linear kernel a * (x.x' + b), whose sample
paths are affine functions of x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, IllConditionedError, NumericError

SQEXP = "sqexp"
MATERN52 = "matern52"
MATERN32 = "matern32"
EXP = "exp"
FINITE_RANK_LINEAR = "finite_rank_linear"

STATIONARY_FAMILIES = (SQEXP, MATERN52, MATERN32, EXP)
KERNEL_FAMILIES = STATIONARY_FAMILIES + (FINITE_RANK_LINEAR,)

DEFAULT_JITTER_REL = 1e-8


@dataclass(frozen=True)
class KernelSpec:
    """One kernel family plus its hyperparameters.

    Stationary families store (tau2, phi); the finite-rank linear family
    stores (a, b).  All stored hyperparameters are strictly positive.
    """

    family: str
    tau2: float | None = None
    phi: float | None = None
    a: float | None = None
    b: float | None = None

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ConfigurationError(f"unknown kernel family {self.family!r}")
        if self.family == FINITE_RANK_LINEAR:
            if self.a is None or self.b is None or self.a <= 0 or self.b <= 0:
                raise ConfigurationError("finite-rank kernel needs a > 0 and b > 0")
            if self.tau2 is not None or self.phi is not None:
                raise ConfigurationError("finite-rank kernel takes no (tau2, phi)")
        else:
            if self.tau2 is None or self.phi is None or self.tau2 <= 0 or self.phi <= 0:
                raise ConfigurationError(f"{self.family} needs tau2 > 0 and phi > 0")
            if self.a is not None or self.b is not None:
                raise ConfigurationError("stationary kernels take no (a, b)")

    @property
    def stationary(self):
        return self.family != FINITE_RANK_LINEAR

    def diag_scale(self, points=None):
        """Magnitude of Sigma(x, x) used for relative jitter.

        tau2 for stationary families; a * (max ||x||^2 + b) for the
        finite-rank family (needs the point set).
        """
        if self.stationary:
            return self.tau2
        if points is None:
            return self.a * self.b
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return self.a * (float(np.max(np.sum(pts * pts, axis=1))) + self.b)


def stationary_corr(family: str, r, phi: float):
    """Correlation (unit-variance kernel) as a function of distance r >= 0."""
    r = np.asarray(r, dtype=float)
    if family == SQEXP:
        return np.exp(-phi * r * r)
    if family == MATERN52:
        u = math.sqrt(5.0) * phi * r
        return (1.0 + u + u * u / 3.0) * np.exp(-u)
    if family == MATERN32:
        u = math.sqrt(3.0) * phi * r
        return (1.0 + u) * np.exp(-u)
    if family == EXP:
        return np.exp(-phi * r)
    raise ConfigurationError(f"{family!r} is not a stationary family")


def pairwise_dists(A, B):
    """Euclidean distance matrix between the rows of A (n, d) and B (m, d)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    d2 = np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2.0 * (A @ B.T)
    np.maximum(d2, 0.0, out=d2)
    return np.sqrt(d2)


def kernel_matrix(spec: KernelSpec, A, B):
    """Covariance matrix Sigma(A, B) between two point sets, shape (|A|, |B|)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if not np.all(np.isfinite(A)) or not np.all(np.isfinite(B)):
        raise NumericError("non-finite kernel input")
    if spec.stationary:
        return spec.tau2 * stationary_corr(spec.family, pairwise_dists(A, B), spec.phi)
    return spec.a * (A @ B.T + spec.b)


def kernel_eval(spec: KernelSpec, x, x_prime) -> float:
    """Sigma(x, x') for a single pair of points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xp = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if not np.all(np.isfinite(x)) or not np.all(np.isfinite(xp)):
        raise NumericError("non-finite kernel input")
    if spec.stationary:
        r = float(np.sqrt(np.sum((x - xp) ** 2)))
        return float(spec.tau2 * stationary_corr(spec.family, r, spec.phi))
    return float(spec.a * (float(np.dot(x, xp)) + spec.b))


def cross_cov(spec: KernelSpec, points, x0):
    """Vector Sigma(x^m, x0) of covariances against each training point."""
    return kernel_matrix(spec, points, np.atleast_2d(np.asarray(x0, dtype=float)))[:, 0]


def point_variance(spec: KernelSpec, X):
    """Sigma(x, x) for each row of X."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if spec.stationary:
        return np.full(X.shape[0], spec.tau2)
    return spec.a * (np.sum(X * X, axis=1) + spec.b)


@dataclass(frozen=True, eq=False)
class GramMatrix:
    """Symmetric covariance matrix over the training points, plus the jitter added."""

    entries: np.ndarray
    jitter: float

    def __post_init__(self):
        self.entries.setflags(write=False)

    @property
    def m(self):
        return self.entries.shape[0]

    def cholesky(self):
        """Lower Cholesky factor; IllConditionedError names the smallest pivot."""
        try:
            return np.linalg.cholesky(self.entries)
        except np.linalg.LinAlgError:
            pivot = float(np.min(np.linalg.eigvalsh(self.entries)))
            raise IllConditionedError(
                f"Gram matrix is not positive definite after jitter {self.jitter:g}; "
                f"smallest pivot {pivot:.6g}",
                smallest_pivot=pivot,
            ) from None


def gram(spec: KernelSpec, points, jitter_rel: float = DEFAULT_JITTER_REL) -> GramMatrix:
    """Gram matrix over the points with jitter_rel * diag-scale added to the diagonal."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] == 0:
        raise ConfigurationError("gram needs a non-empty point set")
    if jitter_rel < 0:
        raise ConfigurationError("jitter_rel must be nonnegative")
    K = kernel_matrix(spec, pts, pts)
    K = 0.5 * (K + K.T)  # kill asymmetry from the BLAS product
    jitter = jitter_rel * spec.diag_scale(pts)
    if jitter > 0:
        K[np.diag_indices_from(K)] += jitter
    return GramMatrix(entries=K, jitter=float(jitter))
