"""Kernel eigenvalues under the sampling distribution, and effective dimension.

The squared-exponential kernel in one dimension under Gaussian sampling
N(0, (4*a1)^(-1)) has a closed-form spectrum: with

    a2 = sqrt(a1^2 + 2*a1*phi),   a3 = phi / (a1 + a2 + phi),

the eigenvalues are mu_l = sqrt(2*a1 / (a1 + a2 + phi)) * a3**l for
l = 0, 1, 2, ...  (a geometric sequence whose full sum equals the unit
kernel variance).  Everything else goes through a Nystrom approximation:
eigenvalues of (1/n) * Gram over n i.i.d. nodes estimate the operator
spectrum, and the trace identity E[Sigma(X, X)] = sum of eigenvalues pins
the tail mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericError
from .kernels import KernelSpec, gram, point_variance
from .sampling import RngStream, SamplingDistribution, draw_covariates

CLOSED_FORM_SE1D = "closed_form_se1d"
FINITE_RANK = "finite_rank"
NYSTROM = "nystrom"

DEFAULT_NYSTROM_NODES = 500


@dataclass(frozen=True, eq=False)
class EigenSequence:
    """Leading eigenvalues mu_1 >= mu_2 >= ... >= 0 plus a bound on the dropped tail."""

    source: str
    values: np.ndarray
    tail_bound: float

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size == 0:
            raise ConfigurationError("eigenvalues must form a non-empty 1-d sequence")
        if np.any(vals < -1e-15):
            raise ConfigurationError("eigenvalues must be nonnegative")
        vals = np.maximum(vals, 0.0)
        if np.any(np.diff(vals) > 1e-12 * max(vals[0], 1.0)):
            raise ConfigurationError("eigenvalues must be nonincreasing")
        vals = np.minimum.accumulate(vals)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if self.tail_bound < 0:
            object.__setattr__(self, "tail_bound", 0.0)

    @property
    def truncation(self):
        return self.values.size

    def trace(self):
        return float(np.sum(self.values) + self.tail_bound)

    def trace_tail(self, zeta: int):
        """Upper bound on sum_{l > zeta} mu_l."""
        if zeta < 0:
            raise ConfigurationError("zeta must be nonnegative")
        kept = self.values[min(zeta, self.truncation) :]
        return float(np.sum(kept) + self.tail_bound)


def se_gaussian_eigenvalues(phi: float, a1: float, L: int) -> EigenSequence:
    """Closed-form spectrum of the 1-d unit-variance SE kernel under N(0, (4*a1)^(-1)).

    Returns the first L terms of the geometric sequence (starting at exponent
    zero, so that the full sum equals the kernel variance) and the exact
    geometric remainder as the tail bound.
    """
    if phi <= 0 or a1 <= 0:
        raise ConfigurationError("phi and a1 must be positive")
    if L < 1:
        raise ConfigurationError("L must be >= 1")
    a2 = math.sqrt(a1 * a1 + 2.0 * a1 * phi)
    a3 = phi / (a1 + a2 + phi)
    lead = math.sqrt(2.0 * a1 / (a1 + a2 + phi))
    values = lead * a3 ** np.arange(L)
    tail = lead * a3**L / (1.0 - a3)
    return EigenSequence(source=CLOSED_FORM_SE1D, values=values, tail_bound=tail)


def nystrom_eigenvalues(
    spec: KernelSpec,
    dist: SamplingDistribution,
    n_nodes: int = DEFAULT_NYSTROM_NODES,
    L: int = 50,
    stream: RngStream | None = None,
) -> EigenSequence:
    """Nystrom estimate of the leading kernel eigenvalues under dist.

    values = first L eigenvalues of (1/n_nodes) * Gram over n_nodes i.i.d.
    nodes; tail_bound = max(0, mean kernel diagonal - sum of values), which
    is exact in expectation by the trace identity.
    """
    if L > n_nodes:
        raise ConfigurationError("L must not exceed n_nodes")
    if stream is None:
        stream = RngStream(master_seed=0, path=(0, 5, 0, 0, 0))
    nodes = draw_covariates(dist, n_nodes, stream)
    K = gram(spec, nodes, jitter_rel=0.0).entries
    try:
        eigs = np.linalg.eigvalsh(K)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"Nystrom eigendecomposition failed: {exc}") from exc
    eigs = np.maximum(eigs[::-1], 0.0) / n_nodes
    values = eigs[:L]
    mean_diag = float(np.mean(point_variance(spec, nodes)))
    tail = max(0.0, mean_diag - float(np.sum(values)))
    return EigenSequence(source=NYSTROM, values=values, tail_bound=tail)


def finite_rank_eigenvalues(a: float, b: float, second_moment) -> EigenSequence:
    """Exact spectrum of the kernel a*(x.x' + b): a times the eigenvalues of
    E[x~ x~^T], where x~ = (sqrt(b), x) and second_moment = E[x x^T] augmented
    is supplied as the full (d+1) x (d+1) moment matrix of x~."""
    M = np.atleast_2d(np.asarray(second_moment, dtype=float))
    vals = np.linalg.eigvalsh(M)[::-1]
    return EigenSequence(source=FINITE_RANK, values=a * np.maximum(vals, 0.0), tail_bound=0.0)


def effective_dimension(eigs: EigenSequence, a: float) -> float:
    """gamma(a) = sum_l mu_l / (mu_l + a), truncated sum plus tail_bound / a.

    The tail correction uses mu/(mu+a) <= mu/a, so the result upper-bounds the
    exact effective dimension and is strictly decreasing in a.
    """
    if a <= 0:
        raise ConfigurationError("effective dimension needs a > 0")
    vals = eigs.values
    return float(np.sum(vals / (vals + a)) + eigs.tail_bound / a)
