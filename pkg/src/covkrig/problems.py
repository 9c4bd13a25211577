"""Benchmark problems: De Jong and Griewank families, and an M/M/1 queue.

Each problem exposes k designs, the exact mean response at any covariate,
and noisy sampling.  Benchmarks add independent N(0, 2) noise to the exact
mean.  The M/M/1 design i is a service rate lambda_i; one replication
simulates a queue with Poisson(x) arrivals and exp(lambda) service through
the Lindley recursion, averages the post-warmup sojourn times, adds the
service cost c_u * lambda, and caps the result at the cost bound U.  The
exact mean total cost is min(1/(lambda - x) + c_u*lambda, U) for x < lambda
and U otherwise, minimized over continuous lambda at lambda* = x + 1/sqrt(c_u).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError
from .sampling import CovariateSpace, RngStream

DEJONG = "dejong"
GRIEWANK = "griewank"
MM1 = "mm1"
PROBLEM_KINDS = (DEJONG, GRIEWANK, MM1)

BENCHMARK_NOISE_SD = math.sqrt(2.0)

MM1_CUSTOMERS = 1000
MM1_WARMUP = 100


@dataclass(frozen=True)
class ProblemSpec:
    """A benchmark family with its design grid and simulation parameters."""

    kind: str
    dim: int
    designs: tuple  # rows z^i for benchmarks; scalars lambda_i for mm1
    noise_sd: float = BENCHMARK_NOISE_SD
    cu: float = 0.1
    cost_cap: float = 2.5
    customers: int = MM1_CUSTOMERS
    warmup: int = MM1_WARMUP

    def __post_init__(self):
        if self.kind not in PROBLEM_KINDS:
            raise ConfigurationError(f"unknown problem kind {self.kind!r}")
        if len(self.designs) == 0:
            raise ConfigurationError("designs must be non-empty")
        if self.kind == MM1 and self.dim != 1:
            raise ConfigurationError("the M/M/1 problem is one dimensional")
        if self.kind != MM1:
            designs = tuple(tuple(float(v) for v in np.atleast_1d(z)) for z in self.designs)
            if any(len(z) != self.dim for z in designs):
                raise ConfigurationError("every design must have the problem dimension")
            object.__setattr__(self, "designs", designs)
        else:
            object.__setattr__(self, "designs", tuple(float(v) for v in self.designs))

    @property
    def k(self):
        return len(self.designs)

    def design_array(self):
        return np.asarray(self.designs, dtype=float)


class OptimalDesign(NamedTuple):
    index: int
    value: float
    lambda_star: float | None


def dejong(dim: int, n_designs: int = 10) -> ProblemSpec:
    """De Jong family: mean sum_l (x_l - z_l)^2, designs z^i = (i, ..., i)."""
    designs = tuple(tuple([float(i)] * dim) for i in range(1, n_designs + 1))
    return ProblemSpec(kind=DEJONG, dim=dim, designs=designs)


def griewank(dim: int, n_designs: int = 10) -> ProblemSpec:
    """Griewank family: oscillatory mean with the same design grid as De Jong."""
    designs = tuple(tuple([float(i)] * dim) for i in range(1, n_designs + 1))
    return ProblemSpec(kind=GRIEWANK, dim=dim, designs=designs)


def mm1(n_designs: int = 10, cu: float = 0.1, cost_cap: float = 2.5) -> ProblemSpec:
    """M/M/1 total-cost problem with service rates lambda_i = 6 + 0.3 i."""
    lambdas = tuple(6.0 + 0.3 * i for i in range(1, n_designs + 1))
    return ProblemSpec(kind=MM1, dim=1, designs=lambdas, cu=cu, cost_cap=cost_cap)


def default_space(spec: ProblemSpec) -> CovariateSpace:
    """The covariate box each problem is studied on."""
    if spec.kind == MM1:
        return CovariateSpace.box([0.5], [4.5])
    if spec.dim == 1:
        return CovariateSpace.box([1.0], [10.0])
    return CovariateSpace.box([1.0] * spec.dim, [4.0] * spec.dim)


def _benchmark_mean(spec: ProblemSpec, z, X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    diff = X - np.asarray(z)
    if spec.kind == DEJONG:
        return np.sum(diff * diff, axis=1)
    scale = np.sqrt(np.arange(1, spec.dim + 1, dtype=float))
    return np.sum(diff * diff, axis=1) / 4000.0 - np.prod(np.cos(diff / scale), axis=1) + 1.0


def _mm1_mean(spec: ProblemSpec, lam, X):
    x = np.atleast_2d(np.asarray(X, dtype=float))[:, 0]
    out = np.full(x.shape, spec.cost_cap)
    stable = x < lam
    cost = 1.0 / (lam - x[stable]) + spec.cu * lam
    out[stable] = np.minimum(cost, spec.cost_cap)
    return out


def true_mean(spec: ProblemSpec, design_index: int, x) -> float:
    """Exact mean response of one design at a single covariate point."""
    return float(true_means(spec, np.atleast_2d(np.asarray(x, dtype=float)))[0, design_index])


def true_means(spec: ProblemSpec, X):
    """Exact means of every design at each row of X; shape (T, k)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    cols = []
    for z in spec.designs:
        if spec.kind == MM1:
            cols.append(_mm1_mean(spec, z, X))
        else:
            cols.append(_benchmark_mean(spec, z, X))
    return np.column_stack(cols)


def _mm1_replications(rng, x, lam, n, spec: ProblemSpec):
    if x >= lam:
        return np.full(n, spec.cost_cap)
    # Lindley recursion on the waiting times, vectorized across replications
    inter = rng.exponential(1.0 / x, size=(n, spec.customers))
    serv = rng.exponential(1.0 / lam, size=(n, spec.customers))
    wait = np.zeros(n)
    total = np.zeros(n)
    kept = 0
    for j in range(spec.customers):
        if j > 0:
            wait = np.maximum(0.0, wait + serv[:, j - 1] - inter[:, j])
        if j >= spec.warmup:
            total += wait + serv[:, j]
            kept += 1
    cost = total / kept + spec.cu * lam
    return np.minimum(cost, spec.cost_cap)


def sample(spec: ProblemSpec, design_index: int, x, n: int, stream: RngStream):
    """n noisy replications of one design at one covariate point."""
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    rng = stream.generator()
    if spec.kind == MM1:
        xval = float(np.atleast_1d(np.asarray(x, dtype=float))[0])
        lam = spec.designs[design_index]
        if xval <= 0 or lam <= 0:
            raise ConfigurationError("arrival and service rates must be positive")
        return _mm1_replications(rng, xval, lam, n, spec)
    mean = true_mean(spec, design_index, x)
    return mean + rng.normal(0.0, spec.noise_sd, size=n)


def optimal_design(spec: ProblemSpec, x) -> OptimalDesign:
    """Best design at x (argmin of the exact means; ties go to the lowest index).

    For the M/M/1 problem the continuous minimizer lambda* = x + 1/sqrt(c_u)
    is reported alongside for diagnostics.
    """
    means = true_means(spec, np.atleast_2d(np.asarray(x, dtype=float)))[0]
    idx = int(np.argmin(means))
    lam_star = None
    if spec.kind == MM1:
        xval = float(np.atleast_1d(np.asarray(x, dtype=float))[0])
        lam_star = xval + 1.0 / math.sqrt(spec.cu)
    return OptimalDesign(index=idx, value=float(means[idx]), lambda_star=lam_star)
