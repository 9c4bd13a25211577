import math

import numpy as np
import pytest

import covkrig as ck
from covkrig.errors import ConfigurationError

from conftest import stream


def gaussian_dist(a1):
    # the closed form holds when covariates follow N(0, (4 a1)^(-1))
    sd = math.sqrt(1.0 / (4.0 * a1))
    return ck.SamplingDistribution(
        kind="normal", space=ck.CovariateSpace.unbounded(1), mean=[0.0], stdev=[sd]
    )


def closed_form_constants(a1, phi):
    a2 = math.sqrt(a1 * a1 + 2 * a1 * phi)
    a3 = phi / (a1 + a2 + phi)
    lead = math.sqrt(2 * a1 / (a1 + a2 + phi))
    return a2, a3, lead


def test_se_eigenvalues_exact_geometric_decay():
    seq = ck.se_gaussian_eigenvalues(phi=1.0, a1=1.0, L=21)
    _, a3, _ = closed_form_constants(1.0, 1.0)
    ratios = seq.values[:-1] / seq.values[1:]
    assert np.allclose(ratios, 1.0 / a3, rtol=1e-12)


def test_se_eigenvalues_sum_matches_geometric_series():
    a1, phi, L = 1.0, 1.0, 50
    _, a3, lead = closed_form_constants(a1, phi)
    seq = ck.se_gaussian_eigenvalues(phi=phi, a1=a1, L=L)
    total = float(np.sum(seq.values)) + seq.tail_bound
    assert total == pytest.approx(lead / (1.0 - a3), abs=1e-6)
    # the full geometric sum telescopes to the unit kernel variance
    assert total == pytest.approx(1.0, abs=1e-12)


def test_se_eigenvalues_positive_strictly_decreasing():
    seq = ck.se_gaussian_eigenvalues(phi=0.5, a1=2.0, L=30)
    assert np.all(seq.values > 0)
    assert np.all(np.diff(seq.values) < 0)


def test_nystrom_trace_identity_stationary():
    spec = ck.KernelSpec(family="sqexp", tau2=1.0, phi=1.0)
    seq = ck.nystrom_eigenvalues(spec, gaussian_dist(1.0), n_nodes=500, L=50, stream=stream(0, 5, 0, 0, 0))
    assert float(np.sum(seq.values)) + seq.tail_bound == pytest.approx(1.0, abs=1e-8)


def test_nystrom_finite_rank_has_rank_two():
    spec = ck.KernelSpec(family="finite_rank_linear", a=1.0, b=1.0)
    space = ck.CovariateSpace.box([1.0], [10.0])
    dist = ck.SamplingDistribution(kind="uniform", space=space)
    seq = ck.nystrom_eigenvalues(spec, dist, n_nodes=400, L=10, stream=stream(0, 5, 0, 0, 0))
    above = np.sum(seq.values > 1e-8 * seq.values[0])
    assert above <= 2


def test_nystrom_matches_closed_form_within_5pct():
    # the 5th eigenvalue is 0.0038, so its single-draw estimate carries
    # Monte Carlo noise near the tolerance; node count and seed are pinned
    spec = ck.KernelSpec(family="sqexp", tau2=1.0, phi=1.0)
    nys = ck.nystrom_eigenvalues(
        spec, gaussian_dist(1.0), n_nodes=2500, L=10, stream=stream(0, 5, 0, 0, 0, seed=5)
    )
    exact = ck.se_gaussian_eigenvalues(phi=1.0, a1=1.0, L=10)
    rel = np.abs(nys.values[:5] - exact.values[:5]) / exact.values[:5]
    assert np.all(rel < 0.05)


def test_effective_dimension_examples():
    one = ck.EigenSequence(source="finite_rank", values=np.array([1.0]), tail_bound=0.0)
    assert ck.effective_dimension(one, 1.0) == pytest.approx(0.5)

    two = ck.EigenSequence(source="finite_rank", values=np.array([2.0, 1.0]), tail_bound=0.0)
    assert ck.effective_dimension(two, 0.5) == pytest.approx(2.0 / 2.5 + 1.0 / 1.5)

    # a -> infinity sends gamma to zero
    assert ck.effective_dimension(one, 1e6) < 2e-6


def test_finite_rank_eigenvalues_exact():
    # kernel a(x.x' + b) under any distribution: a * eigvals(E[x~ x~'])
    a, b = 2.0, 1.0
    second = np.array([[b, 0.0], [0.0, 1.0 / 3.0]])  # x ~ U[-1, 1]
    seq = ck.finite_rank_eigenvalues(a, b, second)
    assert np.allclose(seq.values, [2.0, 2.0 / 3.0])
    assert seq.tail_bound == 0.0


def test_bad_inputs():
    with pytest.raises(ConfigurationError):
        ck.se_gaussian_eigenvalues(phi=0.0, a1=1.0, L=5)
    spec = ck.KernelSpec(family="sqexp", tau2=1.0, phi=1.0)
    with pytest.raises(ConfigurationError):
        ck.nystrom_eigenvalues(spec, gaussian_dist(1.0), n_nodes=10, L=20)
    one = ck.EigenSequence(source="finite_rank", values=np.array([1.0]), tail_bound=0.0)
    with pytest.raises(ConfigurationError):
        ck.effective_dimension(one, 0.0)


@pytest.mark.property
def test_gamma_strictly_decreasing_and_bounded():
    seq = ck.se_gaussian_eigenvalues(phi=1.0, a1=1.0, L=40)
    grid = np.logspace(-6, 2, 30)
    vals = np.array([ck.effective_dimension(seq, a) for a in grid])
    assert np.all(np.diff(vals) < 0)
    for a, g in zip(grid, vals):
        assert g <= min(seq.truncation + seq.tail_bound / a, seq.trace() / a) + 1e-12


@pytest.mark.property
def test_nystrom_trace_within_3_sigma_of_diagonal_mean():
    # nonstationary case: diagonal varies, so the trace estimate carries
    # Monte Carlo error bounded by 3 standard errors of the diagonal mean
    a, b = 1.5, 2.0
    spec = ck.KernelSpec(family="finite_rank_linear", a=a, b=b)
    space = ck.CovariateSpace.box([1.0], [10.0])
    dist = ck.SamplingDistribution(kind="uniform", space=space)
    n_nodes = 2000
    seq = ck.nystrom_eigenvalues(spec, dist, n_nodes=n_nodes, L=5, stream=stream(0, 5, 0, 0, 0))
    # E[a (X^2 + b)] for X ~ U[1, 10]; Var of a (X^2 + b) via 4th moments
    ex2 = (10.0**3 - 1.0) / (9.0 * 3.0)
    ex4 = (10.0**5 - 1.0) / (9.0 * 5.0)
    mean_diag = a * (ex2 + b)
    sd_diag = a * math.sqrt(ex4 - ex2**2)
    trace_est = float(np.sum(seq.values)) + seq.tail_bound
    assert abs(trace_est - mean_diag) <= 3.0 * sd_diag / math.sqrt(n_nodes)
