import numpy as np
import pytest

import covkrig as ck


@pytest.fixture
def uniform_1d():
    space = ck.CovariateSpace.box([1.0], [10.0])
    return ck.SamplingDistribution(kind="uniform", space=space)


def stream(*path, seed=20230415):
    return ck.RngStream(seed, path)


def make_sk(
    points,
    means,
    kernel=None,
    noise_var=1e-8,
    n=1,
    regressors="constant",
):
    """Build a FittedSK directly from a known kernel and known noise."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if kernel is None:
        kernel = ck.KernelSpec(family="sqexp", tau2=1.0, phi=1.0)
    noise = ck.known_noise(noise_var, n, m=points.shape[0])
    return ck.build_sk(kernel, ck.RegressorSpec(regressors), points, np.asarray(means, float), noise)


def gp_draw(kernel, points, rng):
    """One sample path of the zero-mean GP with the given kernel at the points."""
    from covkrig.kernels import gram

    K = gram(kernel, points, jitter_rel=1e-10).entries
    L = np.linalg.cholesky(K)
    return L @ rng.standard_normal(points.shape[0])
