import math

import numpy as np
import pytest

import covkrig as ck
from covkrig.errors import ConfigurationError, IllConditionedError
from covkrig.kernels import STATIONARY_FAMILIES, point_variance

RNG = np.random.default_rng(11)


def spec_for(family, tau2=1.0, phi=1.0):
    if family == "finite_rank_linear":
        return ck.KernelSpec(family=family, a=1.0, b=1.0)
    return ck.KernelSpec(family=family, tau2=tau2, phi=phi)


def test_stationary_self_covariance_is_tau2():
    for family in STATIONARY_FAMILIES:
        spec = spec_for(family, tau2=2.0, phi=0.7)
        for _ in range(5):
            x = RNG.uniform(-3, 3, size=3)
            assert ck.kernel_eval(spec, x, x) == pytest.approx(2.0, abs=1e-14)


def test_exp_kernel_closed_form_value():
    # exp family at tau2=1, phi=0.5, distance 2 -> exp(-1)
    spec = ck.KernelSpec(family="exp", tau2=1.0, phi=0.5)
    assert ck.kernel_eval(spec, [0.0], [2.0]) == pytest.approx(math.exp(-1.0), rel=1e-12)


def test_finite_rank_eval():
    spec = ck.KernelSpec(family="finite_rank_linear", a=2.0, b=3.0)
    assert ck.kernel_eval(spec, [1.0], [2.0]) == pytest.approx(10.0)


def test_matern_closed_forms_single_distance():
    r, phi = 0.8, 1.3
    u5, u3 = math.sqrt(5) * phi * r, math.sqrt(3) * phi * r
    m52 = (1 + u5 + u5 * u5 / 3) * math.exp(-u5)
    m32 = (1 + u3) * math.exp(-u3)
    assert ck.kernel_eval(spec_for("matern52", phi=phi), [0.0], [r]) == pytest.approx(m52, rel=1e-13)
    assert ck.kernel_eval(spec_for("matern32", phi=phi), [0.0], [r]) == pytest.approx(m32, rel=1e-13)
    assert ck.kernel_eval(spec_for("sqexp", phi=phi), [0.0], [r]) == pytest.approx(
        math.exp(-phi * r * r), rel=1e-13
    )


def test_gram_single_point():
    spec = spec_for("matern52", tau2=3.0)
    G = ck.gram(spec, [[2.0]], jitter_rel=1e-8)
    assert G.entries.shape == (1, 1)
    assert G.entries[0, 0] == pytest.approx(3.0 + 1e-8 * 3.0)


def test_gram_duplicate_point_needs_jitter():
    pts = [[1.0], [1.0]]
    spec = spec_for("sqexp")
    with pytest.raises(IllConditionedError) as err:
        ck.gram(spec, pts, jitter_rel=0.0).cholesky()
    assert "pivot" in str(err.value)
    assert ck.gram(spec, pts, jitter_rel=1e-8).cholesky().shape == (2, 2)


def test_gram_psd_against_dense_eigendecomposition():
    pts = RNG.uniform(1, 10, size=(50, 1))
    spec = spec_for("matern32", tau2=2.0)
    K = ck.gram(spec, pts, jitter_rel=0.0).entries
    assert np.array_equal(K, K.T)
    assert np.min(np.linalg.eigvalsh(K)) >= -1e-10 * 2.0


def test_cross_cov_at_training_point_and_far_away():
    pts = RNG.uniform(1, 10, size=(8, 2))
    spec = spec_for("matern52", tau2=1.7)
    v = ck.cross_cov(spec, pts, pts[3])
    assert v[3] == pytest.approx(1.7)
    far = pts[0] + 200.0
    v = ck.cross_cov(spec_for("sqexp", phi=1.0), pts, far)
    assert np.all(v < 1.0 * math.exp(-100))


def test_cross_cov_finite_rank():
    spec = ck.KernelSpec(family="finite_rank_linear", a=1.0, b=1.0)
    v = ck.cross_cov(spec, [[1.0], [2.0]], [0.0])
    assert np.allclose(v, [1.0, 1.0])


def test_invalid_specs_rejected():
    with pytest.raises(ConfigurationError):
        ck.KernelSpec(family="sqexp", tau2=-1.0, phi=1.0)
    with pytest.raises(ConfigurationError):
        ck.KernelSpec(family="finite_rank_linear", a=1.0)
    with pytest.raises(ConfigurationError):
        ck.KernelSpec(family="sqexp", tau2=1.0, phi=1.0, a=2.0)
    with pytest.raises(ConfigurationError):
        ck.KernelSpec(family="witch_hat", tau2=1.0, phi=1.0)


def test_nonfinite_input_raises():
    with pytest.raises(ck.NumericError):
        ck.kernel_eval(spec_for("sqexp"), [np.nan], [0.0])


@pytest.mark.property
def test_symmetry_exact():
    for family in ck.KERNEL_FAMILIES:
        spec = spec_for(family)
        for _ in range(20):
            x, y = RNG.uniform(-5, 5, size=(2, 4))
            assert ck.kernel_eval(spec, x, y) == ck.kernel_eval(spec, y, x)


@pytest.mark.property
def test_smoothness_ordering_on_grid():
    # pointwise ordering by sample-path smoothness; at phi = 2 the squared
    # exponential dominates the whole Matern ladder on r in (0, 0.5]
    tau2, phi = 1.0, 2.0
    r = np.linspace(0.005, 0.5, 200)
    vals = {
        family: np.array([ck.kernel_eval(spec_for(family, tau2, phi), [0.0], [ri]) for ri in r])
        for family in STATIONARY_FAMILIES
    }
    assert np.all(vals["sqexp"] >= vals["matern52"])
    assert np.all(vals["matern52"] >= vals["matern32"])
    assert np.all(vals["matern32"] >= vals["exp"])


@pytest.mark.property
def test_jittered_gram_factorizes_for_100_points():
    for family in ck.KERNEL_FAMILIES:
        pts = RNG.uniform(1, 10, size=(100, 2))
        spec = spec_for(family)
        L = ck.gram(spec, pts).cholesky()
        K = ck.gram(spec, pts).entries
        assert np.allclose(L @ L.T, K, rtol=1e-8, atol=1e-8 * spec.diag_scale(pts))


def test_point_variance_matches_eval():
    pts = RNG.uniform(-2, 2, size=(6, 3))
    for family in ck.KERNEL_FAMILIES:
        spec = spec_for(family)
        pv = point_variance(spec, pts)
        for j in range(6):
            assert pv[j] == pytest.approx(ck.kernel_eval(spec, pts[j], pts[j]), rel=1e-12)
