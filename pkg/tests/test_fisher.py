import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import integrate, stats

from probsens import fisher as fm
from probsens.dist import DeltaApprox, Gaussian, InputModel
from probsens.eig import build_r, second_moment
from probsens.errors import ConfigError, EstimationError
from probsens.estimator import run_batch
from probsens.fisher import KdeConfig, density_gradient, fisher_matrix, kl_quadratic
from probsens.model import ModelSpec, identity


def batch(n=4000, seed=0, d=1, mu=0.0, sigma=1.0):
    im = InputModel([Gaussian(f"x{i}", mu, sigma) for i in range(d)])
    return run_batch(im, identity(d), n, seed)


def naive_density(y, scores, h, pts):
    """Dense product-kernel sums, no chunking or clipping."""
    z = (pts[:, None, :] - y[None, :, :]) / h
    K = np.exp(-0.5 * (z**2).sum(axis=2)) / (np.prod(h) * (2 * math.pi) ** (y.shape[1] / 2))
    return K.mean(axis=1), K @ scores / y.shape[0]


@pytest.mark.parametrize("d", [1, 2])
def test_kernel_sums_match_naive(d, monkeypatch):
    b = batch(600, 1, d)
    monkeypatch.setattr(fm, "_CHUNK_ELEMENTS", 1000)  # force many chunks
    p, dp, h = density_gradient(b, KdeConfig())
    p_ref, dp_ref = naive_density(b.outputs, b.scores, h, b.outputs)
    assert_allclose(p, p_ref, rtol=1e-12)
    assert_allclose(dp, dp_ref, rtol=1e-10, atol=1e-14)


def test_silverman_rule_1d():
    y = np.random.default_rng(0).normal(size=1000)
    sd = y.std(ddof=1)
    iqr = np.subtract(*np.percentile(y, [75, 25])) / 1.34
    assert fm.silverman_bandwidth(y)[0] == pytest.approx(0.9 * min(sd, iqr) * 1000 ** -0.2)


def test_zero_variance_output_is_rejected():
    im = InputModel([Gaussian("x", 0, 1)])
    const = ModelSpec("const", 1, ("y",), lambda x, _: np.ones_like(x))
    with pytest.raises(EstimationError, match="DeltaApprox"):
        fisher_matrix(run_batch(im, const, 200, 0))


def test_density_integrates_to_one():
    b = batch(2000, 3)
    grid = np.linspace(-7, 7, 2001)[:, None]
    p, dp, _ = density_gradient(b, KdeConfig(), grid)
    assert integrate.trapezoid(p, grid[:, 0]) == pytest.approx(1.0, abs=1e-6)
    # each kernel integrates to one, so the gradient integrates to the mean score
    assert_allclose(integrate.trapezoid(dp, grid[:, 0], axis=0), b.scores.mean(axis=0), atol=1e-6)


def test_leave_one_out_drops_self_term():
    b = batch(300, 4)
    p, dp, h = density_gradient(b, KdeConfig())
    q, dq, _ = density_gradient(b, KdeConfig(leave_one_out=True))
    self_k = 1.0 / (h[0] * math.sqrt(2 * math.pi))
    assert_allclose(q, (p * 300 - self_k) / 299, rtol=1e-10)
    assert_allclose(dq, (dp * 300 - self_k * b.scores) / 299, rtol=1e-8, atol=1e-12)


def test_fisher_gaussian_identity_oracle():
    # closed-form Fisher information of N(mu, sigma^2) in (mu, sigma): diag(1, 2) / sigma^2
    F = fisher_matrix(batch(20000, 5, sigma=2.0))
    assert_allclose(F.matrix, np.diag([1.0, 2.0]) / 4.0, rtol=0.1, atol=0.025)
    assert F.n_used + F.n_excluded == 20000


def test_fisher_psd_and_symmetric():
    F = fisher_matrix(batch(3000, 6, d=2))
    assert_allclose(F.matrix, F.matrix.T, atol=0)
    assert np.all(F.eigenvalues >= 0)
    assert np.all(np.diff(F.eigenvalues) <= 0)


def test_density_utilities_reproduce_fisher():
    b = batch(1500, 7)
    cfg = KdeConfig()
    ests = fm.density_utilities(b, cfg)
    rs = [build_r([e]) for e in ests]
    assert_allclose(second_moment(rs), fisher_matrix(b, cfg).matrix, rtol=1e-10)


def test_floor_excludes_low_density_samples():
    b = batch(2000, 8)
    F = fisher_matrix(b, KdeConfig(floor=0.05))
    assert F.n_excluded > 0


def test_fixed_bandwidth_and_output_selection():
    b = batch(500, 9, d=2)
    p, _, h = density_gradient(b, KdeConfig(bandwidth=(0.3,), outputs=("y1",)))
    assert_allclose(h, [0.3])
    with pytest.raises(ConfigError):
        density_gradient(b, KdeConfig(bandwidth=(0.3,)))
    with pytest.raises(ConfigError):
        KdeConfig(bandwidth=(-1.0,))
    with pytest.raises(ConfigError):
        KdeConfig(bandwidth="scott")
    with pytest.raises(ConfigError):
        density_gradient(b, KdeConfig(outputs=("zz",)))


def test_kl_quadratic_third_order_gap_depends_on_direction():
    # exact Fisher information; the two KL directions differ at third order
    def kl(m1, s1, m2, s2):
        return math.log(s2 / s1) + (s1**2 + (m1 - m2) ** 2) / (2 * s2**2) - 0.5

    F = np.diag([1.0, 2.0])
    assert kl_quadratic(F, [0.1, 0.0]) == pytest.approx(kl(0, 1, 0.1, 1), rel=1e-12)
    quad = kl_quadratic(F, [0.0, 0.05])
    assert quad == pytest.approx(0.0025)
    assert abs(quad - kl(0, 1.05, 0, 1)) / kl(0, 1.05, 0, 1) < 0.03
    assert abs(quad - kl(0, 1, 0, 1.05)) / kl(0, 1, 0, 1.05) > 0.05
    both = kl_quadratic(F, [0.1, 0.05])
    assert abs(both - kl(0.1, 1.05, 0, 1)) / kl(0.1, 1.05, 0, 1) < 0.01


def test_kl_quadratic_against_exact_gaussian_kl():
    F = np.diag([1.0, 2.0])
    d_mu, d_s = 0.01, 0.005
    exact = math.log(1 / (1 + d_s)) + ((1 + d_s) ** 2 + d_mu**2) / 2 - 0.5
    assert kl_quadratic(F, [d_mu, d_s]) == pytest.approx(exact, rel=0.02)
    with pytest.raises(ConfigError):
        kl_quadratic(F, [1.0])


def test_delta_inputs_give_finite_fisher():
    im = InputModel([DeltaApprox("a", 2.0, 1e-4)])
    F = fisher_matrix(run_batch(im, identity(1), 5000, 0))
    assert np.all(np.isfinite(F.matrix))
    # std of the mean parameter: (1/sigma^2) with sigma = 2e-4
    assert F.matrix[0, 0] == pytest.approx(1 / (2e-4) ** 2, rel=0.1)


@settings(max_examples=10, deadline=None)
@given(sigma=st.floats(0.05, 50), seed=st.integers(0, 10**6))
def test_fisher_scales_with_inverse_variance(sigma, seed):
    F = fisher_matrix(batch(3000, seed, sigma=sigma)).matrix * sigma**2
    assert_allclose(np.diag(F), [1.0, 2.0], rtol=0.3)
