import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, optimize, stats
from scipy.special import ndtr

from detcal.calibration import (CovarianceEstimation, GPBeta, GPCauchy, GPNormal, IsotonicRecalibration,
                                VarianceScaling, model_from_dict)
from detcal.calibration import _gp
from detcal.calibration.distributions import (GaussianDistribution, NonParametricDistribution,
                                              gaussian_support, moment_match)
from detcal.calibration.regression import beta_link_terms, isotonic_knots, ldl_batch, pav
from detcal.synthetic import DetectorDistortion, generate_regression_arrays


def X_of(mean, var):
    return np.hstack([mean, var])


# ------------------------------------------------------------------ PAV and isotonic
@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=50))
def test_pav_matches_sklearn(values):
    from sklearn.isotonic import IsotonicRegression

    y = np.array(values)
    ref = IsotonicRegression().fit_transform(np.arange(len(y)), y)
    np.testing.assert_allclose(pav(y), ref, atol=1e-9)
    assert np.all(np.diff(pav(y)) >= -1e-12)


def test_isotonic_knots_reproduce_step_fit():
    x = np.array([0.1, 0.2, 0.3, 0.4])
    kx, ky = isotonic_knots(x, [0.0, 1.0, 0.5, 1.0])
    np.testing.assert_allclose(kx, [0.1, 0.2, 0.3, 0.4])
    np.testing.assert_allclose(ky, [0.0, 0.75, 0.75, 1.0])


def test_isotonic_is_near_identity_on_calibrated_data():
    mean, var, y = generate_regression_arrays(DetectorDistortion(), 5000, seed=3)
    model = IsotonicRecalibration().fit(X_of(mean, var), y)
    u = np.linspace(0.01, 0.99, 50)
    for d in range(4):
        assert np.max(np.abs(model.calibrate_cdf(u, d) - u)) < 0.03


def test_isotonic_fixes_inflated_variance(inflated_regression):
    (m, v, y), (mt, vt, yt) = inflated_regression
    model = IsotonicRecalibration().fit(X_of(m, v), y)
    for tau in (0.5, 0.9):
        lo, hi = model.interval(X_of(mt, vt), tau)
        picp = np.mean((yt >= lo) & (yt <= hi), axis=0)
        np.testing.assert_allclose(picp, tau, atol=0.03)
    clone = model_from_dict(model.to_dict())
    np.testing.assert_allclose(clone.quantile(X_of(mt[:5], vt[:5]), 0.7), model.quantile(X_of(mt[:5], vt[:5]), 0.7))


# ------------------------------------------------------------------ distributions
def test_nonparametric_gaussian_round_trip(rng):
    mean = rng.uniform(size=(20, 2))
    var = rng.uniform(0.5, 2.0, size=(20, 2)) * 1e-3
    support = gaussian_support(mean, var)
    dist = NonParametricDistribution.from_unnormalized(support, ndtr((support - mean[..., None]) / np.sqrt(var)[..., None]))
    assert np.all(dist.cdf_values[..., 0] == 0) and np.all(dist.cdf_values[..., -1] == 1)
    g = moment_match(dist)
    np.testing.assert_allclose(g.mean, mean, atol=1e-6)
    np.testing.assert_allclose(g.var, var, rtol=0.01)
    for tau in (0.1, 0.5, 0.95):
        q = dist.quantile(tau)
        np.testing.assert_allclose(dist.cdf(q), tau, atol=1e-9)
        np.testing.assert_allclose(q, stats.norm.ppf(tau, mean, np.sqrt(var)), atol=2e-3 * np.sqrt(var).max())
    ref = stats.norm.pdf(mean, mean, np.sqrt(var))
    np.testing.assert_allclose(dist.pdf(mean), ref, rtol=1e-3)


def test_nonparametric_validation():
    s = np.linspace(0, 1, 5)[None, None]
    with pytest.raises(ValueError):
        NonParametricDistribution(s, np.array([[[0, 0.5, 0.4, 0.9, 1.0]]]))
    flat = NonParametricDistribution.from_unnormalized(s, np.full_like(s, 0.3))
    np.testing.assert_allclose(flat.cdf_values[0, 0], np.linspace(0, 1, 5))
    with pytest.raises(ValueError):
        GaussianDistribution(np.zeros((1, 1)), np.zeros((1, 1)))


# ------------------------------------------------------------------ variance scaling
def test_variance_scaling_matches_numeric_optimum(inflated_regression):
    (m, v, y), _ = inflated_regression
    model = VarianceScaling().fit(X_of(m, v), y)
    for d in range(4):
        nll = lambda log_w: np.sum(np.log(np.exp(2 * log_w) * v[:, d]) + (y[:, d] - m[:, d]) ** 2
                                   / (np.exp(2 * log_w) * v[:, d]))
        res = optimize.minimize_scalar(nll, bounds=(-3, 3), method="bounded", options={"xatol": 1e-10})
        assert model.scale_[d] == pytest.approx(np.exp(res.x), abs=1e-4)
    np.testing.assert_allclose(1.0 / model.scale_, 2.0, atol=0.1)


# ------------------------------------------------------------------ GP machinery
def test_kernel_self_similarity_and_quadrature_oracle():
    theta = 0.3
    for s2 in (1e-4, 0.01, 0.5):
        k = _gp.embedding_kernel([[0.2]], [[s2]], [[0.2]], [[s2]], theta)[0, 0]
        assert k == pytest.approx(theta / np.sqrt(2 * s2 + theta ** 2), rel=1e-12)
    mi, vi, mj, vj = 0.1, 0.02, 0.5, 0.05
    # E over independent inputs of the RBF kernel, by 1-D quadrature over their difference
    sd = np.sqrt(vi + vj)
    ref, _ = integrate.quad(lambda d: stats.norm.pdf(d, mi - mj, sd) * np.exp(-d * d / (2 * theta ** 2)),
                            -10, 10, epsabs=1e-13)
    k = _gp.embedding_kernel([[mi]], [[vi]], [[mj]], [[vj]], theta)[0, 0]
    assert k == pytest.approx(ref, rel=1e-8)


def test_kernel_is_symmetric_psd(rng):
    m = rng.uniform(size=(40, 2))
    v = rng.uniform(1e-4, 1e-2, size=(40, 2))
    K = _gp.embedding_kernel(m, v, m, v, 0.2, chunk=7)
    np.testing.assert_allclose(K, K.T, atol=1e-15)
    assert np.linalg.eigvalsh(K).min() > -1e-10


def test_stable_cholesky_escalates_jitter():
    K = np.ones((5, 5))
    L, jitter = _gp.stable_cholesky(K)
    assert jitter >= 1e-6
    np.testing.assert_allclose(L @ L.T, K + jitter * np.eye(5), atol=1e-12)
    with pytest.raises(np.linalg.LinAlgError):
        _gp.stable_cholesky(-np.eye(3))


def test_low_rank_plus_diagonal_is_psd():
    C = np.array([[1.0, 0.6, 0.1], [0.6, 1.0, 0.2], [0.1, 0.2, 1.0]])
    B = _gp.low_rank_plus_diagonal(C)
    assert np.linalg.eigvalsh(B).min() > 0
    np.testing.assert_allclose(np.diag(B), np.maximum(1.0, np.diag(B)))


def fd_check(loss_fn, W, h=1e-6):
    _, G = loss_fn(W)
    num = np.zeros_like(W)
    for idx in np.ndindex(W.shape):
        e = np.zeros_like(W)
        e[idx] = h
        num[idx] = (loss_fn(W + e)[0] - loss_fn(W - e)[0]) / (2 * h)
    np.testing.assert_allclose(G, num, rtol=1e-5, atol=1e-6)


@pytest.mark.parametrize("cls", [GPNormal, GPCauchy, GPBeta])
def test_latent_loss_gradients(cls, rng):
    M, L = 12, 2
    resid = rng.normal(size=(M, L)) * 0.01
    var = rng.uniform(0.5, 2, size=(M, L)) * 1e-4
    model = cls()
    offset = 0.1 * rng.normal(size=(L, cls.n_latent))
    fd_check(model._make_loss(resid, var, offset), 0.2 * rng.normal(size=(M, L * cls.n_latent)))


def test_covariance_loss_gradient(rng):
    M, L = 10, 3
    model = CovarianceEstimation()
    model.corr_ = np.array([[1.0, 0.3, 0.1], [0.3, 1.0, 0.5], [0.1, 0.5, 1.0]])
    model.n_dims_ = L
    resid = rng.normal(size=(M, L)) * 0.01
    var = rng.uniform(0.5, 2, size=(M, L)) * 1e-4
    fd_check(lambda W: model._covariance_loss(W, resid, var), 0.1 * rng.normal(size=(M, model._n_outputs())))


def test_map_trace_is_monotone_and_prediction_interpolates(rng):
    M = 60
    mean = rng.uniform(size=(M, 1))
    var = np.full((M, 1), 1e-4)
    resid = rng.normal(size=(M, 1)) * 0.01 * (1 + mean)
    loss_fn = GPNormal()._make_loss(resid, var, np.zeros((1, 1)))
    W, V, obj, jitter, K, nit, trace = _gp.map_latents(mean, var, loss_fn, 1, theta=0.3)
    assert len(trace) > 1 and np.all(np.diff(trace) <= 1e-9)
    assert obj <= trace[0] + 1e-9
    gp = _gp.LatentGP(mean, var, W, 0.3, jitter, np.eye(1))
    np.testing.assert_allclose(gp.predict(mean, var), W, atol=1e-3)


def test_beta_link_identity_at_zero_latents(rng):
    z = rng.normal(size=(50, 2))
    s, *_ = beta_link_terms(z, np.zeros((50, 2, 3)))
    np.testing.assert_allclose(1 / (1 + np.exp(-s)), ndtr(z), atol=1e-12)


def test_ldl_batch_reconstructs(rng):
    A = rng.normal(size=(6, 3, 3))
    cov = A @ np.swapaxes(A, 1, 2) + np.eye(3)
    Lf, D = ldl_batch(cov)
    np.testing.assert_allclose(np.einsum("nij,nj,nkj->nik", Lf, D, Lf), cov, atol=1e-12)
    np.testing.assert_allclose(np.diagonal(Lf, axis1=1, axis2=2), 1.0)


# ------------------------------------------------------------------ GP estimators (small)
@pytest.fixture(scope="module")
def sine_data():
    d = DetectorDistortion(variance_profile="mu_sine", variance_scale=2.0)
    return generate_regression_arrays(d, 1500, seed=5), generate_regression_arrays(d, 1500, seed=6)


def test_gp_normal_beats_variance_scaling_on_mean_dependent_noise(sine_data):
    (m, v, y), (mt, vt, yt) = sine_data
    gp = GPNormal(max_points=300, seed=0).fit(X_of(m[:, :1], v[:, :1]), y[:, :1])
    vs = VarianceScaling().fit(X_of(m[:, :1], v[:, :1]), y[:, :1])
    Xt = X_of(mt[:, :1], vt[:, :1])
    assert gp.nll(Xt, yt[:, :1]).mean() < vs.nll(Xt, yt[:, :1]).mean()
    clone = model_from_dict(gp.to_dict())
    np.testing.assert_allclose(clone.transform(Xt).var, gp.transform(Xt).var, rtol=1e-12)
    assert gp.get_params()["max_points"] == 300


def test_gp_normal_constant_model_on_constant_distortion():
    m, v, y = generate_regression_arrays(DetectorDistortion(variance_scale=2.0), 800, seed=7)
    gp = GPNormal(max_points=200, multivariate=True).fit(X_of(m, v), y)
    vs = VarianceScaling().fit(X_of(m, v), y)
    np.testing.assert_allclose(np.sqrt(gp.transform(X_of(m, v)).var / v).mean(axis=0), vs.scale_, rtol=0.05)


def test_gp_cauchy_handles_heavy_tails():
    d = DetectorDistortion(noise="cauchy")
    m, v, y = generate_regression_arrays(d, 600, seed=8)
    mt, vt, yt = generate_regression_arrays(d, 600, seed=9)
    X, Xt = X_of(m[:, :1], v[:, :1]), X_of(mt[:, :1], vt[:, :1])
    cauchy = GPCauchy(max_points=200, theta=0.3).fit(X, y[:, :1])
    normal = GPNormal(max_points=200, theta=0.3).fit(X, y[:, :1])
    assert cauchy.nll(Xt, yt[:, :1]).mean() < normal.nll(Xt, yt[:, :1]).mean()


def test_gp_beta_density_and_distribution_agree(sine_data):
    (m, v, y), _ = sine_data
    X = X_of(m[:300, :1], v[:300, :1])
    model = GPBeta(max_points=150, theta=0.3).fit(X, y[:300, :1])
    dist = model.transform(X[:20])
    z = (y[:20, :1] - m[:20, :1]) / np.sqrt(v[:20, :1])
    s, *_ = beta_link_terms(z, model.latents(m[:20, :1], v[:20, :1]))
    np.testing.assert_allclose(dist.cdf(y[:20, :1]), 1 / (1 + np.exp(-s)), atol=2e-3)
    # the gridded density is a cell-average slope of the CDF
    exact = np.exp(model.log_density(X[:20], y[:20, :1]))
    np.testing.assert_allclose(dist.pdf(y[:20, :1]), exact, rtol=0.15)
    assert np.all(np.diff(dist.cdf_values, axis=-1) >= 0)


def test_covariance_estimation_recovers_correlation():
    d = DetectorDistortion(residual_correlation=0.6)
    m, v, y = generate_regression_arrays(d, 1500, seed=10)
    model = CovarianceEstimation(use_gp=False).fit(X_of(m, v), y)
    assert model.corr_[2, 3] == pytest.approx(0.6, abs=0.1)
    cov = model.transform(X_of(m, v)).cov
    np.testing.assert_array_equal(cov, np.swapaxes(cov, 1, 2))
    np.linalg.cholesky(cov)
    clone = model_from_dict(model.to_dict())
    np.testing.assert_allclose(clone.joint_nll(X_of(m, v), y), model.joint_nll(X_of(m, v), y))


def test_regression_input_validation(rng):
    with pytest.raises(ValueError):
        VarianceScaling().fit(np.ones((5, 3)), np.ones((5, 1)))
    with pytest.raises(ValueError):
        VarianceScaling().fit(np.hstack([np.ones((5, 1)), -np.ones((5, 1))]), np.ones((5, 1)))
    with pytest.raises(ValueError):
        GPNormal().fit(np.hstack([np.ones((5, 1)), np.ones((5, 1))]), np.ones((5, 1)))
    model = VarianceScaling().fit(np.hstack([rng.normal(size=(9, 1)), np.ones((9, 1))]), rng.normal(size=(9, 1)))
    with pytest.raises(ValueError):
        model.transform(np.ones((3, 4)))
