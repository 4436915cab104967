import numpy as np
import pytest
from scipy import stats

from detcal.synthetic import (DetectorDistortion, ScenarioConfig, generate_beta_class_features,
                              generate_detection_dataset, generate_regression_arrays,
                              generate_tracking_sequence, sample_multivariate_beta, make_rng)


def test_seed_determinism():
    d = DetectorDistortion(link_weight=0.5)
    a = generate_detection_dataset(d, 300, seed=5)
    b = generate_detection_dataset(d, 300, seed=5)
    c = generate_detection_dataset(d, 300, seed=6)
    assert a.samples == b.samples and a.samples != c.samples
    s1 = generate_tracking_sequence(ScenarioConfig(), d, seed=2)
    s2 = generate_tracking_sequence(ScenarioConfig(), d, seed=2)
    assert s1.frames == s2.frames


def test_empirical_precision_converges_to_link():
    d = DetectorDistortion(link_weight=0.5, link_bias=0.3)
    ds = generate_detection_dataset(d, 100_000, seed=1)
    conf, y = ds.confidences, ds.matched
    for lo in (0.2, 0.5, 0.8):
        sel = (conf >= lo) & (conf < lo + 0.05)
        assert y[sel].mean() == pytest.approx(d.true_precision(conf[sel]).mean(), abs=0.02)


def test_regression_residual_scales():
    m, v, y = generate_regression_arrays(DetectorDistortion(variance_scale=2.0), 50_000, seed=2)
    z = (y - m) / np.sqrt(v)
    np.testing.assert_allclose(z.std(axis=0), 0.5, atol=0.01)
    d = DetectorDistortion(residual_correlation=0.6)
    m, v, y = generate_regression_arrays(d, 50_000, seed=3)
    z = (y - m) / np.sqrt(v)
    assert np.corrcoef(z[:, 2], z[:, 3])[0, 1] == pytest.approx(0.6, abs=0.02)


def test_mu_sine_profile():
    d = DetectorDistortion(variance_profile="mu_sine", variance_scale=2.0)
    m, v, y = generate_regression_arrays(d, 100_000, seed=4)
    z = (y[:, 0] - m[:, 0]) / np.sqrt(v[:, 0])
    for lo in (0.2, 0.45, 0.7):
        sel = (m[:, 0] >= lo) & (m[:, 0] < lo + 0.05)
        expected = np.sqrt(np.mean(d.scale_profile(m[sel, 0]) ** 2)) / 2.0
        assert z[sel].std() == pytest.approx(expected, rel=0.05)


def test_cauchy_noise_is_heavy_tailed():
    m, v, y = generate_regression_arrays(DetectorDistortion(noise="cauchy"), 20_000, seed=5)
    z = (y[:, 0] - m[:, 0]) / np.sqrt(v[:, 0])
    assert stats.kstest(z, "cauchy").pvalue > 1e-3


def test_multivariate_beta_marginals():
    # each coordinate x_k has odds Gamma(alpha_k)/(lambda_k Gamma(alpha_0)): a scaled beta-prime
    x = sample_multivariate_beta(make_rng(0), 100_000, [2.0, 3.0, 4.0], [1.0, 2.0])
    odds = x[:, 1] / (1 - x[:, 1])
    ref = stats.betaprime(4.0, 2.0, scale=0.5)
    assert stats.kstest(odds, ref.cdf).pvalue > 1e-3
    X, y = generate_beta_class_features(1000, 1, [2, 3, 4], [1, 2], [3, 2, 2], [1, 1])
    assert X.shape == (1000, 2) and set(np.unique(y)) == {0, 1}


def test_tracking_sequence_shape():
    cfg = ScenarioConfig(n_objects=3, n_frames=10, detection_prob=1.0, fp_rate=0.0, persistent=True)
    seq = generate_tracking_sequence(cfg, seed=0)
    assert len(seq.frames) == 10
    assert all(len(d) == 3 and len(g) == 3 for d, g in seq.frames)
    with pytest.raises(ValueError):
        ScenarioConfig(detection_prob=1.5)
    with pytest.raises(ValueError):
        DetectorDistortion(variance_profile="linear")
