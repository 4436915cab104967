import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit, gammaln, logit
from scipy.stats import multivariate_normal

from detcal.calibration import BetaCalibration, LogisticCalibration, model_from_dict
from detcal.calibration.scaling import bernoulli_nll_and_grad
from detcal.metrics import confidence as cm
from detcal.synthetic import (DetectorDistortion, generate_beta_class_features, generate_detection_dataset,
                              generate_gaussian_class_features)


def finite_diff(model, params, F, y, h=1e-6):
    grad = np.zeros_like(params)
    for i in range(len(params)):
        e = np.zeros_like(params)
        e[i] = h
        grad[i] = (model.objective(params + e, F, y)[0] - model.objective(params - e, F, y)[0]) / (2 * h)
    return grad


@pytest.mark.parametrize("cls,dependent,k", [(LogisticCalibration, False, 1), (LogisticCalibration, False, 3),
                                             (LogisticCalibration, True, 3), (BetaCalibration, False, 1),
                                             (BetaCalibration, False, 3), (BetaCalibration, True, 3)])
def test_analytic_gradients(cls, dependent, k, rng):
    X = rng.uniform(0.05, 0.95, size=(60, k))
    y = rng.integers(0, 2, 60).astype(float)
    model = cls(dependent=dependent)
    model.n_features_in_ = k
    F = model._design(X)
    params = 0.1 * rng.standard_normal(model._n_params(k))
    _, grad = model.objective(params, F, y)
    np.testing.assert_allclose(grad, finite_diff(model, params, F, y), rtol=1e-5, atol=1e-5)


def test_bernoulli_loss_matches_direct_formula(rng):
    lr = rng.normal(size=20)
    y = rng.integers(0, 2, 20)
    p = expit(lr)
    loss, _ = bernoulli_nll_and_grad(lr, y)
    assert loss == pytest.approx(-np.sum(y * np.log(p) + (1 - y) * np.log(1 - p)))


def test_logistic_recovers_link(confidence_data):
    _, train, test = confidence_data
    model = LogisticCalibration().fit(train.features(), train.matched)
    coef = model.coefficients()
    assert coef["w"][0] == pytest.approx(0.5, abs=0.08)
    assert coef["delta"] == pytest.approx(0.3, abs=0.08)
    assert cm.ece(model.transform(test.features()), test.matched) < cm.ece(test.confidences, test.matched)


def test_multivariate_logistic_matches_unpenalized_mle_and_recovers_weights():
    from sklearn.linear_model import LogisticRegression

    pw = (1.0, -1.0, 0.0, 0.0)
    d = DetectorDistortion(link_weight=0.7, link_bias=0.2, position_weights=pw)
    ds = generate_detection_dataset(d, 40000, seed=3)
    X = ds.features(("confidence", "cx", "cy", "w", "h"))
    coef = LogisticCalibration().fit(X, ds.matched).coefficients()
    F = X.copy()
    F[:, 0] = logit(np.clip(X[:, 0], 1e-6, 1 - 1e-6))
    ref = LogisticRegression(penalty=None, tol=1e-10, max_iter=10000).fit(F, ds.matched)
    np.testing.assert_allclose(coef["w"], ref.coef_[0], atol=1e-3)
    assert coef["delta"] == pytest.approx(ref.intercept_[0], abs=1e-3)
    # confidence and center weights are well identified; sizes span a narrow range
    np.testing.assert_allclose(coef["w"][:3], [0.7, 1.0, -1.0], atol=0.15)


def test_dependent_logistic_approaches_true_posterior():
    mp, mn = np.array([1.0, 0.6, 0.5]), np.array([-1.0, 0.4, 0.5])
    cp = np.array([[1.0, 0.3, 0.0], [0.3, 0.02, 0.0], [0.0, 0.0, 0.01]])
    cp[1, 1] = 0.02
    cp[0, 1] = cp[1, 0] = 0.1
    cn = np.diag([1.5, 0.03, 0.02])
    X, y = generate_gaussian_class_features(30000, 5, mp, cp, mn, cn)
    Z = X.copy()
    Z[:, 0] = logit(X[:, 0])
    truth = expit(multivariate_normal(mp, cp).logpdf(Z) - multivariate_normal(mn, cn).logpdf(Z))
    dep = LogisticCalibration(dependent=True).fit(X, y)
    ind = LogisticCalibration().fit(X, y)
    assert np.mean(np.abs(dep.transform(X) - truth)) < 0.02
    assert dep.loss_ < ind.loss_


def libby_novick_logpdf(x, alpha, lam):
    """Log density of the Libby-Novick multivariate beta (independent oracle)."""
    t = x / (1 - x)
    return (gammaln(alpha.sum()) - gammaln(alpha).sum() + np.sum(alpha[1:] * np.log(lam))
            + np.log(t) @ (alpha[1:] - 1) - 2 * np.log1p(-x).sum(axis=1)
            - alpha.sum() * np.log1p(t @ lam))


def test_dependent_beta_approaches_true_posterior():
    ap, lp = np.array([2.0, 5.0, 3.0]), np.array([1.0, 2.0])
    an, ln_ = np.array([3.0, 2.0, 3.0]), np.array([1.5, 1.0])
    X, y = generate_beta_class_features(30000, 9, ap, lp, an, ln_)
    truth = expit(libby_novick_logpdf(X, ap, lp) - libby_novick_logpdf(X, an, ln_))
    dep = BetaCalibration(dependent=True).fit(X, y)
    assert np.mean(np.abs(dep.transform(X) - truth)) < 0.02
    assert dep.loss_ < BetaCalibration().fit(X, y).loss_


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_univariate_maps_are_monotone(seed):
    rng = np.random.default_rng(seed)
    p = rng.uniform(size=300)
    y = (rng.uniform(size=300) < p ** 1.5).astype(int)
    if y.min() == y.max():
        return
    grid = np.linspace(0, 1, 201)
    for cls in (LogisticCalibration, BetaCalibration):
        q = cls().fit(p, y).transform(grid)
        assert np.all(np.diff(q) >= -1e-15)


def test_beta_family_contains_identity(rng):
    p = rng.uniform(0.01, 0.99, size=20000)
    y = (rng.uniform(size=p.size) < p).astype(int)
    coef = BetaCalibration().fit(p, y).coefficients()
    assert coef["a"][0] == pytest.approx(1.0, abs=0.1)
    assert coef["b"][0] == pytest.approx(1.0, abs=0.1)
    assert coef["c"] == pytest.approx(0.0, abs=0.1)


@pytest.mark.parametrize("cls,dependent", [(LogisticCalibration, False), (LogisticCalibration, True),
                                           (BetaCalibration, False), (BetaCalibration, True)])
def test_round_trip_and_params(cls, dependent, rng):
    X = rng.uniform(0.05, 0.95, size=(400, 3))
    y = (rng.uniform(size=400) < X[:, 0]).astype(int)
    model = cls(dependent=dependent).fit(X, y)
    assert model.get_params() == {"dependent": dependent}
    clone = model_from_dict(model.to_dict())
    np.testing.assert_allclose(clone.transform(X), model.transform(X), rtol=0, atol=0)
    assert model.loss_ <= model.initial_loss_


def test_validation(rng):
    with pytest.raises(ValueError):
        LogisticCalibration(dependent=True).fit(rng.uniform(size=20), np.r_[np.zeros(10), np.ones(10)])
    with pytest.raises(ValueError, match="degenerate"):
        BetaCalibration().fit(rng.uniform(size=20), np.ones(20))
    proba = LogisticCalibration().fit([0.2, 0.8, 0.3, 0.9], [0, 1, 1, 1]).predict_proba([0.5])
    assert proba.shape == (1, 2) and proba.sum() == pytest.approx(1.0)
