import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from extcomp import glm
from extcomp.errors import GlmError, Separation, SingularInformation
from extcomp.glm import ModelSpec, fit_glm, predict_class_probs, predict_mean

LOGIT = ModelSpec("bernoulli-logit")
GAUSS = ModelSpec("gaussian-identity")
MULTI = ModelSpec("multinomial-logit")


def _fit_from_coef(family, coef, n_categories=2):
    coef = np.atleast_2d(np.asarray(coef, dtype=float))
    return glm.FittedGlm(family, coef, True, 0, 0.0, 0.0, n_categories)


# ---------------------------------------------------------------------------
# closed forms


def test_intercept_only_logit_closed_forms():
    empty = np.empty((4, 0))
    assert fit_glm(LOGIT, empty, [1, 1, 0, 0]).coefficients[0, 0] == pytest.approx(0.0, abs=1e-10)
    fit = fit_glm(LOGIT, empty, [1, 1, 1, 0])
    assert fit.coefficients[0, 0] == pytest.approx(np.log(3.0), abs=1e-10)
    assert fit.coefficients[0, 0] == pytest.approx(1.0986123, abs=1e-7)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(3, 60))
def test_weighted_intercept_only_closed_forms(seed, n):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n).astype(float)
    y[:2] = [0, 1]
    w = rng.uniform(0.1, 3.0, n)
    fit = fit_glm(LOGIT, np.empty((n, 0)), y, w)
    assert fit.coefficients[0, 0] == pytest.approx(special.logit(np.sum(w * y) / w.sum()),
                                                   abs=1e-10)
    z = rng.normal(size=n)
    g = fit_glm(GAUSS, np.empty((n, 0)), z, w)
    assert g.coefficients[0, 0] == pytest.approx(np.sum(w * z) / w.sum(), abs=1e-10)


def test_gaussian_exact_line():
    x = np.array([[0.0], [1.0], [2.0], [5.0]])
    fit = fit_glm(GAUSS, x, 2 + 3 * x[:, 0])
    np.testing.assert_allclose(fit.coefficients[0], [2.0, 3.0], atol=1e-12)
    np.testing.assert_allclose(predict_mean(fit, x), 2 + 3 * x[:, 0], atol=1e-12)
    assert predict_mean(fit, [[1.0]])[0] == pytest.approx(5.0)


def test_predict_mean_examples():
    assert predict_mean(_fit_from_coef("bernoulli-logit", [0.0]), np.empty((3, 0)))[1] == 0.5
    fit = _fit_from_coef("bernoulli-logit", [0.0, 1.0])
    np.testing.assert_allclose(predict_mean(fit, [[0.0], [np.log(3)]]), [0.5, 0.75], atol=1e-15)
    with pytest.raises(ValueError):
        predict_mean(fit, [[0.0, 1.0]])


def test_multinomial_symmetric_and_normalized():
    fit = _fit_from_coef("multinomial-logit", np.zeros((2, 2)), n_categories=3)
    probs = predict_class_probs(fit, [[0.3], [-2.0]])
    np.testing.assert_allclose(probs, 1 / 3, atol=1e-15)
    with pytest.raises(GlmError):
        predict_mean(fit, [[0.3]])
    with pytest.raises(GlmError):
        predict_class_probs(_fit_from_coef("bernoulli-logit", [0.0, 1.0]), [[0.0]])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_multinomial_rows_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 6))
    coef = rng.normal(size=(k - 1, 3)) * 5
    probs = predict_class_probs(_fit_from_coef("multinomial-logit", coef, k),
                                rng.normal(size=(50, 2)) * 4)
    assert np.all(np.abs(probs.sum(axis=1) - 1.0) <= 1e-12)
    assert np.all(probs >= 0)


def test_two_category_multinomial_equals_logistic():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(300, 2))
    y = (rng.random(300) < special.expit(0.3 + x @ [1.0, -0.5])).astype(int)
    bin_fit = fit_glm(LOGIT, x, y)
    mn_fit = fit_glm(MULTI, x, y, n_categories=2)
    np.testing.assert_allclose(predict_class_probs(mn_fit, x)[:, 1], predict_mean(bin_fit, x),
                               atol=1e-8)


def test_multinomial_reference_is_lowest_category():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(400, 1))
    y = rng.integers(0, 3, 400)
    fit = fit_glm(MULTI, x, y)
    assert fit.coefficients.shape == (2, 2)
    probs = predict_class_probs(fit, x)
    # intercept-free check: log odds of category k vs 0 equals the k-th linear predictor
    x1 = glm.add_intercept(x)
    np.testing.assert_allclose(np.log(probs[:, 1] / probs[:, 0]), x1 @ fit.coefficients[0],
                               atol=1e-10)
    # at the MLE the fitted class totals match the observed counts
    np.testing.assert_allclose(probs.sum(axis=0), np.bincount(y, minlength=3), atol=1e-6)


# ---------------------------------------------------------------------------
# score, convergence, monotone likelihood


@pytest.mark.parametrize("family,k", [("bernoulli-logit", 2), ("multinomial-logit", 3),
                                      ("multinomial-logit", 4), ("gaussian-identity", 2)])
def test_score_matches_finite_differences(family, k):
    rng = np.random.default_rng(hash(family) % 2**32 + k)
    for _ in range(10):
        n, p = int(rng.integers(5, 40)), int(rng.integers(1, 4))
        x1 = glm.add_intercept(rng.normal(size=(n, p)))
        w = rng.uniform(0.2, 2.0, n)
        if family == "gaussian-identity":
            y = rng.normal(size=n)
        else:
            y = rng.integers(0, k, n).astype(float)
        m = (k - 1) if family == "multinomial-logit" else 1
        beta = rng.normal(size=m * (p + 1))
        analytic = glm.score(family, beta, x1, y, w, k)
        h = 1e-6
        numeric = np.array([
            (glm.log_likelihood(family, beta + h * e, x1, y, w, k)
             - glm.log_likelihood(family, beta - h * e, x1, y, w, k)) / (2 * h)
            for e in np.eye(len(beta))])
        scale = max(np.max(np.abs(analytic)), 1.0)
        assert np.max(np.abs(analytic - numeric)) / scale <= 1e-6


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_converged_fits_have_small_score_and_monotone_likelihood(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(30, 200))
    x = rng.normal(size=(n, 2))
    y = (rng.random(n) < special.expit(0.5 * x[:, 0] - x[:, 1])).astype(float)
    y[:2] = [0, 1]
    try:
        fit = fit_glm(LOGIT, x, y)
    except Separation:
        return
    assert fit.converged and fit.max_abs_score <= glm.SCORE_TOL
    hist = np.array(fit.ll_history)
    assert np.all(np.diff(hist) >= -1e-12 * max(1.0, abs(hist[0])))
    u = glm.score("bernoulli-logit", fit.coefficients.ravel(), glm.add_intercept(x), y)
    assert np.max(np.abs(u)) <= glm.SCORE_TOL


def test_logistic_matches_reference_optimizer():
    # independent optimizer: scipy BFGS on the same likelihood
    from scipy import optimize
    rng = np.random.default_rng(7)
    x = rng.normal(size=(500, 3))
    y = (rng.random(500) < special.expit(-0.2 + x @ [0.7, -0.4, 0.1])).astype(float)
    x1 = glm.add_intercept(x)
    res = optimize.minimize(lambda b: -glm.log_likelihood("bernoulli-logit", b, x1, y),
                            np.zeros(4), jac=lambda b: -glm.score("bernoulli-logit", b, x1, y),
                            method="BFGS", options={"gtol": 1e-10})
    np.testing.assert_allclose(fit_glm(LOGIT, x, y).coefficients[0], res.x, atol=1e-5)


# ---------------------------------------------------------------------------
# failure modes


def test_separation_detected():
    x = np.array([[-2.0], [-1.0], [-0.5], [0.5], [1.0], [2.0]])
    with pytest.raises(Separation):
        fit_glm(LOGIT, x, [0, 0, 0, 1, 1, 1])


def test_duplicate_column_is_singular():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(50, 1))
    y = (rng.random(50) < 0.5).astype(float)
    with pytest.raises(SingularInformation):
        fit_glm(LOGIT, np.hstack([x, x]), y, ridge=False)
    with pytest.raises(SingularInformation):
        fit_glm(GAUSS, np.hstack([x, x]), rng.normal(size=50), ridge=False)


def test_bad_inputs_rejected():
    with pytest.raises(ValueError):
        fit_glm(LOGIT, np.empty((3, 0)), [0, 1, 2])
    with pytest.raises(ValueError):
        fit_glm(LOGIT, np.empty((2, 0)), [0, 1], case_weights=[0.0, 0.0])
    with pytest.raises(ValueError):
        fit_glm(MULTI, np.empty((2, 0)), [0, 0.5], n_categories=2)
    with pytest.raises(ValueError):
        ModelSpec("poisson-log")


def test_fit_is_deterministic():
    rng = np.random.default_rng(10)
    x = rng.normal(size=(200, 2))
    y = rng.integers(0, 3, 200)
    a, b = fit_glm(MULTI, x, y), fit_glm(MULTI, x, y)
    assert np.array_equal(a.coefficients, b.coefficients)
