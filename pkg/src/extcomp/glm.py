"""Maximum-likelihood fitting for the nuisance-model families.

Three families are supported, each with an intercept:

* ``bernoulli-logit``: binary logistic regression,
* ``multinomial-logit``: baseline-category logistic regression with the
  first category (index 0) as reference,
* ``gaussian-identity``: (weighted) least squares.

Logistic families are fit by Newton-Raphson with step-halving, so the
weighted log-likelihood never decreases between iterations. Least squares
is solved in closed form through the normal equations.

Design matrices passed to :func:`fit_glm` and the predictors hold only the
covariate columns; the intercept column is prepended internally.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, special

from .errors import GlmError, NonConvergence, Separation, SingularInformation

FAMILIES = ("bernoulli-logit", "multinomial-logit", "gaussian-identity")

SCORE_TOL = 1e-8
REL_LL_TOL = 1e-12
MAX_ITER = 100
MAX_HALVINGS = 20
RIDGE = 1e-8
SEPARATION_BOUND = 15.0
# 1 - R^2 of a column on the preceding ones (in the information metric)
COLLINEARITY_TOL = 1e-11


@dataclass(frozen=True)
class ModelSpec:
    family: str
    covariates: tuple = ()
    include_intercept: bool = True

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if not self.include_intercept:
            raise ValueError("models always include an intercept")
        object.__setattr__(self, "covariates", tuple(self.covariates))

    def intercept_only(self):
        return ModelSpec(self.family, ())


@dataclass(frozen=True)
class FittedGlm:
    family: str
    coefficients: np.ndarray
    converged: bool
    iterations: int
    max_abs_score: float
    log_likelihood: float
    n_categories: int = 2
    ll_history: tuple = field(default=(), repr=False)

    @property
    def n_columns(self):
        return self.coefficients.shape[1]


def add_intercept(design_rows):
    x = np.asarray(design_rows, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return np.hstack([np.ones((x.shape[0], 1)), x])


# ---------------------------------------------------------------------------
# likelihood pieces


def _as_coef(family, beta, p, n_categories):
    if family == "multinomial-logit":
        return np.asarray(beta, dtype=float).reshape(n_categories - 1, p)
    return np.asarray(beta, dtype=float).reshape(1, p)


def _multinomial_probs(x1, coef):
    eta = np.hstack([np.zeros((x1.shape[0], 1)), x1 @ coef.T])
    return special.softmax(eta, axis=1)


def log_likelihood(family, beta, x1, y, w=None, n_categories=2):
    """Weighted log-likelihood at the flat parameter vector ``beta``.

    The Gaussian family uses the unit-variance kernel ``-0.5 * sum w r^2``.
    """
    x1 = np.asarray(x1, dtype=float)
    w = np.ones(x1.shape[0]) if w is None else np.asarray(w, dtype=float)
    coef = _as_coef(family, beta, x1.shape[1], n_categories)
    if family == "bernoulli-logit":
        eta = x1 @ coef[0]
        return float(np.sum(w * (y * eta - np.logaddexp(0.0, eta))))
    if family == "gaussian-identity":
        r = y - x1 @ coef[0]
        return float(-0.5 * np.sum(w * r * r))
    eta = np.hstack([np.zeros((x1.shape[0], 1)), x1 @ coef.T])
    lse = special.logsumexp(eta, axis=1)
    picked = eta[np.arange(len(y)), np.asarray(y, dtype=int)]
    return float(np.sum(w * (picked - lse)))


def score(family, beta, x1, y, w=None, n_categories=2):
    """Gradient of :func:`log_likelihood` with respect to ``beta`` (flat)."""
    x1 = np.asarray(x1, dtype=float)
    w = np.ones(x1.shape[0]) if w is None else np.asarray(w, dtype=float)
    coef = _as_coef(family, beta, x1.shape[1], n_categories)
    if family == "bernoulli-logit":
        return x1.T @ (w * (y - special.expit(x1 @ coef[0])))
    if family == "gaussian-identity":
        return x1.T @ (w * (y - x1 @ coef[0]))
    probs = _multinomial_probs(x1, coef)
    onehot = np.zeros_like(probs)
    onehot[np.arange(len(y)), np.asarray(y, dtype=int)] = 1.0
    resid = (onehot - probs)[:, 1:]
    return (x1.T @ (w[:, None] * resid)).T.ravel()


def _information(family, beta, x1, w, n_categories):
    coef = _as_coef(family, beta, x1.shape[1], n_categories)
    if family == "bernoulli-logit":
        mu = special.expit(x1 @ coef[0])
        return (x1 * (w * mu * (1.0 - mu))[:, None]).T @ x1
    if family == "gaussian-identity":
        return (x1 * w[:, None]).T @ x1
    probs = _multinomial_probs(x1, coef)[:, 1:]
    m, p = probs.shape[1], x1.shape[1]
    # block (j, k) = sum_i w_i x_i x_i^T (pi_ij delta_jk - pi_ij pi_ik)
    cov = -probs[:, :, None] * probs[:, None, :]
    idx = np.arange(m)
    cov[:, idx, idx] += probs
    info = np.einsum("i,ia,ib,ijk->jakb", w, x1, x1, cov)
    return info.reshape(m * p, m * p)


def _factor(info, ridge):
    """Cholesky-factor ``info``, flagging near-collinear columns."""
    for attempt in range(2 if ridge else 1):
        mat = info if attempt == 0 else info + RIDGE * np.eye(info.shape[0])
        try:
            chol = np.linalg.cholesky(mat)
        except np.linalg.LinAlgError:
            continue
        diag = np.diag(mat)
        if np.all(diag > 0) and np.min(np.diag(chol) ** 2 / diag) > COLLINEARITY_TOL:
            return chol
    raise SingularInformation("information matrix is singular (collinear design or empty category)")


def _solve(chol, rhs):
    return linalg.cho_solve((chol, True), rhs)


# ---------------------------------------------------------------------------
# fitting


def _check_inputs(family, x1, y, w, n_categories):
    n = x1.shape[0]
    if n < 1:
        raise ValueError("at least one row is required")
    if y.shape != (n,):
        raise ValueError(f"response has shape {y.shape}, expected ({n},)")
    if not np.all(np.isfinite(x1)):
        raise ValueError("design matrix contains non-finite values")
    if not np.all(np.isfinite(y)):
        raise ValueError("response contains non-finite values")
    if w.shape != (n,):
        raise ValueError("case weights must have one entry per row")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("case weights must be finite and nonnegative")
    if not np.any(w > 0):
        raise ValueError("case weights are all zero")
    if family == "bernoulli-logit" and not np.all((y == 0) | (y == 1)):
        raise ValueError("bernoulli-logit response must be coded 0/1")
    if family == "multinomial-logit":
        if not np.all((y == np.round(y)) & (y >= 0) & (y < n_categories)):
            raise ValueError(f"multinomial response must be category indices in [0, {n_categories})")


def _start(family, x1, y, w, n_categories):
    p = x1.shape[1]
    wsum = w.sum()
    if family == "bernoulli-logit":
        beta = np.zeros(p)
        mean = np.clip(np.sum(w * y) / wsum, 1e-10, 1 - 1e-10)
        beta[0] = special.logit(mean)
        return beta
    beta = np.zeros((n_categories - 1, p))
    share = np.array([np.sum(w[y == k]) for k in range(n_categories)]) / wsum
    share = np.clip(share, 1e-10, None)
    beta[:, 0] = np.log(share[1:] / share[0])
    return beta.ravel()


def fit_glm(spec, design_rows, response, case_weights=None, *, n_categories=None,
            ridge=True, max_iter=MAX_ITER, score_tol=SCORE_TOL):
    """Fit one nuisance model by maximum likelihood.

    Parameters
    ----------
    spec : ModelSpec
        Only ``spec.family`` is used here; column selection happens upstream.
    design_rows : array (n, k)
        Covariate values without the intercept column. ``k`` may be 0.
    response : array (n,)
        0/1 for bernoulli, category indices for multinomial, reals otherwise.
    case_weights : array (n,), optional
    n_categories : int, optional
        Multinomial only; defaults to ``max(response) + 1``.
    ridge : bool
        Allow a single ``1e-8`` diagonal ridge when the information matrix is
        numerically singular.
    """
    family = spec.family
    x1 = add_intercept(np.asarray(design_rows, dtype=float).reshape(len(response), -1))
    y = np.asarray(response, dtype=float)
    w = np.ones(len(y)) if case_weights is None else np.asarray(case_weights, dtype=float)
    if family == "multinomial-logit":
        n_categories = int(np.max(y)) + 1 if n_categories is None else int(n_categories)
        if n_categories < 2:
            raise ValueError("multinomial fits need at least two categories")
    else:
        n_categories = 2
    _check_inputs(family, x1, y, w, n_categories)

    if family == "gaussian-identity":
        return _fit_least_squares(x1, y, w, ridge)

    beta = _start(family, x1, y, w, n_categories)

    def evaluate(b):
        if family == "bernoulli-logit":
            # one linear predictor serves the likelihood, score and information
            eta = x1 @ b
            mu = special.expit(eta)
            cache["info_w"] = w * mu * (1.0 - mu)
            return (float(np.sum(w * (y * eta - np.logaddexp(0.0, eta)))),
                    x1.T @ (w * (y - mu)))
        return (log_likelihood(family, b, x1, y, w, n_categories),
                score(family, b, x1, y, w, n_categories))

    def information(b):
        if family == "bernoulli-logit":
            return (x1 * cache["info_w"][:, None]).T @ x1
        return _information(family, b, x1, w, n_categories)

    cache = {}
    ll, u = evaluate(beta)
    history = [ll]
    iterations = 0
    singular = None
    while iterations < max_iter and np.max(np.abs(u)) > score_tol:
        try:
            chol = _factor(information(beta), ridge)
        except SingularInformation as exc:
            singular = exc
            break
        step = _solve(chol, u)
        t = 1.0
        for _ in range(MAX_HALVINGS + 1):
            cand = beta + t * step
            ll_new, u_new = evaluate(cand)
            if ll_new >= ll:
                break
            # inside rounding noise the likelihood cannot rank steps; use the score
            flat = abs(ll_new - ll) <= REL_LL_TOL * max(abs(ll), 1.0)
            if flat and np.max(np.abs(u_new)) < np.max(np.abs(u)):
                ll_new = ll
                break
            t *= 0.5
        else:
            break  # no ascent direction left at machine precision
        iterations += 1
        beta, ll, u = cand, ll_new, u_new
        history.append(ll)

    coef = _as_coef(family, beta, x1.shape[1], n_categories)
    max_score = float(np.max(np.abs(u)))
    converged = singular is None and max_score <= score_tol
    large = np.max(np.abs(coef)) > SEPARATION_BOUND
    if large and converged:
        # At a separated "solution" the score vanishes while Newton keeps
        # pushing coefficients outward; a genuine optimum has a tiny step.
        try:
            chol = _factor(_information(family, beta, x1, w, n_categories), ridge)
            converged = np.max(np.abs(_solve(chol, u))) <= 1e-3
        except SingularInformation:
            converged = False
    if not converged:
        if large:
            raise Separation(
                f"{family} fit diverged (|coefficient| > {SEPARATION_BOUND:g}); "
                "the response is (quasi-)separated by the covariates")
        if singular is not None:
            raise singular
        raise NonConvergence(
            f"{family} fit did not converge in {iterations} iterations "
            f"(max |score| = {max_score:.3g})")
    return FittedGlm(family, coef, True, iterations, max_score, ll, n_categories, tuple(history))


def _fit_least_squares(x1, y, w, ridge):
    xtw = (x1 * w[:, None]).T
    chol = _factor(xtw @ x1, ridge)
    beta = _solve(chol, xtw @ y)
    # one round of iterative refinement
    beta = beta + _solve(chol, xtw @ (y - x1 @ beta))
    u = score("gaussian-identity", beta, x1, y, w)
    ll = log_likelihood("gaussian-identity", beta, x1, y, w)
    return FittedGlm("gaussian-identity", beta[None, :], True, 1,
                     float(np.max(np.abs(u))), ll, 2, (ll,))


# ---------------------------------------------------------------------------
# prediction


def _design_for(fit, design_rows):
    x1 = add_intercept(design_rows)
    if x1.shape[1] != fit.n_columns:
        raise ValueError(
            f"design has {x1.shape[1] - 1} covariate columns, fit expects {fit.n_columns - 1}")
    return x1


def predict_mean(fit, design_rows):
    """Conditional mean: probability for bernoulli, linear predictor for gaussian."""
    if fit.family == "multinomial-logit":
        raise GlmError("use predict_class_probs for multinomial fits")
    eta = _design_for(fit, design_rows) @ fit.coefficients[0]
    if fit.family == "bernoulli-logit":
        return special.expit(eta)
    return eta


def predict_class_probs(fit, design_rows):
    if fit.family != "multinomial-logit":
        raise GlmError(f"predict_class_probs needs a multinomial fit, got {fit.family}")
    return _multinomial_probs(_design_for(fit, design_rows), fit.coefficients)
