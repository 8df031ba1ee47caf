"""Standardized cell means and the external-comparator contrasts built from them.

Every contrast is a linear combination of cell functionals ``gamma(s, a)``:
the mean, over the index-trial covariate distribution, of the outcome
regression in source ``s`` under treatment ``a``.

* ``psi   = gamma(1, a1) - gamma(0, a2)`` (transportability in mean)
* ``phi   = gamma(1, a1) - gamma(1, a0) - (gamma(0, a2) - gamma(0, a0))``
  (transportability of the difference effect measure through the shared arm)
* ``delta = gamma(1, a0) - gamma(0, a0)`` (shared-arm discrepancy)
* ``lambda = gamma(0, a2) + gamma(1, a0) - gamma(0, a0)``

where ``a1`` is the index-only arm, ``a2`` the external-only arm and ``a0``
the shared arm. Note ``psi - phi == delta``.

Six estimators are available for each ``gamma``:

OM
    mean over index rows of the outcome-model prediction.
W1
    ``(1/n1) sum_i w_i Y_i`` with the transport weight ``w``.
W2
    ``sum_i w_i Y_i / sum_i w_i``.
AW1
    OM plus ``(1/n1) sum_i w_i (Y_i - g(X_i))``.
AW2
    OM plus the normalized correction ``sum_i w_i (Y_i - g) / sum_i w_i``.
AW3
    OM computed from an outcome model refit with case weights ``w``.

The transport weight for a cell in the index trial is ``1 / e(1, a)``; for
an external cell it is ``p / (e(0, a) (1 - p))``, the odds of index-trial
membership times the inverse treatment probability. Each cell uses only the
term for its own source.
"""

from dataclasses import dataclass, field

import numpy as np

from . import glm
from .errors import (DegenerateRatio, EmptyCell, EstimationError, GlmError, MissingSharedArm,
                     PositivityViolation, ZeroWeightMass)
from .tabular import stratify

METHODS = ("OM", "W1", "W2", "AW1", "AW2", "AW3")
ESTIMANDS = ("psi", "phi", "delta")
POSITIVITY_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class NuisanceSet:
    """Fitted nuisance functions evaluated at every row of a dataset."""

    zeta_hat: float
    p_hat: np.ndarray
    e_hat: dict
    g_hat: dict
    specs: dict
    fits: dict = field(default_factory=dict, repr=False)
    truncate: float | None = None

    @property
    def cells(self):
        return tuple(sorted(self.g_hat))


@dataclass(frozen=True, eq=False)
class GammaEstimate:
    s: int
    a: int
    method: str
    value: float
    if_contributions: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class ContrastEstimate:
    estimand: str
    scale: str
    method: str
    value: float
    if_contributions: np.ndarray | None = None
    shared_arm_used: int | None = None
    gammas: dict = field(default_factory=dict)
    lambda_hat: float | None = None


def default_specs(covariates, outcome_family="gaussian-identity"):
    """Participation, treatment and outcome specs sharing one covariate list."""
    covariates = tuple(covariates)
    return (glm.ModelSpec("bernoulli-logit", covariates),
            glm.ModelSpec("bernoulli-logit", covariates),
            glm.ModelSpec(outcome_family, covariates))


def required_cells(coding, estimands, shared_arm=None):
    """(s, a) cells needed for the requested estimands."""
    cells = {(1, coding.index_only), (0, coding.external_only)}
    if any(e in ("phi", "delta") for e in estimands):
        a0 = _shared(coding, shared_arm)
        cells |= {(1, a0), (0, a0)}
    return cells


def _shared(coding, shared_arm):
    a0 = coding.shared_arm if shared_arm is None else shared_arm
    if a0 is None:
        raise MissingSharedArm("no shared arm declared; phi and delta need a common comparator")
    if a0 not in coding.shared_arms:
        raise MissingSharedArm(f"arm {a0} is not available in both sources")
    return int(a0)


def _annotate(exc, where):
    return type(exc)(f"{where}: {exc}")


# ---------------------------------------------------------------------------
# nuisance fitting


def fit_nuisances(ds, participation_spec, treatment_spec, outcome_spec, cells,
                  truncate=None, known_e=None):
    """Fit p(X), e(s, a)(X) and g(s, a)(X) and evaluate them at every row.

    * p: logistic regression of S on all rows.
    * e: fit separately within each source; binary logistic for two arms,
      multinomial (lowest code as reference) for three or more.
    * g: fit separately within each (s, a) stratum.

    Parameters
    ----------
    cells : iterable of (s, a)
    truncate : float, optional
        Clip p and e into ``[truncate, 1 - truncate]``. Off by default.
    known_e : dict, optional
        ``{(s, a): probability}`` replacing fitted treatment probabilities.
        All arms of a source must be given for it to be used.
    """
    cells = sorted({(int(s), int(a)) for s, a in cells})
    for s, a in cells:
        if len(stratify(ds, s, a)) == 0:
            raise EmptyCell(f"no rows with S={s}, A={a}")
    if participation_spec.family != "bernoulli-logit":
        raise ValueError("participation model must be bernoulli-logit")
    n = ds.n
    fits = {}

    try:
        fit_p = glm.fit_glm(participation_spec, ds.columns(participation_spec.covariates), ds.s)
    except GlmError as exc:
        raise _annotate(exc, "participation model") from exc
    fits["p"] = fit_p
    p_hat = glm.predict_mean(fit_p, ds.columns(participation_spec.covariates))

    e_hat = {}
    x_treat = ds.columns(treatment_spec.covariates)
    for s in sorted({s for s, _ in cells}):
        rows = stratify(ds, s)
        arms = sorted(set(ds.a[rows].tolist()))
        if known_e and all((s, a) in known_e for a in arms):
            for a in arms:
                e_hat[(s, a)] = np.full(n, float(known_e[(s, a)]))
            continue
        if len(arms) == 1:
            e_hat[(s, arms[0])] = np.ones(n)
            continue
        try:
            if len(arms) == 2:
                spec = glm.ModelSpec("bernoulli-logit", treatment_spec.covariates)
                fit = glm.fit_glm(spec, x_treat[rows], (ds.a[rows] == arms[1]).astype(float))
                mu = glm.predict_mean(fit, x_treat)
                e_hat[(s, arms[0])], e_hat[(s, arms[1])] = 1.0 - mu, mu
            else:
                spec = glm.ModelSpec("multinomial-logit", treatment_spec.covariates)
                response = np.searchsorted(arms, ds.a[rows])
                fit = glm.fit_glm(spec, x_treat[rows], response, n_categories=len(arms))
                probs = glm.predict_class_probs(fit, x_treat)
                for k, a in enumerate(arms):
                    e_hat[(s, a)] = probs[:, k]
        except GlmError as exc:
            raise _annotate(exc, f"treatment model in source S={s}") from exc
        fits[("e", s)] = fit

    if truncate is not None:
        if not 0 < truncate < 0.5:
            raise ValueError("truncation bound must lie in (0, 0.5)")
        p_hat = np.clip(p_hat, truncate, 1 - truncate)
        e_hat = {k: np.clip(v, truncate, 1 - truncate) for k, v in e_hat.items()}

    g_hat = {}
    x_out = ds.columns(outcome_spec.covariates)
    for s, a in cells:
        rows = stratify(ds, s, a)
        try:
            fit = glm.fit_glm(outcome_spec, x_out[rows], ds.y[rows])
        except GlmError as exc:
            raise _annotate(exc, f"outcome model for cell (S={s}, A={a})") from exc
        fits[("g", s, a)] = fit
        g_hat[(s, a)] = glm.predict_mean(fit, x_out)

    for arr in [p_hat, *e_hat.values(), *g_hat.values()]:
        arr.setflags(write=False)
    specs = {"participation": participation_spec, "treatment": treatment_spec,
             "outcome": outcome_spec}
    return NuisanceSet(ds.n1 / n, p_hat, e_hat, g_hat, specs, fits, truncate)


# ---------------------------------------------------------------------------
# weights


def transport_weights(ds, ns, s, a):
    """Per-row transport weight for cell (s, a); zero outside the cell."""
    if (s, a) not in ns.e_hat:
        raise EstimationError(f"no treatment probabilities for cell (S={s}, A={a})")
    in_cell = (ds.s == s) & (ds.a == a)
    e = ns.e_hat[(s, a)]
    w = np.zeros(ds.n)
    if s == 1:
        bad = in_cell & (e <= POSITIVITY_FLOOR)
        if np.any(bad):
            raise PositivityViolation(
                f"treatment probability e(1,{a}) ~ 0 at row {int(np.flatnonzero(bad)[0])}")
        w[in_cell] = 1.0 / e[in_cell]
    else:
        p = ns.p_hat
        bad = in_cell & ((e <= POSITIVITY_FLOOR) | (1.0 - p <= POSITIVITY_FLOOR))
        if np.any(bad):
            raise PositivityViolation(
                f"e(0,{a}) or 1 - p ~ 0 at row {int(np.flatnonzero(bad)[0])}")
        w[in_cell] = p[in_cell] / (e[in_cell] * (1.0 - p[in_cell]))
    return w


def transport_weight(ds, ns, s, a, i):
    """Transport weight of row ``i`` for cell (s, a)."""
    return float(transport_weights(ds, ns, s, a)[i])


# ---------------------------------------------------------------------------
# gamma(s, a)


def _check_cell(ds, ns, s, a):
    if (s, a) not in ns.g_hat:
        raise EstimationError(f"cell (S={s}, A={a}) was not fitted")
    if not np.any((ds.s == s) & (ds.a == a)):
        raise EmptyCell(f"no rows with S={s}, A={a}")


def gamma_om(ds, ns, s, a):
    _check_cell(ds, ns, s, a)
    value = float(np.mean(ns.g_hat[(s, a)][ds.s == 1]))
    return GammaEstimate(s, a, "OM", value)


def gamma_w1(ds, ns, s, a):
    _check_cell(ds, ns, s, a)
    w = transport_weights(ds, ns, s, a)
    return GammaEstimate(s, a, "W1", float(np.sum(w * ds.y) / ds.n1))


def gamma_w2(ds, ns, s, a):
    _check_cell(ds, ns, s, a)
    w = transport_weights(ds, ns, s, a)
    total = np.sum(w)
    if total <= 0:
        raise ZeroWeightMass(f"weights for cell (S={s}, A={a}) sum to zero")
    return GammaEstimate(s, a, "W2", float(np.sum(w * ds.y) / total))


def gamma_aw1(ds, ns, s, a):
    """Augmented weighting with non-normalized weights.

    Also returns the estimated influence-function contribution of each row,
    ``(1/zeta) * {I(S=1) (g - gamma) + w (Y - g)}`` with ``zeta = n1 / n``.
    These average to exactly zero.
    """
    _check_cell(ds, ns, s, a)
    w = transport_weights(ds, ns, s, a)
    g = ns.g_hat[(s, a)]
    index = (ds.s == 1).astype(float)
    value = float(np.sum(index * g + w * (ds.y - g)) / np.sum(index))
    contrib = (index * (g - value) + w * (ds.y - g)) / ns.zeta_hat
    return GammaEstimate(s, a, "AW1", value, contrib)


def gamma_aw2(ds, ns, s, a):
    _check_cell(ds, ns, s, a)
    w = transport_weights(ds, ns, s, a)
    total = np.sum(w)
    if total <= 0:
        raise ZeroWeightMass(f"weights for cell (S={s}, A={a}) sum to zero")
    g = ns.g_hat[(s, a)]
    value = float(np.mean(g[ds.s == 1]) + np.sum(w * (ds.y - g)) / total)
    return GammaEstimate(s, a, "AW2", value)


def gamma_aw3(ds, ns, s, a):
    _check_cell(ds, ns, s, a)
    w = transport_weights(ds, ns, s, a)
    rows = np.flatnonzero(w > 0)
    if len(rows) == 0:
        raise ZeroWeightMass(f"weights for cell (S={s}, A={a}) sum to zero")
    spec = ns.specs["outcome"]
    x = ds.columns(spec.covariates)
    try:
        fit = glm.fit_glm(spec, x[rows], ds.y[rows], case_weights=w[rows])
    except GlmError as exc:
        raise _annotate(exc, f"weighted outcome model for cell (S={s}, A={a})") from exc
    index = ds.s == 1
    value = float(np.mean(glm.predict_mean(fit, x[index])))
    return GammaEstimate(s, a, "AW3", value)


GAMMA = {"OM": gamma_om, "W1": gamma_w1, "W2": gamma_w2,
         "AW1": gamma_aw1, "AW2": gamma_aw2, "AW3": gamma_aw3}


def compute_gammas(ds, ns, method, cells):
    if method not in GAMMA:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    return {(s, a): GAMMA[method](ds, ns, s, a) for s, a in sorted(cells)}


def _gammas_for(ds, ns, method, cells, gammas):
    gammas = dict(gammas or {})
    missing = [c for c in cells if c not in gammas]
    gammas.update(compute_gammas(ds, ns, method, missing))
    for c in cells:
        if gammas[c].method != method:
            raise ValueError(f"gamma for {c} was computed with {gammas[c].method}, not {method}")
    return gammas


def _combine(gammas, signs):
    """Signed sum of gamma values and (when all present) their contributions."""
    value = 0.0
    for cell, sign in signs:
        value += sign * gammas[cell].value
    if all(gammas[cell].if_contributions is not None for cell, _ in signs):
        contrib = sum(sign * gammas[cell].if_contributions for cell, sign in signs)
    else:
        contrib = None
    return value, contrib


# ---------------------------------------------------------------------------
# contrasts


def estimate_psi(ds, ns, method="AW1", scale="difference", gammas=None):
    """Treatment effect under transportability in mean.

    On the ratio scale the influence contributions follow from the delta
    method applied to ``gamma(1, a1) / gamma(0, a2)``.
    """
    coding = ds.coding
    c1, c2 = (1, coding.index_only), (0, coding.external_only)
    gammas = _gammas_for(ds, ns, method, [c1, c2], gammas)
    g1, g2 = gammas[c1], gammas[c2]
    if scale == "difference":
        value, contrib = _combine(gammas, [(c1, 1), (c2, -1)])
    elif scale == "ratio":
        if abs(g2.value) <= 1e-12:
            raise DegenerateRatio("comparator mean is ~0; ratio undefined")
        value = g1.value / g2.value
        contrib = None
        if g1.if_contributions is not None:
            contrib = (g1.if_contributions / g2.value
                       - g1.value * g2.if_contributions / g2.value ** 2)
    else:
        raise ValueError(f"unknown scale {scale!r}")
    return ContrastEstimate("psi", scale, method, value, contrib, None,
                            {c: gammas[c].value for c in (c1, c2)})


def estimate_phi(ds, ns, method="AW1", shared_arm=None, gammas=None):
    """Treatment effect under transportability of the difference effect measure."""
    coding = ds.coding
    a0 = _shared(coding, shared_arm)
    c11, c10 = (1, coding.index_only), (1, a0)
    c02, c00 = (0, coding.external_only), (0, a0)
    cells = [c11, c10, c02, c00]
    gammas = _gammas_for(ds, ns, method, cells, gammas)
    value, contrib = _combine(gammas, [(c11, 1), (c10, -1), (c02, -1), (c00, 1)])
    lam = gammas[c02].value + gammas[c10].value - gammas[c00].value
    return ContrastEstimate("phi", "difference", method, value, contrib, a0,
                            {c: gammas[c].value for c in cells}, lam)


def estimate_delta(ds, ns, method="AW1", shared_arm=None, gammas=None):
    """Shared-arm discrepancy ``gamma(1, a0) - gamma(0, a0)``; zero under mean
    transportability of the shared arm."""
    a0 = _shared(ds.coding, shared_arm)
    c10, c00 = (1, a0), (0, a0)
    gammas = _gammas_for(ds, ns, method, [c10, c00], gammas)
    value, contrib = _combine(gammas, [(c10, 1), (c00, -1)])
    return ContrastEstimate("delta", "difference", method, value, contrib, a0,
                            {c: gammas[c].value for c in (c10, c00)})


def estimate_all(ds, ns, methods=METHODS, estimands=ESTIMANDS, shared_arm=None,
                 scale="difference"):
    """Every requested (estimand, method) pair, sharing gamma computations.

    ``scale`` applies to psi only.
    """
    a0 = None
    if any(e in ("phi", "delta") for e in estimands):
        a0 = _shared(ds.coding, shared_arm)
    cells = required_cells(ds.coding, estimands, a0)
    out = {}
    for method in methods:
        gammas = compute_gammas(ds, ns, method, cells)
        for estimand in estimands:
            if estimand == "psi":
                out[(estimand, method)] = estimate_psi(ds, ns, method, scale, gammas=gammas)
            elif estimand == "phi":
                out[(estimand, method)] = estimate_phi(ds, ns, method, a0, gammas=gammas)
            elif estimand == "delta":
                out[(estimand, method)] = estimate_delta(ds, ns, method, a0, gammas=gammas)
            else:
                raise ValueError(f"unknown estimand {estimand!r}")
    return out
