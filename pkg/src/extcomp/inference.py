"""Standard errors, confidence intervals and the shared-arm diagnostic.

Influence-function (plug-in) variances treat the fitted nuisance functions
as known. They are valid for the augmented estimators when a sufficient set
of nuisance models is correct; the stratified bootstrap refits every model
in each resample and carries no such caveat.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import estimators as est
from .errors import EstimationError, MissingContributions, TooManyFailedResamples
from .glm import ModelSpec
from .tabular import stratify

MAX_FAILED_FRACTION = 0.01


@dataclass(frozen=True)
class InferenceResult:
    point: float
    se: float
    ci_low: float
    ci_high: float
    level: float = 0.95
    method: str = "if-plugin"
    resamples: int | None = None
    seed: int | None = None
    failed_resamples: int = 0
    replicates: np.ndarray | None = field(default=None, repr=False, compare=False)


@dataclass(frozen=True)
class FalsificationReport:
    delta_hat: float
    se: float
    z: float
    p_value: float
    standardized_prediction_gap: float
    shared_arm: int | None = None

    def interpretation(self, alpha=0.05):
        verdict = "rejects" if self.p_value < alpha else "does not reject"
        return (f"At level {alpha:g} the shared-arm check {verdict} equal conditional means of "
                f"arm {self.shared_arm} across sources (p = {self.p_value:.4g}); "
                "a non-rejection is not evidence that mean transportability holds.")


@dataclass(frozen=True)
class EfficiencyGap:
    var_phi: float
    var_psi: float
    var_delta: float
    gap: float
    cov_psi_delta: float

    @property
    def correlation(self):
        denom = np.sqrt(self.var_psi * self.var_delta)
        return self.cov_psi_delta / denom if denom > 0 else 0.0


@dataclass(frozen=True)
class EstimationConfig:
    """Everything needed to rerun the estimation on a resampled dataset."""

    participation: ModelSpec
    treatment: ModelSpec
    outcome: ModelSpec
    shared_arm: int | None = None
    scale: str = "difference"
    truncate: float | None = None
    known_e: dict | None = None

    def run(self, ds, estimand, method):
        return self.run_all(ds, [estimand], [method])[(estimand, method)]

    def run_all(self, ds, estimands, methods):
        """Refit every nuisance model on ``ds`` and compute all requested contrasts."""
        cells = est.required_cells(ds.coding, estimands, self.shared_arm)
        ns = est.fit_nuisances(ds, self.participation, self.treatment, self.outcome, cells,
                               truncate=self.truncate, known_e=self.known_e)
        if self.scale != "difference" and any(e != "psi" for e in estimands):
            raise ValueError("the ratio scale is only available for psi")
        return est.estimate_all(ds, ns, methods, estimands, self.shared_arm, self.scale)


def _z(level):
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    return stats.norm.ppf(0.5 + level / 2)


def if_variance(ce, n=None, level=0.95):
    """Wald interval from the sample variance of the influence contributions.

    ``se = sqrt(var(contributions, ddof=1) / n)``.
    """
    if ce.if_contributions is None:
        raise MissingContributions(
            f"{ce.method} estimates carry no influence contributions; use the bootstrap")
    contrib = np.asarray(ce.if_contributions, dtype=float)
    n = len(contrib) if n is None else int(n)
    var = float(np.var(contrib, ddof=1)) if len(contrib) > 1 else 0.0
    se = float(np.sqrt(var / n))
    half = float(_z(level)) * se
    value = float(ce.value)
    return InferenceResult(value, se, value - half, value + half, level, "if-plugin")


def stratified_indices(ds, rng):
    """Resample rows with replacement separately within each source."""
    parts = []
    for s in (1, 0):
        rows = stratify(ds, s)
        parts.append(rows[rng.integers(0, len(rows), len(rows))])
    return np.concatenate(parts)


def bootstrap(ds, pipeline, estimand, method, B=1000, seed=0, level=0.95, workers=1):
    """Percentile interval from a source-stratified nonparametric bootstrap.

    Resamples keep the index and external sample sizes fixed and rerun every
    nuisance fit. Resample ``b`` draws from its own stream seeded by
    ``(seed, b)``, so the result does not depend on ``workers`` or execution
    order. Quantiles use linear interpolation between order statistics
    (the ``numpy`` default). Resamples where a model fails are dropped; more
    than 1% raises :class:`TooManyFailedResamples`.
    """
    return bootstrap_many(ds, pipeline, [estimand], [method], B, seed, level,
                          workers)[(estimand, method)]


def bootstrap_many(ds, pipeline, estimands, methods, B=1000, seed=0, level=0.95, workers=1):
    """:func:`bootstrap` for several (estimand, method) pairs on shared resamples.

    A resample that fails for any pair is dropped for all of them.
    """
    if B < 2:
        raise ValueError("need at least two resamples")
    keys = [(e, m) for e in estimands for m in methods]
    points = pipeline.run_all(ds, estimands, methods)

    def one(b):
        rng = np.random.default_rng([int(seed), int(b)])
        try:
            res = pipeline.run_all(ds.take(stratified_indices(ds, rng)), estimands, methods)
        except EstimationError:
            return [np.nan] * len(keys)
        return [res[k].value for k in keys]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reps = np.array(list(pool.map(one, range(B))))
    else:
        reps = np.array([one(b) for b in range(B)])
    bad = np.any(np.isnan(reps), axis=1)
    failed = int(np.sum(bad))
    if failed > MAX_FAILED_FRACTION * B:
        raise TooManyFailedResamples(f"{failed} of {B} bootstrap resamples failed")
    alpha = 1.0 - level
    out = {}
    for j, key in enumerate(keys):
        good = reps[~bad, j]
        lo, hi = np.quantile(good, [alpha / 2, 1 - alpha / 2])
        out[key] = InferenceResult(points[key].value, float(np.std(good, ddof=1)), float(lo),
                                   float(hi), level, "bootstrap-percentile", B, int(seed),
                                   failed, good)
    return out


def efficiency_gap(ds, ns, shared_arm=None):
    """Plug-in variances of the psi, phi and delta influence contributions.

    Because ``Phi = Psi - Delta`` row by row, ``gap = var_phi - var_psi -
    var_delta`` equals ``-2 cov(Psi, Delta)`` on every dataset. The
    covariance vanishes in large samples when the shared arm is mean
    transportable, leaving ``var_phi - var_psi = var_delta > 0``.
    """
    cells = est.required_cells(ds.coding, ["phi"], shared_arm)
    gammas = est.compute_gammas(ds, ns, "AW1", cells)
    psi = est.estimate_psi(ds, ns, "AW1", gammas=gammas).if_contributions
    phi = est.estimate_phi(ds, ns, "AW1", shared_arm, gammas=gammas).if_contributions
    delta = est.estimate_delta(ds, ns, "AW1", shared_arm, gammas=gammas).if_contributions
    var_phi, var_psi, var_delta = (float(np.var(v, ddof=1)) for v in (phi, psi, delta))
    cov = float(np.cov(psi, delta, ddof=1)[0, 1])
    return EfficiencyGap(var_phi, var_psi, var_delta, var_phi - var_psi - var_delta, cov)


def shared_arm_test(ds, ns, shared_arm=None):
    """Test ``E[Y | X, S=1, A=a0] = E[Y | X, S=0, A=a0]`` through delta-hat (AW1).

    The standardized prediction gap is the index-population mean of
    ``g(1, a0) - g(0, a0)`` divided by the outcome SD among shared-arm rows
    of both sources.
    """
    d = est.estimate_delta(ds, ns, "AW1", shared_arm)
    res = if_variance(d, ds.n)
    if res.se > 0:
        z = d.value / res.se
    else:
        z = 0.0 if d.value == 0 else float(np.sign(d.value) * np.inf)
    p = float(2 * stats.norm.sf(abs(z)))
    a0 = d.shared_arm_used
    index = ds.s == 1
    gap = float(np.mean(ns.g_hat[(1, a0)][index] - ns.g_hat[(0, a0)][index]))
    sd = float(np.std(ds.y[ds.a == a0], ddof=1)) if np.sum(ds.a == a0) > 1 else 0.0
    std_gap = gap / sd if sd > 0 else float("nan")
    return FalsificationReport(d.value, res.se, float(z), p, std_gap, a0)
