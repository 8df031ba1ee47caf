"""Monte-Carlo harness for the two-trial data-generating process.

Covariates are trivariate normal (unit variances, common covariance 0.5).
Index-trial membership follows a logistic model with slopes ``ln 2`` and an
intercept calibrated to the target index fraction. Treatment is a fair coin
within each source ({1, 0} in the index trial, {2, 0} externally), and
outcomes are linear in X with slopes (1, 1, 1) under arms 1 and 2 and
(-1, -1, -1) under arm 0, plus N(0, 1) noise. Mean transportability holds
for every arm, so psi, phi and delta are all 0.

Sampled individuals are drawn directly from the covariate law: uniform
selection from an infinite superpopulation leaves that law unchanged.
"""

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import special

from . import glm
from .errors import EstimationError, ScenarioFailure
from .estimators import ESTIMANDS, METHODS, estimate_all, fit_nuisances, required_cells
from .tabular import CompositeDataset, TreatmentCoding

CODING = TreatmentCoding.standard(index_only=1, external_only=2, shared_arm=0)
COVARIATES = ("x1", "x2", "x3")
CALIBRATION_SEED = 20240531
MAX_FAILED_FRACTION = 0.01


@dataclass(frozen=True)
class DgpParams:
    k: int = 3
    cov: float = 0.5
    alpha_slopes: tuple = (np.log(2),) * 3
    treat_prob: float = 0.5
    upsilon1: tuple = (1.0, 1.0, 1.0)
    upsilon2: tuple = (1.0, 1.0, 1.0)
    upsilon0: tuple = (-1.0, -1.0, -1.0)
    upsilon_intercept: float = 0.0
    noise_sd: float = 1.0

    def __post_init__(self):
        if self.k > 1 and not -1.0 / (self.k - 1) < self.cov < 1.0:
            raise ValueError(f"cov={self.cov} does not give a positive-definite covariance")
        if not 0 < self.treat_prob < 1:
            raise ValueError("treat_prob must lie in (0, 1)")
        for name in ("alpha_slopes", "upsilon1", "upsilon2", "upsilon0"):
            vec = tuple(float(v) for v in getattr(self, name))
            if len(vec) != self.k:
                raise ValueError(f"{name} needs {self.k} entries")
            object.__setattr__(self, name, vec)

    def covariance(self):
        sigma = np.full((self.k, self.k), self.cov)
        np.fill_diagonal(sigma, 1.0)
        return sigma

    def slopes(self, arm):
        return np.array({1: self.upsilon1, 2: self.upsilon2, 0: self.upsilon0}[arm])


@dataclass(frozen=True)
class SimulationScenario:
    n1: int = 500
    n0: int = 500
    misspecify_pe: bool = False
    misspecify_g: bool = False
    iterations: int = 1000
    base_seed: int = 1
    methods: tuple = METHODS
    estimands: tuple = ESTIMANDS
    name: str = ""

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.n1 < 20 or self.n0 < 20:
            raise ValueError("each source needs a target size of at least 20")
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "estimands", tuple(self.estimands))
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")
        for e in self.estimands:
            if e not in ESTIMANDS:
                raise ValueError(f"unknown estimand {e!r}")

    @property
    def n(self):
        return self.n1 + self.n0


@dataclass(frozen=True)
class MetricsRow:
    estimand: str
    method: str
    bias: float
    empirical_se: float
    mse: float
    iterations_used: int
    scenario: str = ""

    @property
    def degenerate(self):
        return self.iterations_used < 2


@dataclass
class ScenarioResult:
    """Per-iteration estimates plus the summary rows."""

    scenario: SimulationScenario
    rows: list
    estimates: dict
    failed: int = 0
    source_sizes: np.ndarray = field(default=None, repr=False)


# ---------------------------------------------------------------------------
# data generation


def draw_covariates(n, params, rng):
    """``n`` rows of correlated standard normals via a Cholesky factor."""
    try:
        chol = np.linalg.cholesky(params.covariance())
    except np.linalg.LinAlgError:
        raise ValueError("covariance matrix is not positive definite") from None
    return rng.standard_normal((n, params.k)) @ chol.T


def calibrate_alpha0(params, target_fraction, calib_draws=1_000_000, seed=CALIBRATION_SEED):
    """Intercept giving ``mean(expit(alpha0 + alpha'X)) == target_fraction``.

    Bisection over a fixed Monte-Carlo sample of ``calib_draws`` covariate
    rows; deterministic given ``seed``.
    """
    if not 0.01 < target_fraction < 0.99:
        raise ValueError("target_fraction must lie in (0.01, 0.99)")
    return _calibrate(params, float(target_fraction), int(calib_draws), int(seed))


@lru_cache(maxsize=64)
def _calibrate(params, target, draws, seed):
    lin = draw_covariates(draws, params, np.random.default_rng(seed)) @ np.array(params.alpha_slopes)

    def excess(a0):
        return float(np.mean(special.expit(a0 + lin))) - target

    lo, hi = -50.0, 50.0
    assert excess(lo) < 0 < excess(hi), "bisection bracket failed"
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if excess(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    return 0.5 * (lo + hi)


def iteration_rng(base_seed, iteration, attempt=0):
    return np.random.default_rng([int(base_seed), int(iteration), int(attempt)])


def generate_dataset(scenario, params, iteration, alpha0=None):
    """One simulated composite dataset.

    Source membership is Bernoulli per row, so realized sizes fluctuate
    around the targets. If a draw lands entirely in one source it is redrawn
    from the next sub-stream (at most 10 attempts).
    """
    if alpha0 is None:
        alpha0 = calibrate_alpha0(params, scenario.n1 / scenario.n)
    for attempt in range(10):
        rng = iteration_rng(scenario.base_seed, iteration, attempt)
        ds = _draw(scenario.n, params, alpha0, rng)
        if ds is not None:
            return ds
    raise EstimationError(f"iteration {iteration}: every draw was single-source")


def _draw(n, params, alpha0, rng):
    x = draw_covariates(n, params, rng)
    s = (rng.random(n) < special.expit(alpha0 + x @ np.array(params.alpha_slopes))).astype(int)
    if s.min() == s.max():
        return None
    treated = rng.random(n) < params.treat_prob
    a = np.where(treated, np.where(s == 1, 1, 2), 0)
    eps = rng.standard_normal(n) * params.noise_sd
    y = params.upsilon_intercept + eps
    for arm in (0, 1, 2):
        m = a == arm
        y[m] += x[m] @ params.slopes(arm)
    return CompositeDataset(x, s, a, y, CODING, COVARIATES)


# ---------------------------------------------------------------------------
# running scenarios


def scenario_specs(scenario):
    full = COVARIATES
    pe = () if scenario.misspecify_pe else full
    g = () if scenario.misspecify_g else full
    return (glm.ModelSpec("bernoulli-logit", pe), glm.ModelSpec("bernoulli-logit", pe),
            glm.ModelSpec("gaussian-identity", g))


def run_iteration(scenario, params, iteration, alpha0=None):
    """Estimates for one iteration as ``{(estimand, method): value}``."""
    ds = generate_dataset(scenario, params, iteration, alpha0)
    part, treat, out = scenario_specs(scenario)
    ns = fit_nuisances(ds, part, treat, out, required_cells(ds.coding, scenario.estimands))
    est = estimate_all(ds, ns, scenario.methods, scenario.estimands)
    return {key: ce.value for key, ce in est.items()}, ds.n1


def _run_block(args):
    scenario, params, start, stop, alpha0 = args
    out = []
    for it in range(start, stop):
        try:
            out.append(run_iteration(scenario, params, it, alpha0))
        except EstimationError:
            out.append(None)
    return out


def run_scenario(scenario, params=None, workers=1, truth=0.0):
    """Run all iterations and summarize bias, empirical SE and MSE.

    Iterations are seeded by ``(base_seed, iteration)`` alone, so the numbers
    do not depend on ``workers``. Failed iterations are dropped; more than
    1% failures raises :class:`ScenarioFailure`.
    """
    params = params or DgpParams()
    alpha0 = calibrate_alpha0(params, scenario.n1 / scenario.n)
    bounds = np.linspace(0, scenario.iterations, max(1, min(workers * 4, scenario.iterations)) + 1)
    blocks = [(scenario, params, int(lo), int(hi), alpha0)
              for lo, hi in zip(bounds[:-1], bounds[1:]) if int(hi) > int(lo)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = [r for block in pool.map(_run_block, blocks) for r in block]
    else:
        results = [r for block in map(_run_block, blocks) for r in block]

    ok = [r for r in results if r is not None]
    failed = len(results) - len(ok)
    if failed > MAX_FAILED_FRACTION * scenario.iterations:
        raise ScenarioFailure(
            f"scenario {scenario.name or ''}: {failed} of {scenario.iterations} iterations failed")
    keys = [(e, m) for e in scenario.estimands for m in scenario.methods]
    estimates = {k: np.array([r[0][k] for r in ok]) for k in keys}
    rows = [summarize_estimates(e, m, estimates[(e, m)], truth, scenario.name) for e, m in keys]
    sizes = np.array([r[1] for r in ok])
    return ScenarioResult(scenario, rows, estimates, failed, sizes)


def summarize_estimates(estimand, method, values, truth=0.0, scenario=""):
    values = np.asarray(values, dtype=float)
    n = len(values)
    bias = float(np.mean(values) - truth) if n else float("nan")
    var = float(np.var(values, ddof=1)) if n > 1 else 0.0
    return MetricsRow(estimand, method, bias, float(np.sqrt(var)), bias * bias + var, n, scenario)


# ---------------------------------------------------------------------------
# scenario grids


def table2_scenarios(iterations=10_000, base_seed=1):
    sizes = [(500, 500), (800, 200), (200, 800), (1000, 1000), (5000, 5000)]
    return [SimulationScenario(n1, n0, iterations=iterations, base_seed=base_seed + i,
                               name=f"correct_n1_{n1}_n0_{n0}")
            for i, (n1, n0) in enumerate(sizes)]


def table3_scenarios(iterations=10_000, base_seed=101):
    flags = [("misspec_pe", True, False), ("misspec_g", False, True), ("misspec_all", True, True)]
    return [SimulationScenario(5000, 5000, pe, g, iterations, base_seed + i, name=name)
            for i, (name, pe, g) in enumerate(flags)]


# ---------------------------------------------------------------------------
# reporting

METRIC_COLUMNS = ("estimand", "method", "bias", "se", "mse", "iterations_used")
_ESTIMAND_ORDER = {e: i for i, e in enumerate(ESTIMANDS)}
_METHOD_ORDER = {m: i for i, m in enumerate(METHODS)}


def _sorted(rows):
    return sorted(rows, key=lambda r: (r.scenario, _ESTIMAND_ORDER.get(r.estimand, 99),
                                       _METHOD_ORDER.get(r.method, 99)))


def metrics_csv(rows, with_scenario=False):
    """CSV text; floats use ``repr`` so parsing recovers them exactly."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    cols = (("scenario",) if with_scenario else ()) + METRIC_COLUMNS
    writer.writerow(cols)
    for r in _sorted(rows):
        line = [r.estimand, r.method, repr(r.bias), repr(r.empirical_se), repr(r.mse),
                r.iterations_used]
        writer.writerow(([r.scenario] if with_scenario else []) + line)
    return buf.getvalue()


def parse_metrics_csv(text):
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        rows.append(MetricsRow(rec["estimand"], rec["method"], float(rec["bias"]),
                               float(rec["se"]), float(rec["mse"]), int(rec["iterations_used"]),
                               rec.get("scenario", "")))
    return rows


def summarize_metrics(rows):
    """Aligned text table with 4-decimal metrics, sorted by (estimand, method)."""
    header = f"{'estimand':<9}{'method':<7}{'bias':>10}{'se':>10}{'mse':>10}{'iters':>8}"
    lines = [header]
    for r in _sorted(rows):
        flag = "  (se degenerate)" if r.degenerate else ""
        lines.append(f"{r.estimand:<9}{r.method:<7}{r.bias:>10.4f}{r.empirical_se:>10.4f}"
                     f"{r.mse:>10.4f}{r.iterations_used:>8d}{flag}")
    return "\n".join(lines) + "\n"


def with_overrides(scenario, **changes):
    return replace(scenario, **{k: v for k, v in changes.items() if v is not None})
