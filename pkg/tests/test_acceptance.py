"""Acceptance criteria, each reported as a single PASS/FAIL line.

Tolerances are the contract values; nothing here is tuned to the outcome.
Seeds were fixed before the checks were first run.
"""

import json

import numpy as np
import pytest
from scipy import special

import oracle
from extcomp import cli
from extcomp import estimators as est
from extcomp import glm
from extcomp import inference as inf
from extcomp import simulation as sim
from extcomp.errors import Separation
from extcomp.tabular import CompositeDataset, write_csv

MISSPEC_PSI = 2.7689
MISSPEC_PHI = 5.5370


def _simulate(config, out):
    assert cli.main(["simulate", "--config", config, "--out", str(out)]) == 0
    rows = sim.parse_metrics_csv((out / "metrics.csv").read_text())
    return {(r.scenario, r.estimand, r.method): r for r in rows}


def _fmt(pairs):
    return ", ".join(f"{k}={v:.4f}" for k, v in pairs)


# ---------------------------------------------------------------------------
# 1. oracle equivalence


def test_c1_oracle_equivalence(six_rows, verdict):
    ds, ns = six_rows
    worst = 0.0
    for method in est.METHODS:
        for cell in oracle.CELLS:
            got = est.GAMMA[method](ds, ns, *cell).value
            worst = max(worst, abs(got - float(oracle.gamma(cell, method))))
        out = est.estimate_all(ds, ns, [method])
        for name, fn in (("psi", oracle.psi), ("phi", oracle.phi), ("delta", oracle.delta)):
            worst = max(worst, abs(out[(name, method)].value - float(fn(method))))
    verdict("C1 oracle equivalence (6 methods x 4 cells + psi/phi/delta, tol 1e-10)",
            worst <= 1e-10, f"max abs error {worst:.2e}")


# ---------------------------------------------------------------------------
# 2. correctly specified simulation, n1 = n0 = 500


def test_c2_correct_models_desk(tmp_path, verdict):
    m = _simulate("table2_desk", tmp_path)
    key = lambda e, meth: m[("correct_n1_500_n0_500", e, meth)]
    psi, phi = key("psi", "AW1"), key("phi", "AW1")
    checks = {
        "psi bias": abs(psi.bias) <= 0.015,
        "psi se": 0.178 <= psi.empirical_se <= 0.218,
        "phi bias": abs(phi.bias) <= 0.025,
        "phi se": 0.267 <= phi.empirical_se <= 0.327,
        "OM<AW1<W1": (key("psi", "OM").empirical_se < psi.empirical_se
                      < key("psi", "W1").empirical_se),
        "psi<phi": all(key("psi", mt).empirical_se < key("phi", mt).empirical_se
                       for mt in est.METHODS),
    }
    failed = [k for k, ok in checks.items() if not ok]
    detail = _fmt([("psi_bias", psi.bias), ("psi_se", psi.empirical_se),
                   ("phi_bias", phi.bias), ("phi_se", phi.empirical_se)])
    verdict("C2 correct models, 500+500, 2000 iterations", not failed,
            detail + (f"; failed: {', '.join(failed)}" if failed else ""))


# ---------------------------------------------------------------------------
# 3. misspecified simulation, n = 10,000


def test_c3_multiple_robustness(tmp_path, verdict):
    m = _simulate("table3_desk", tmp_path)
    near = lambda v, want, tol: abs(v - want) <= tol
    checks = {}
    a = lambda e, meth: m[("misspec_pe", e, meth)]
    checks["a psi AW1"] = abs(a("psi", "AW1").bias) <= 0.01
    for meth in ("W1", "W2"):
        checks[f"a psi {meth}"] = near(a("psi", meth).bias, MISSPEC_PSI, 0.05)
        checks[f"a phi {meth}"] = near(a("phi", meth).bias, MISSPEC_PHI, 0.10)
    b = lambda e, meth: m[("misspec_g", e, meth)]
    checks["b psi AW1"] = abs(b("psi", "AW1").bias) <= 0.03
    checks["b psi OM"] = near(b("psi", "OM").bias, MISSPEC_PSI, 0.05)
    for meth in est.METHODS:
        row = m[("misspec_all", "psi", meth)]
        checks[f"c psi {meth} bias"] = near(row.bias, MISSPEC_PSI, 0.05)
        checks[f"c psi {meth} se"] = 0.75 * 0.0571 <= row.empirical_se <= 1.25 * 0.0571
    failed = [k for k, ok in checks.items() if not ok]
    detail = _fmt([("a_AW1", a("psi", "AW1").bias), ("a_W1", a("psi", "W1").bias),
                   ("a_phiW1", a("phi", "W1").bias), ("b_AW1", b("psi", "AW1").bias),
                   ("b_OM", b("psi", "OM").bias),
                   ("c_AW1", m[("misspec_all", "psi", "AW1")].bias),
                   ("c_se", m[("misspec_all", "psi", "AW1")].empirical_se)])
    verdict("C3 multiple robustness, 5000+5000, 300 iterations", not failed,
            detail + (f"; failed: {', '.join(failed)}" if failed else ""))


# ---------------------------------------------------------------------------
# 4. efficiency gap and the psi/delta covariance


def test_c4_efficiency_gap(verdict):
    sc = sim.SimulationScenario(5000, 5000, iterations=200, base_seed=8675309)
    params = sim.DgpParams()
    alpha0 = sim.calibrate_alpha0(params, 0.5)
    specs = sim.scenario_specs(sc)
    wider, corr, identity = 0, [], 0.0
    for it in range(sc.iterations):
        ds = sim.generate_dataset(sc, params, it, alpha0)
        ns = est.fit_nuisances(ds, *specs, est.required_cells(ds.coding, ["phi"]))
        gap = inf.efficiency_gap(ds, ns)
        wider += gap.var_phi > gap.var_psi
        corr.append(gap.correlation)
        identity = max(identity, abs(gap.gap + 2 * gap.cov_psi_delta))
    share = wider / sc.iterations
    mean_corr = float(np.mean(corr))
    ok = share >= 0.95 and abs(mean_corr) <= 0.05 and identity <= 1e-10
    verdict("C4 var(phi) > var(psi), psi/delta covariance, gap identity", ok,
            f"share={share:.3f}, mean_corr={mean_corr:+.4f}, identity_err={identity:.1e}")


# ---------------------------------------------------------------------------
# 5. GLM correctness


def test_c5_glm(verdict):
    rng = np.random.default_rng(505)
    checks = {}
    # intercept-only closed forms
    logit = glm.fit_glm(glm.ModelSpec("bernoulli-logit"), np.empty((4, 0)), [1, 1, 1, 0])
    y = rng.normal(size=30)
    gauss = glm.fit_glm(glm.ModelSpec("gaussian-identity"), np.empty((30, 0)), y)
    cats = np.array([0] * 5 + [1] * 3 + [2] * 2)
    multi = glm.fit_glm(glm.ModelSpec("multinomial-logit"), np.empty((10, 0)), cats)
    checks["closed forms"] = (abs(logit.coefficients[0, 0] - np.log(3)) <= 1e-10
                              and abs(gauss.coefficients[0, 0] - y.mean()) <= 1e-10
                              and np.allclose(multi.coefficients[:, 0],
                                              np.log([3 / 5, 2 / 5]), atol=1e-10, rtol=0))
    # analytic vs central finite-difference score
    worst = 0.0
    for family, k in (("bernoulli-logit", 2), ("multinomial-logit", 3), ("gaussian-identity", 2)):
        for _ in range(10):
            n, p = int(rng.integers(10, 60)), int(rng.integers(1, 4))
            x1 = glm.add_intercept(rng.normal(size=(n, p)))
            w = rng.uniform(0.2, 2.0, n)
            yy = rng.normal(size=n) if family == "gaussian-identity" else \
                rng.integers(0, k, n).astype(float)
            beta = rng.normal(size=(k - 1 if family == "multinomial-logit" else 1) * (p + 1))
            analytic = glm.score(family, beta, x1, yy, w, k)
            h = 1e-6
            numeric = np.array([(glm.log_likelihood(family, beta + h * e, x1, yy, w, k)
                                 - glm.log_likelihood(family, beta - h * e, x1, yy, w, k)) / (2 * h)
                                for e in np.eye(len(beta))])
            worst = max(worst, np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(analytic)), 1))
    checks["score"] = worst <= 1e-6
    # multinomial rows sum to one
    x = rng.normal(size=(300, 2))
    lin = np.c_[np.zeros(300), x @ [1.0, -0.5], x @ [-0.3, 0.8]]
    draws = (special.softmax(lin, axis=1).cumsum(axis=1) > rng.random((300, 1))).argmax(axis=1)
    fit = glm.fit_glm(glm.ModelSpec("multinomial-logit"), x, draws)
    row_err = float(np.max(np.abs(glm.predict_class_probs(fit, rng.normal(size=(500, 2))).sum(1) - 1)))
    checks["rows sum"] = row_err <= 1e-12
    # separation
    try:
        glm.fit_glm(glm.ModelSpec("bernoulli-logit"), [[-2.0], [-1.0], [1.0], [2.0]], [0, 0, 1, 1])
        checks["separation"] = False
    except Separation:
        checks["separation"] = True
    failed = [k for k, ok in checks.items() if not ok]
    verdict("C5 GLM closed forms, score, multinomial normalization, separation", not failed,
            f"score_rel_err={worst:.1e}, row_sum_err={row_err:.1e}"
            + (f"; failed: {', '.join(failed)}" if failed else ""))


# ---------------------------------------------------------------------------
# 6. bootstrap coverage


@pytest.mark.slow
def test_c6_bootstrap_coverage(verdict):
    sc = sim.SimulationScenario(1000, 1000, iterations=400, base_seed=60606)
    params = sim.DgpParams()
    alpha0 = sim.calibrate_alpha0(params, 0.5)
    pipe = inf.EstimationConfig(*sim.scenario_specs(sc))
    covered = 0
    for rep in range(sc.iterations):
        ds = sim.generate_dataset(sc, params, rep, alpha0)
        r = inf.bootstrap(ds, pipe, "psi", "AW1", B=500, seed=rep)
        covered += r.ci_low <= 0.0 <= r.ci_high
    rate = covered / sc.iterations
    verdict("C6 bootstrap percentile coverage, n=2000, B=500, 400 replications",
            0.925 <= rate <= 0.975, f"coverage={rate:.4f}")


# ---------------------------------------------------------------------------
# 7. falsification test calibration and power


def _shared_arm_p(ds, specs):
    ns = est.fit_nuisances(ds, *specs, est.required_cells(ds.coding, ["delta"]))
    return inf.shared_arm_test(ds, ns).p_value


def test_c7_falsification_calibration(verdict):
    params = sim.DgpParams()
    alpha0 = sim.calibrate_alpha0(params, 0.5)
    null = sim.SimulationScenario(1000, 1000, iterations=400, base_seed=70707)
    specs = sim.scenario_specs(null)
    p_null = np.array([_shared_arm_p(sim.generate_dataset(null, params, it, alpha0), specs)
                       for it in range(null.iterations)])
    rate = float(np.mean(p_null < 0.05))

    alt = sim.SimulationScenario(1000, 1000, iterations=100, base_seed=70708)
    p_alt = []
    for it in range(alt.iterations):
        ds = sim.generate_dataset(alt, params, it, alpha0)
        shift = 5.0 * ((ds.s == 0) & (ds.a == 0))
        ds = CompositeDataset(ds.x, ds.s, ds.a, ds.y + shift, ds.coding, ds.covariate_names)
        p_alt.append(_shared_arm_p(ds, specs))
    worst = float(np.max(p_alt))
    verdict("C7 falsification: null rejection rate, +5 shift power", 0.025 <= rate <= 0.075
            and worst < 1e-3, f"null_rate={rate:.4f} (400 datasets), max_p_shift={worst:.1e} "
            "(100 runs)")


# ---------------------------------------------------------------------------
# 8. determinism across runs and worker counts


def test_c8_determinism(tmp_path, capsys, verdict):
    ds = sim.generate_dataset(sim.SimulationScenario(150, 150, iterations=1, base_seed=88),
                              sim.DgpParams(), 0)
    write_csv(ds, tmp_path / "d.csv")
    base = ('data.path = "d.csv"\ncoding.index_only = 1\ncoding.external_only = 2\n'
            'coding.shared = [0]\nmodels.covariates = ["x1", "x2", "x3"]\n'
            'estimate.methods = ["OM", "W1", "W2", "AW1", "AW2", "AW3"]\n'
            'inference.method = "bootstrap"\ninference.resamples = 60\ninference.seed = 9\n')
    sims = 'scenarios.small.n1 = 100\nscenarios.small.n0 = 100\nscenarios.small.iterations = 24\n'
    outputs = {}
    for workers in (1, 1, 3):
        tag = f"w{workers}_{len(outputs)}"
        (tmp_path / f"{tag}.cfg").write_text(base + f"inference.workers = {workers}\n")
        (tmp_path / f"{tag}_sim.cfg").write_text(sims + f"run.workers = {min(workers, 2)}\n")
        runs = [["estimate", "--config", tmp_path / f"{tag}.cfg", "--out", tmp_path / tag / "e"],
                ["diagnose", "--config", tmp_path / f"{tag}.cfg", "--out", tmp_path / tag / "d"],
                ["simulate", "--config", tmp_path / f"{tag}_sim.cfg", "--out", tmp_path / tag / "s"]]
        stdout = []
        for argv in runs:
            assert cli.main([str(a) for a in argv]) == 0
            stdout.append(capsys.readouterr().out)
        files = sorted(p for p in (tmp_path / tag).rglob("*") if p.is_file())
        outputs[tag] = ({p.relative_to(tmp_path / tag).as_posix(): p.read_bytes() for p in files},
                        stdout)
    first, *rest = outputs.values()
    same = all(o == first for o in rest)
    doc = json.loads(first[0]["e/estimates.json"])
    boot = all(r["inference"] == "bootstrap-percentile" for r in doc["estimates"])
    verdict("C8 byte-identical estimate/diagnose/simulate output across runs and workers",
            same and boot and len(first[0]) == 6,
            f"{len(first[0])} files x {len(outputs)} runs (workers 1, 1, 3)")
