"""Command-line entry point: ``extcomp estimate | simulate | diagnose``.

Configuration files are TOML restricted to dotted keys, e.g.::

    data.path = "trial.csv"
    coding.index_only = 1
    coding.external_only = 2
    coding.shared = [0]
    models.covariates = ["x1", "x2"]
    estimate.methods = ["AW1", "OM"]

Every key is checked against a fixed schema; unknown keys are rejected.
Relative paths resolve against the configuration file's directory. A bare
name such as ``table2_desk`` resolves to a configuration bundled with the
package.
"""

import argparse
import json
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import estimators as est
from . import inference as inf
from . import simulation as sim
from .errors import ConfigError, DataError, ExtCompError
from .glm import FAMILIES, ModelSpec
from .tabular import TreatmentCoding, read_csv

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

# flattened key -> expected value type
_LIST_STR = "list[str]"
_LIST_INT = "list[int]"
ESTIMATE_KEYS = {
    "data.path": str,
    "data.drop_incomplete": bool,
    "data.covariates": _LIST_STR,
    "coding.index_arms": _LIST_INT,
    "coding.external_arms": _LIST_INT,
    "coding.index_only": int,
    "coding.external_only": int,
    "coding.shared": _LIST_INT,
    "models.covariates": _LIST_STR,
    "models.participation.covariates": _LIST_STR,
    "models.treatment.covariates": _LIST_STR,
    "models.outcome.covariates": _LIST_STR,
    "models.outcome.family": str,
    "estimate.estimands": _LIST_STR,
    "estimate.methods": _LIST_STR,
    "estimate.scale": str,
    "inference.method": str,
    "inference.resamples": int,
    "inference.seed": int,
    "inference.level": float,
    "inference.workers": int,
    "nuisance.truncate": float,
    "nuisance.known_e": dict,
}
SIMULATE_KEYS = {
    "dgp.cov": float,
    "dgp.alpha_slopes": "list[float]",
    "dgp.treat_prob": float,
    "dgp.upsilon1": "list[float]",
    "dgp.upsilon2": "list[float]",
    "dgp.upsilon0": "list[float]",
    "dgp.upsilon_intercept": float,
    "dgp.noise_sd": float,
    "run.workers": int,
}
SCENARIO_FIELDS = {
    "n1": int, "n0": int, "misspecify_pe": bool, "misspecify_g": bool,
    "iterations": int, "base_seed": int, "methods": _LIST_STR, "estimands": _LIST_STR,
}


# ---------------------------------------------------------------------------
# configuration


def resolve_config(name):
    """A filesystem path, or the name of a bundled configuration."""
    path = Path(name)
    if path.exists():
        return path
    bundled = resources.files("extcomp") / "data"
    for candidate in (name, f"{name}.cfg"):
        ref = bundled / candidate
        if ref.is_file():
            return Path(str(ref))
    raise ConfigError(f"configuration file {name!r} not found")


def _flatten(table, prefix=""):
    out = {}
    for key, value in table.items():
        full = f"{prefix}{key}"
        if isinstance(value, dict) and full != "nuisance.known_e":
            out.update(_flatten(value, full + "."))
        else:
            out[full] = value
    return out


def _check_type(key, value, kind):
    ok = {
        str: isinstance(value, str),
        bool: isinstance(value, bool),
        int: isinstance(value, int) and not isinstance(value, bool),
        float: isinstance(value, (int, float)) and not isinstance(value, bool),
        dict: isinstance(value, dict),
        _LIST_STR: isinstance(value, list) and all(isinstance(v, str) for v in value),
        _LIST_INT: isinstance(value, list) and all(
            isinstance(v, int) and not isinstance(v, bool) for v in value),
        "list[float]": isinstance(value, list) and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value),
    }[kind]
    if not ok:
        name = kind if isinstance(kind, str) else kind.__name__
        raise ConfigError(f"config key {key!r}: expected {name}, got {value!r}")
    return float(value) if kind is float else value


def read_config(path, schema):
    """Parse and validate a dotted-key configuration file into a flat dict."""
    path = resolve_config(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    flat = _flatten(raw)
    out = {}
    for key, value in flat.items():
        if key in schema:
            out[key] = _check_type(key, value, schema[key])
            continue
        parts = key.split(".")
        if schema is SIMULATE_KEYS and len(parts) == 3 and parts[0] == "scenarios":
            if parts[2] not in SCENARIO_FIELDS:
                raise ConfigError(f"unknown config key {key!r}")
            out[key] = _check_type(key, value, SCENARIO_FIELDS[parts[2]])
            continue
        raise ConfigError(f"unknown config key {key!r}")
    out["_dir"] = path.parent
    return out


def parse_known_e(spec):
    """``"1:1=0.5,1:0=0.5"`` or a ``{"s:a": p}`` table -> ``{(s, a): p}``."""
    items = spec.items() if isinstance(spec, dict) else (
        part.split("=", 1) for part in spec.split(",") if part.strip())
    out = {}
    for key, value in items:
        try:
            s, a = (int(v) for v in str(key).split(":"))
            p = float(value)
        except ValueError:
            raise ConfigError(f"bad known-e entry {key}={value}; expected s:a=probability") from None
        if not 0 < p <= 1:
            raise ConfigError(f"known-e probability for {key} must lie in (0, 1]")
        out[(s, a)] = p
    return out


def _estimation_setup(cfg, args):
    """Coding, dataset and pipeline settings from a validated config plus flags."""
    for key in ("coding.index_only", "coding.external_only"):
        if key not in cfg:
            raise ConfigError(f"missing required config key {key!r}")
    shared = cfg.get("coding.shared", [])
    index_only, external_only = cfg["coding.index_only"], cfg["coding.external_only"]
    index_arms = cfg.get("coding.index_arms", [index_only, *shared])
    external_arms = cfg.get("coding.external_arms", [external_only, *shared])
    try:
        coding = TreatmentCoding(frozenset(index_arms), frozenset(external_arms), index_only,
                                 external_only, shared[0] if shared else None)
    except DataError as exc:
        raise ConfigError(f"treatment coding: {exc}") from None
    if set(shared) - coding.shared_arms:
        raise ConfigError(f"coding.shared lists arms not present in both sources: {shared}")

    common = cfg.get("models.covariates")
    covs = {}
    for role in ("participation", "treatment", "outcome"):
        covs[role] = cfg.get(f"models.{role}.covariates", common)
        if covs[role] is None:
            raise ConfigError(f"no covariates for the {role} model "
                              f"(set models.covariates or models.{role}.covariates)")
    family = cfg.get("models.outcome.family", "gaussian-identity")
    if family not in FAMILIES or family == "multinomial-logit":
        raise ConfigError(f"models.outcome.family: unsupported family {family!r}")
    columns = cfg.get("data.covariates") or sorted(set().union(*covs.values()))

    data = args.data or cfg.get("data.path")
    if data is None:
        raise ConfigError("no data file (set data.path or pass --data)")
    data_path = Path(data)
    if not data_path.is_absolute() and args.data is None:
        data_path = cfg["_dir"] / data_path
    if not data_path.exists():
        raise DataError(f"data file {str(data_path)!r} not found")
    drop = args.drop_incomplete or cfg.get("data.drop_incomplete", False)
    ds, dropped = read_csv(data_path, coding, columns, drop_incomplete=drop)

    estimands = cfg.get("estimate.estimands", ["psi", "phi"] if shared else ["psi"])
    methods = cfg.get("estimate.methods", ["AW1"])
    for e in estimands:
        if e not in est.ESTIMANDS:
            raise ConfigError(f"estimate.estimands: unknown estimand {e!r}")
    for m in methods:
        if m not in est.METHODS:
            raise ConfigError(f"estimate.methods: unknown method {m!r}")
    scale = cfg.get("estimate.scale", "difference")
    if scale not in ("difference", "ratio"):
        raise ConfigError(f"estimate.scale: expected 'difference' or 'ratio', got {scale!r}")
    if scale == "ratio" and estimands != ["psi"]:
        raise ConfigError("estimate.scale = 'ratio' is only available for psi alone")

    truncate = args.truncate if args.truncate is not None else cfg.get("nuisance.truncate")
    if truncate is not None and not 0 < truncate < 0.5:
        raise ConfigError("truncation bound must lie in (0, 0.5)")
    known_e = None
    if args.known_e is not None:
        known_e = parse_known_e(args.known_e)
    elif "nuisance.known_e" in cfg:
        known_e = parse_known_e(cfg["nuisance.known_e"])

    pipeline = inf.EstimationConfig(
        ModelSpec("bernoulli-logit", tuple(covs["participation"])),
        ModelSpec("bernoulli-logit", tuple(covs["treatment"])),
        ModelSpec(family, tuple(covs["outcome"])),
        shared_arm=None, scale=scale, truncate=truncate, known_e=known_e)
    return ds, dropped, pipeline, estimands, methods, shared


# ---------------------------------------------------------------------------
# estimate / diagnose


def _num(x):
    """JSON-safe float: ``repr`` precision, non-finite values as strings."""
    x = float(x)
    return x if np.isfinite(x) else repr(x)


def _inference_settings(cfg, args):
    method = cfg.get("inference.method", "if-plugin")
    if method not in ("if-plugin", "bootstrap"):
        raise ConfigError(f"inference.method: expected 'if-plugin' or 'bootstrap', got {method!r}")
    seed = args.seed if args.seed is not None else cfg.get("inference.seed", 0)
    resamples = cfg.get("inference.resamples", 1000)
    if method == "bootstrap" and resamples < 2:
        raise ConfigError("inference.resamples must be at least 2")
    level = cfg.get("inference.level", 0.95)
    if not 0 < level < 1:
        raise ConfigError("inference.level must lie in (0, 1)")
    return method, int(seed), int(resamples), float(level), int(cfg.get("inference.workers", 1))


def _estimate_block(ds, pipeline, estimands, methods, inference):
    """One result record per (estimand, method) for a fixed shared arm."""
    method, seed, resamples, level, workers = inference
    points = pipeline.run_all(ds, estimands, methods)
    boot = None
    if method == "bootstrap":
        boot = inf.bootstrap_many(ds, pipeline, estimands, methods, resamples, seed, level,
                                  workers)
    records = []
    for (estimand, m), ce in points.items():
        rec = {"estimand": estimand, "method": m, "scale": ce.scale,
               "shared_arm": ce.shared_arm_used, "point": _num(ce.value),
               "gammas": {f"{s},{a}": _num(v) for (s, a), v in sorted(ce.gammas.items())}}
        if ce.lambda_hat is not None:
            rec["lambda"] = _num(ce.lambda_hat)
        if boot is not None:
            r = boot[(estimand, m)]
            rec.update(se=_num(r.se), ci_low=_num(r.ci_low), ci_high=_num(r.ci_high),
                       inference="bootstrap-percentile", level=level, resamples=resamples,
                       seed=seed, failed_resamples=r.failed_resamples)
        elif ce.if_contributions is not None:
            r = inf.if_variance(ce, ds.n, level)
            rec.update(se=_num(r.se), ci_low=_num(r.ci_low), ci_high=_num(r.ci_high),
                       inference="if-plugin", level=level)
        else:
            rec.update(se=None, ci_low=None, ci_high=None, inference="none", level=level,
                       note="no influence contributions for this method; "
                            "set inference.method = 'bootstrap'")
        records.append(rec)
    return records


def _falsification(ds, pipeline, a0):
    cells = est.required_cells(ds.coding, ["delta"], a0)
    ns = est.fit_nuisances(ds, pipeline.participation, pipeline.treatment, pipeline.outcome,
                           cells, truncate=pipeline.truncate, known_e=pipeline.known_e)
    rep = inf.shared_arm_test(ds, ns, a0)
    return {"shared_arm": a0, "delta_hat": _num(rep.delta_hat), "se": _num(rep.se),
            "z": _num(rep.z), "p_value": _num(rep.p_value),
            "standardized_prediction_gap": _num(rep.standardized_prediction_gap),
            "interpretation": rep.interpretation()}


def _fmt(v, width=11):
    if v is None:
        return f"{'-':>{width}}"
    if isinstance(v, str):
        return f"{v:>{width}}"
    return f"{v:>{width}.4f}"


def render_estimates(doc):
    lines = [f"n = {doc['data']['n']} (index {doc['data']['n1']}, external "
             f"{doc['data']['n0']}, dropped {doc['data']['dropped_rows']})", ""]
    lines.append(f"{'estimand':<9}{'shared':>7} {'method':<7}{'point':>11}{'se':>11}"
                 f"{'ci_low':>11}{'ci_high':>11}  inference")
    for r in doc["estimates"]:
        shared = "-" if r["shared_arm"] is None else str(r["shared_arm"])
        lines.append(f"{r['estimand']:<9}{shared:>7} {r['method']:<7}{_fmt(r['point'])}"
                     f"{_fmt(r['se'])}{_fmt(r['ci_low'])}{_fmt(r['ci_high'])}  {r['inference']}")
    for f in doc["falsification"]:
        lines += ["", _render_falsification(f)]
    return "\n".join(lines) + "\n"


def _render_falsification(f):
    return "\n".join([
        f"shared-arm check (arm {f['shared_arm']})",
        f"  delta_hat = {_fmt(f['delta_hat'], 0)}   se = {_fmt(f['se'], 0)}   "
        f"z = {_fmt(f['z'], 0)}   p = {f['p_value']:.4g}",
        f"  standardized prediction gap = {_fmt(f['standardized_prediction_gap'], 0)}",
        f"  {f['interpretation']}",
    ])


def dump_document(doc):
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def cmd_estimate(args):
    cfg = read_config(args.config, ESTIMATE_KEYS)
    ds, dropped, pipeline, estimands, methods, shared = _estimation_setup(cfg, args)
    inference = _inference_settings(cfg, args)
    needs_shared = [e for e in estimands if e != "psi"]
    if needs_shared and not shared:
        est._shared(ds.coding, None)  # raises MissingSharedArm
    records = []
    if "psi" in estimands:
        records += _estimate_block(ds, pipeline, ["psi"], methods, inference)
    for a0 in shared if needs_shared else []:
        records += _estimate_block(ds, replace(pipeline, shared_arm=a0), needs_shared, methods,
                                   inference)
    falsification = [_falsification(ds, pipeline, a0) for a0 in shared]
    doc = {"data": {"n": ds.n, "n1": ds.n1, "n0": ds.n0, "dropped_rows": dropped},
           "estimates": records, "falsification": falsification}
    _emit(args, "estimates.json", dump_document(doc), "estimates.txt", render_estimates(doc))
    return 0


def cmd_diagnose(args):
    cfg = read_config(args.config, ESTIMATE_KEYS)
    ds, dropped, pipeline, _, _, shared = _estimation_setup(cfg, args)
    if not shared:
        est._shared(ds.coding, None)
    reports = [_falsification(ds, pipeline, a0) for a0 in shared]
    text = "\n\n".join(_render_falsification(f) for f in reports) + "\n"
    doc = {"data": {"n": ds.n, "n1": ds.n1, "n0": ds.n0, "dropped_rows": dropped},
           "falsification": reports}
    _emit(args, "diagnose.json", dump_document(doc), "diagnose.txt", text)
    return 0


def _emit(args, json_name, json_text, txt_name, txt):
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / json_name).write_text(json_text, encoding="utf-8")
        (out / txt_name).write_text(txt, encoding="utf-8")
    sys.stdout.write(txt)


# ---------------------------------------------------------------------------
# simulate


def _simulation_plan(cfg, args):
    dgp = {k.split(".", 1)[1]: (tuple(v) if isinstance(v, list) else v)
           for k, v in cfg.items() if k.startswith("dgp.")}
    try:
        params = sim.DgpParams(**dgp)
    except ValueError as exc:
        raise ConfigError(f"dgp: {exc}") from None
    if args.full:
        scenarios = sim.table2_scenarios(10_000) + sim.table3_scenarios(10_000)
    else:
        grouped = {}
        for key, value in cfg.items():
            if key.startswith("scenarios."):
                _, name, fld = key.split(".")
                grouped.setdefault(name, {})[fld] = value
        if not grouped:
            raise ConfigError("no scenarios defined (add scenarios.<name>.n1 etc.)")
        scenarios = []
        for name, fields in grouped.items():
            for f in ("methods", "estimands"):
                if f in fields:
                    fields[f] = tuple(fields[f])
            try:
                scenarios.append(sim.SimulationScenario(name=name, **fields))
            except ValueError as exc:
                raise ConfigError(f"scenarios.{name}: {exc}") from None
    scenarios = [sim.with_overrides(s, iterations=args.iterations,
                                    base_seed=None if args.seed is None else args.seed + i)
                 for i, s in enumerate(scenarios)]
    return params, scenarios


def cmd_simulate(args):
    cfg = read_config(args.config, SIMULATE_KEYS) if args.config else {}
    if not args.config and not args.full:
        raise ConfigError("simulate needs --config or --full")
    params, scenarios = _simulation_plan(cfg, args)
    workers = int(cfg.get("run.workers", 1))
    rows, blocks = [], []
    for sc in scenarios:
        res = sim.run_scenario(sc, params, workers=workers)
        rows += res.rows
        blocks.append(f"[{sc.name}] n1={sc.n1} n0={sc.n0} misspecify_pe={sc.misspecify_pe} "
                      f"misspecify_g={sc.misspecify_g} iterations={sc.iterations} "
                      f"failed={res.failed}\n" + sim.summarize_metrics(res.rows))
    text = "\n".join(blocks)
    csv_text = sim.metrics_csv(rows, with_scenario=True)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(csv_text, encoding="utf-8")
        (out / "metrics.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    parser = argparse.ArgumentParser(
        prog="extcomp", description="External-comparator estimation and simulation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="TOML configuration file or bundled configuration name")
        p.add_argument("--out", help="directory for output files")
        p.add_argument("--seed", type=int, help="override the configured seed")

    for name, helptext in (("estimate", "estimate psi/phi with standard errors"),
                           ("diagnose", "shared-arm falsification check")):
        p = sub.add_parser(name, help=helptext)
        common(p)
        p.add_argument("--data", help="CSV file (overrides data.path)")
        p.add_argument("--drop-incomplete", action="store_true",
                       help="drop rows with missing values instead of failing")
        p.add_argument("--known-e", help="known treatment probabilities, e.g. 1:1=0.5,1:0=0.5")
        p.add_argument("--truncate", type=float, metavar="EPS",
                       help="clip fitted probabilities into [EPS, 1-EPS]")
    p = sub.add_parser("simulate", help="run Monte-Carlo scenarios")
    common(p, config_required=False)
    p.add_argument("--iterations", type=int, help="override iterations for every scenario")
    p.add_argument("--full", action="store_true",
                   help="run the full correct/misspecified grid at 10,000 iterations each")
    return parser


_STAGES = {2: "config", 3: "data", 4: "estimation", 5: "simulation"}
COMMANDS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "diagnose": cmd_diagnose}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ExtCompError as exc:
        stage = _STAGES.get(exc.exit_code, "error")
        print(f"error [{stage}: {type(exc).__name__}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error [data: {type(exc).__name__}]: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
