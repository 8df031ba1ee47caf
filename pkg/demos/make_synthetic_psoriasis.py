"""Build the bundled synthetic two-trial psoriasis dataset.

Layout mirrors a head-to-head trial (etanercept vs two ustekinumab doses) in
the index source and a placebo-controlled trial (placebo vs the same two
doses) as the external source. Covariates and outcomes are simulated, so
only the schema and rough marginal rates resemble real trials.

Arm codes: 1 etanercept (index only), 2 placebo (external only),
0 ustekinumab 45mg and 3 ustekinumab 90mg (both sources).

Run:  python3 demos/make_synthetic_psoriasis.py [output.csv]
"""

import sys
from pathlib import Path

import numpy as np
from scipy.special import expit

from extcomp import TreatmentCoding, write_csv
from extcomp.tabular import CompositeDataset

COVARIATES = ("age", "male", "bsa", "pasi", "psa", "smoker", "diabetes",
              "prior_photo", "prior_systemic", "prior_biologic")
CODING = TreatmentCoding(frozenset({1, 0, 3}), frozenset({2, 0, 3}), 1, 2, 0)
SEED = 20100315


def draw_source(rng, n, index):
    # rough marginal profiles; the external trial enrolled older patients
    # with more prior biologic use
    age = rng.normal(41.0 if index else 45.0, 13.0, n).clip(18, 85)
    bsa = rng.gamma(2.6, 10.0, n).clip(10, 95)
    pasi = (12 + rng.gamma(1.6, 5.0, n)).clip(12, 60)
    binary = [
        rng.random(n) < 0.68,                              # male
        rng.random(n) < (0.28 if index else 0.34),         # psoriatic arthritis
        rng.random(n) < (0.67 if index else 0.59),         # ever smoker
        rng.random(n) < (0.09 if index else 0.12),         # diabetes
        rng.random(n) < 0.65,                              # prior phototherapy
        rng.random(n) < 0.58,                              # prior systemic agent
        rng.random(n) < (0.12 if index else 0.51),         # prior biologic
    ]
    male, psa, smoker, diabetes, photo, systemic, biologic = (b.astype(float) for b in binary)
    return np.column_stack([np.round(age), male, np.round(bsa, 1), np.round(pasi, 1), psa,
                            smoker, diabetes, photo, systemic, biologic])


def outcome_prob(x, arm):
    base = {1: 0.45, 0: 1.00, 3: 1.25, 2: -2.6}[arm]
    age, bsa, pasi, biologic = x[:, 0], x[:, 2], x[:, 3], x[:, 9]
    lin = base - 0.012 * (age - 43) - 0.008 * (bsa - 26) + 0.015 * (pasi - 20) - 0.35 * biologic
    return expit(lin)


def build(seed=SEED, n_index=(339, 202, 337), n_external=(250, 254, 254)):
    rng = np.random.default_rng(seed)
    parts = []
    for s, arms, sizes in ((1, (1, 0, 3), n_index), (0, (2, 0, 3), n_external)):
        x = draw_source(rng, sum(sizes), s == 1)
        a = rng.permutation(np.repeat(arms, sizes))
        y = np.empty(len(a))
        for arm in arms:
            rows = a == arm
            y[rows] = rng.random(rows.sum()) < outcome_prob(x[rows], arm)
        parts.append((x, np.full(len(a), s), a, y))
    x, s, a, y = (np.concatenate(p) for p in zip(*parts))
    return CompositeDataset(x, s, a, y, CODING, COVARIATES)


def blank_some(path, rng, fraction=0.02):
    """Replace one covariate or outcome in ~``fraction`` of rows with NA."""
    lines = Path(path).read_text().splitlines()
    out = [lines[0]]
    ncol = len(lines[0].split(","))
    for line in lines[1:]:
        cells = line.split(",")
        if rng.random() < fraction:
            cells[rng.integers(2, ncol)] = "NA"
        out.append(",".join(cells))
    Path(path).write_text("\n".join(out) + "\n")


if __name__ == "__main__":
    default = Path(__file__).resolve().parents[1] / "src/extcomp/data/psoriasis_synthetic.csv"
    target = Path(sys.argv[1]) if len(sys.argv) > 1 else default
    ds = build()
    write_csv(ds, target)
    blank_some(target, np.random.default_rng(SEED + 1))
    print(f"wrote {ds.n} rows ({ds.n1} index, {ds.n0} external) to {target}")
    for s in (1, 0):
        for arm in sorted(CODING.arms(s)):
            rows = (ds.s == s) & (ds.a == arm)
            print(f"  S={s} A={arm}: n={rows.sum():4d}  response rate {ds.y[rows].mean():.3f}")
