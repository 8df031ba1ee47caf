import numpy as np
import pytest

import oracle
from extcomp import glm
from extcomp.estimators import NuisanceSet
from extcomp.tabular import CompositeDataset, TreatmentCoding

CODING = TreatmentCoding.standard()


def fixture_dataset():
    x = [[float(r[0])] for r in oracle.ROWS]
    s = [r[1] for r in oracle.ROWS]
    a = [r[2] for r in oracle.ROWS]
    y = [float(r[3]) for r in oracle.ROWS]
    return CompositeDataset(x, s, a, y, CODING, ("x1",))


def fixture_nuisances(ds, outcome_covariates=()):
    as_array = lambda v: np.array([float(t) for t in v])
    specs = {"participation": glm.ModelSpec("bernoulli-logit"),
             "treatment": glm.ModelSpec("bernoulli-logit"),
             "outcome": glm.ModelSpec("gaussian-identity", tuple(outcome_covariates))}
    return NuisanceSet(ds.n1 / ds.n, as_array(oracle.P_HAT),
                       {k: as_array(v) for k, v in oracle.E_HAT.items()},
                       {k: as_array(v) for k, v in oracle.G_HAT.items()}, specs)


@pytest.fixture
def six_rows():
    ds = fixture_dataset()
    return ds, fixture_nuisances(ds)


# ---------------------------------------------------------------------------
# acceptance reporting: one PASS/FAIL line per criterion, repeated in the summary


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def verdict(request, capsys):
    def record(label, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {label}" + (f"  [{detail}]" if detail else "")
        request.config._acceptance_lines.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
