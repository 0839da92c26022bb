import numpy as np
import pytest

from pvi_jensen import models
from pvi_jensen.ensemble import ParticleEnsemble
from pvi_jensen.harness.data import Dataset
from pvi_jensen.numerics import make_rng


@pytest.fixture
def rng():
    return make_rng(12345)


@pytest.fixture
def unit_prior():
    return models.Prior(0.0, 1.0)


def small_problem(rng, likelihood="gaussian", n=3, d=4, hidden=(3,), learn_sigma=False):
    if likelihood == "gaussian":
        spec = models.ModelSpec(input_dim=2, hidden=hidden, sigma=0.7, learn_sigma=learn_sigma)
        y = rng.normal(size=(d, 1))
    else:
        spec = models.ModelSpec(input_dim=2, output_dim=3, hidden=hidden,
                                likelihood="categorical")
        y = rng.integers(0, 3, d)
    X = rng.normal(size=(d, 2))
    ens = ParticleEnsemble(spec, rng.normal(size=(n, spec.num_params)))
    return ens, Dataset(X, y)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


@pytest.fixture
def record():
    def _record(criterion, ok, detail=""):
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
