import sys

import numpy as np
import pytest

from lcswitch.params import FockCutoffs, ScalingPlan, Scheme, SystemParams


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    for name in ("test_acceptance", "tests.test_acceptance"):
        mod = sys.modules.get(name)
        if mod is not None and getattr(mod, "RESULTS", None):
            terminalreporter.section("acceptance criteria")
            for line in mod.RESULTS:
                terminalreporter.write_line(line)
            break


@pytest.fixture(scope="session")
def working_point() -> SystemParams:
    return SystemParams.working_point()


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(20260810)


@pytest.fixture(scope="session")
def small_cutoffs() -> FockCutoffs:
    return FockCutoffs(6, 4)


def make_plan(aleph=1.0, scheme=Scheme.THEORY_A, **overrides) -> ScalingPlan:
    return ScalingPlan(aleph=aleph, scheme=scheme,
                       base=SystemParams.working_point(**overrides))
