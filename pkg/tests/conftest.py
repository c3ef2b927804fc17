import numpy as np
import pytest

from dbtune.data import manifest_path
from dbtune.environment import SimulatorSpec
from dbtune.params import ParameterSpace, ParameterSpec, load_manifest


@pytest.fixture(scope="session")
def full_space():
    return load_manifest(manifest_path())


@pytest.fixture(scope="session")
def calibrated_spec(full_space):
    return SimulatorSpec.calibrated(full_space)


def make_space(defaults, prf=10.0, kinds=None):
    kinds = kinds or ["continuous"] * len(defaults)
    return ParameterSpace(tuple(ParameterSpec.from_default(f"p{i}", d, prf, k)
                                for i, (d, k) in enumerate(zip(defaults, kinds))), prf)


@pytest.fixture
def unit_space():
    """One parameter with default 1 on [0.1, 10]."""
    return make_space([1.0])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria report: criterion number -> (passed, detail)
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
