import numpy as np
import pytest
from hypothesis import settings

from cocyclelab.base_dynamics import cat_map
from cocyclelab.cocycles import build_conjugated_conformal, build_shear_rotation
from cocyclelab.fields import PolarField, TrigField

settings.register_profile("cocyclelab", deadline=None, max_examples=60)
settings.load_profile("cocyclelab")

GOLDEN = (1 + 5 ** 0.5) / 2
CAT_KAPPA = float(np.log((3 + 5 ** 0.5) / 2))


def polar_family():
    """Fields of a conjugated conformal cocycle with cond C(x) = e^{2h} = e everywhere."""
    C = PolarField(
        TrigField(0.5),
        TrigField(0.3, [{"k": [1, 0], "amp": 0.4}, {"k": [0, 1], "amp": 0.3, "phase": 1.0}]),
        TrigField(0.0, [{"k": [1, 1], "amp": 0.5}]),
    )
    lam = TrigField(1.0, [{"k": [1, 0], "amp": 0.2}])
    theta = TrigField(1.0, [{"k": [0, 1], "amp": 0.3}])
    return C, lam, theta


@pytest.fixture(scope="session")
def cat():
    return cat_map()


@pytest.fixture(scope="session")
def conj_conformal(cat):
    C, lam, theta = polar_family()
    return build_conjugated_conformal(C, lam, theta, cat)


@pytest.fixture(scope="session")
def shear(cat):
    return build_shear_rotation(cat, 0.1, 200, 8)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(results):
        terminalreporter.write_line(line[1])
