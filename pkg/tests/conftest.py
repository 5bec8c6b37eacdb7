import numpy as np
import pytest

from keyframe_da.config import EngineConfig
from keyframe_da.toy_detector import ToyDetector


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_config():
    return EngineConfig(feature_dim=4, num_categories=3, warmup_min_total=5)


@pytest.fixture
def toy_model():
    return ToyDetector(feature_dim=4, num_categories=3)


# acceptance criteria report one summary line each, after the test run
ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    return request.config.stash.setdefault(ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(ACCEPTANCE, [])
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, line in sorted(results):
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {line}")
