import numpy as np
import pytest
from hypothesis import settings

from crfiqa import BackboneConfig, init_state

# fixed example sequence so that every run checks the same cases
settings.register_profile("deterministic", derandomize=True)
settings.load_profile("deterministic")

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"CRITERION {number}: {'PASS' if passed else 'FAIL'} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(
            f"CRITERION {number}: {'PASS' if passed else 'FAIL'} ({detail})")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_state():
    cfg = BackboneConfig(input_dim=5, embedding_dim=4, hidden_dims=(6,), activation="tanh")
    state = init_state(cfg, n_classes=3, seed=7)
    state.params["head_weight"] = np.array([0.3, -0.2, 0.1, 0.4])
    state.params["head_bias"] = np.array([0.05])
    return state
