import math

import numpy as np
import pytest

from spin_qst.collective_spin import BlochVector
from spin_qst.estimator import EstimatorConfig
from spin_qst.trajectory import TrajectoryConfig, random_waveform, simulate_truth

# coarse grid used by the fast tests: τ = π/(2Ω_b) = 0.02 is 20 steps of 1e-3
FAST_DT = 1e-3
LARMOR = 25 * math.pi


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False, help="run minutes-scale physics regressions")
    parser.addoption("--full", action="store_true", default=False, help="run the hours-long scaling campaign")


def pytest_collection_modifyitems(config, items):
    run_slow = config.getoption("--run-slow") or config.getoption("--full")
    run_full = config.getoption("--full")
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    skip_full = pytest.mark.skip(reason="needs --full")
    for item in items:
        if "full" in item.keywords and not run_full:
            item.add_marker(skip_full)
        elif "slow" in item.keywords and not run_slow:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def waveform():
    """40 random π/2 rotations spanning κT = 0.8."""
    return random_waveform(40, LARMOR, np.random.default_rng(7))


@pytest.fixture
def small_estimator():
    return EstimatorConfig(m1_count=40, m2_count=40, baseline_count=200, rng_seed=3)


def make_truth(num_qubits, waveform, seed=0, direction=None, dt=FAST_DT, total_time=0.8):
    config = TrajectoryConfig(num_qubits=num_qubits, total_time=total_time, dt=dt, rng_seed=seed)
    direction = direction or BlochVector.from_angles(1.1, 0.4)
    return simulate_truth(direction, config, waveform, np.random.default_rng(seed))


@pytest.fixture
def truth_factory():
    return make_truth
