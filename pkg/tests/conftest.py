import sys

import numpy as np
import pytest

from avgope.core import Dataset, Policy, Trajectory, validate_dataset
from avgope.simulator import FiniteMDP, LuckettModelConfig, simulate_luckett


def make_dataset(n=3, T=4, d=2, K=2, seed=0):
    rng = np.random.default_rng(seed)
    trajs = [
        Trajectory(rng.normal(size=(T + 1, d)), rng.integers(0, K, T), rng.normal(size=T), unit_id=f"u{i}")
        for i in range(n)
    ]
    return validate_dataset(Dataset(tuple(trajs), K, d))


def tabular(pi):
    """Policy acting on one-hot states through the matrix ``pi[s, a]``."""
    pi = np.asarray(pi, dtype=float)
    return Policy(lambda s: s @ pi, pi.shape[1], "tabular")


def random_mdp(seed, S=None, K=2, noise=0.0):
    rng = np.random.default_rng(seed)
    S = S or int(rng.integers(3, 6))
    return FiniteMDP.random(S, K, rng, reward_noise_sd=noise), rng


@pytest.fixture
def small_data():
    return make_dataset()


@pytest.fixture(scope="session")
def luckett_40_50():
    return simulate_luckett(LuckettModelConfig(seed=11), 40, 50)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        ok, detail = mod.RESULTS[k]
        terminalreporter.write_line(f"CRITERION {k}: {'PASS' if ok else 'FAIL'} ({detail})")
