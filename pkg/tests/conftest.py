import numpy as np
import pytest

from pgop.mdp import TabularMdp, build_four_room, build_layered_mdp, build_random_mdp


@pytest.fixture(scope="session")
def four_room():
    return build_four_room()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_mdp():
    return build_random_mdp(4, 3, rng_seed=3, discount=0.9)


@pytest.fixture
def layered_mdp():
    return build_layered_mdp(3, 2, 2, rng_seed=1, discount=0.9)


@pytest.fixture
def chain_mdp():
    """s0 -> s1 -> terminal s2 under either action; action 1 pays more."""
    P = np.zeros((3, 2, 3))
    P[0, :, 1] = 1.0
    P[1, :, 2] = 1.0
    P[2, :, 2] = 1.0
    r = np.array([[0.2, 0.5], [1.0, 0.3], [0.0, 0.0]])
    return TabularMdp(P, r, np.array([1.0, 0.0, 0.0]), 0.9, np.array([False, False, True]))


def one_state_mdp(rewards, discount):
    rewards = np.atleast_1d(np.asarray(rewards, dtype=float))
    n_actions = rewards.size
    return TabularMdp(np.ones((1, n_actions, 1)), rewards[None, :], np.ones(1), discount)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    """Record one summary line per acceptance criterion."""

    def record(criterion, passed, message):
        ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {message}")
        print(ACCEPTANCE_LINES[-1])

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
