import numpy as np
import pytest

from dtx.mdp import PolicyTable, TabularMdp, induce, random_mdp

TOY_SEEDS = range(20)
ACCEPTANCE_LINES = []


def toy(seed=0, noise=0.2):
    return random_mdp(10, 2, 0.01, seed, reward_noise_std=noise)


def toy_chain(seed=0):
    m = toy(seed)
    return induce(m, PolicyTable.uniform(10, 2))


def swap_mdp():
    """Two states that swap every step, rewards 1 and 0."""
    p = np.array([[[0.0, 1.0]], [[1.0, 0.0]]])
    return TabularMdp(p, np.array([[1.0], [0.0]]))


def absorbing_mdp():
    """0 -> {1, 2}; 1 -> 0 or 2 depending on the action; 2 absorbs with zero reward."""
    p = np.zeros((3, 2, 3))
    p[0, 0] = [0.0, 0.7, 0.3]
    p[0, 1] = [0.2, 0.5, 0.3]
    p[1, 0] = [0.6, 0.0, 0.4]
    p[1, 1] = [0.1, 0.1, 0.8]
    p[2, :, 2] = 1.0
    r = np.array([[0.5, 1.0], [0.2, 0.9], [0.0, 0.0]])
    return TabularMdp(p, r)


def path_chain(n):
    """Deterministic walk 0 -> 1 -> ... -> n-1 -> n-1 with reward 1 only at the start."""
    p = np.zeros((n, 1, n))
    for x in range(n - 1):
        p[x, 0, x + 1] = 1.0
    p[n - 1, 0, n - 1] = 1.0
    r = np.zeros((n, 1))
    r[0, 0] = 1.0
    return TabularMdp(p, r)


@pytest.fixture
def toy_mdp():
    return toy(0)


@pytest.fixture
def uniform():
    return PolicyTable.uniform(10, 2)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
