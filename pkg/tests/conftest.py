import numpy as np
import pytest

from rwre.environment import make_distribution

BIASED = (0.4, 0.1, 0.25, 0.25)
SYMMETRIC = (0.25, 0.25, 0.25, 0.25)


@pytest.fixture(scope="session")
def biased():
    return make_distribution("deterministic", 2, BIASED)


@pytest.fixture(scope="session")
def symmetric():
    return make_distribution("deterministic", 2, SYMMETRIC)


@pytest.fixture(scope="session")
def straight():
    return make_distribution("deterministic", 2, (1.0, 0.0, 0.0, 0.0))


def random_walk_path(rng: np.random.Generator, d: int, n: int, drift: float = 0.0) -> np.ndarray:
    """Positions of a nearest-neighbour path built with numpy's generator (independent of rwre's RNG)."""
    probs = np.full(2 * d, 1.0 / (2 * d))
    shift = drift * probs[1]  # drift as a fraction of the -e1 mass
    probs[0] += shift
    probs[1] -= shift
    idx = rng.choice(2 * d, size=n, p=probs)
    offs = np.zeros((2 * d, d), dtype=np.int64)
    for j in range(d):
        offs[2 * j, j], offs[2 * j + 1, j] = 1, -1
    return np.vstack([np.zeros((1, d), dtype=np.int64), np.cumsum(offs[idx], axis=0)])


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n][1])
