from pathlib import Path

import numpy as np
import pytest

from wcpfnn.grid import Branch, Bus, Generator, NetworkCase
from wcpfnn.nn.mlp import MlpParams

DATA = Path(__file__).parent / "data"


def case_path(name: str) -> Path:
    return DATA / f"{name}.m"


def two_bus_case(pd=0.5, qd=0.0, x=0.1, r=0.0, p_max=2.0, q_lim=2.0, cost=10.0,
                 v_min=0.9, v_max=1.1, rating=0.0):
    return NetworkCase(
        100.0,
        (Bus(1, "slack", 0.0, 0.0, v_min, v_max),
         Bus(2, "PQ", pd, qd, v_min, v_max)),
        (Generator(1, 0.0, p_max, -q_lim, q_lim, cost),),
        (Branch(1, 2, r, x, 0.0, rating),),
        name="two_bus")


def three_bus_case(pd=1.0, costs=(10.0, 20.0)):
    """Two generators feeding one load over short low-loss lines."""
    return NetworkCase(
        100.0,
        (Bus(1, "slack", 0.0, 0.0, 0.9, 1.1),
         Bus(2, "PV", 0.0, 0.0, 0.9, 1.1),
         Bus(3, "PQ", pd, 0.0, 0.9, 1.1)),
        (Generator(1, 0.0, 3.0, -3.0, 3.0, costs[0]),
         Generator(2, 0.0, 3.0, -3.0, 3.0, costs[1])),
        (Branch(1, 3, 0.001, 0.01), Branch(2, 3, 0.001, 0.01), Branch(1, 2, 0.001, 0.01)),
        name="three_bus")


def abs_net() -> MlpParams:
    """1-2-1 ReLU net computing |x|."""
    return MlpParams([np.array([[1.0], [-1.0]]), np.array([[1.0, 1.0]])],
                     [np.zeros(2), np.zeros(1)], [0.0], [1.0], [0.0], [1.0])


def random_net(rng, sizes, weight_scale=1.0) -> MlpParams:
    ws = [rng.normal(0, weight_scale / np.sqrt(a), (b, a)) for a, b in zip(sizes[:-1], sizes[1:])]
    bs = [rng.normal(0, 0.3, b) for b in sizes[1:]]
    return MlpParams(ws, bs, np.zeros(sizes[0]), np.ones(sizes[0]),
                     np.zeros(sizes[-1]), np.ones(sizes[-1]))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# lines recorded by test_acceptance.py, repeated in the terminal summary
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.line(ACCEPTANCE_LINES[key])
