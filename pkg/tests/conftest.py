import os
from pathlib import Path

import numpy as np
import pytest

# PASS/FAIL lines from test_acceptance.py, echoed at the end of the run
ACCEPTANCE_LINES = []

MNIST_DIR = Path(os.environ.get("BNN_MNIST_DIR", "/root/data/mnist"))


@pytest.fixture(scope="session")
def mnist_dir():
    if not (MNIST_DIR / "t10k-labels-idx1-ubyte").exists():
        pytest.skip(f"MNIST IDX files not found in {MNIST_DIR} (set BNN_MNIST_DIR)")
    return MNIST_DIR


@pytest.fixture
def np_rng():
    return np.random.default_rng(1234)


# a 2x2 Bernoulli dropconnect layer: 16 enumerable mask outcomes
TINY_W = np.array([[0.9, -1.3], [0.4, 1.1]])
TINY_B = np.array([0.2, -0.1])
TINY_X = np.array([[1.0, 0.5], [-0.7, 1.2], [0.3, -0.4]])
TINY_P = 0.5


@pytest.fixture(scope="session")
def tiny_mc_million():
    """predict_mc at n = 10^6 on the tiny network (about a minute; shared across modules)."""
    from bnn import layers as L
    from bnn.inference import predict_mc
    from bnn.masks import MaskKind, MaskSpec
    from bnn.network import NetworkParams
    from bnn.tensor import Rng

    params = NetworkParams([TINY_W.copy()], [TINY_B.copy()])
    spec = MaskSpec(MaskKind.BERNOULLI_DROPCONNECT, TINY_P)
    return predict_mc(params, [L.Dense(2, 2)], TINY_X, spec, 10**6, Rng(2024))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
