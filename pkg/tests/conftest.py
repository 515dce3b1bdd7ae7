import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from drifa import tensor as T  # noqa: E402
from oracles import numeric_grad, rel_error  # noqa: E402


@pytest.fixture
def f64():
    with T.default_dtype(np.float64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def gradcheck(build, leaves, eps=1e-5, coords=None, richardson=False):
    """Largest relative error between backprop and central differences.

    ``build()`` must rebuild the graph from ``leaves`` (Tensors) and return a
    scalar Tensor. ``coords`` optionally limits the finite differences to a
    subset of indices per leaf (a list of index lists).
    """
    for leaf in leaves:
        leaf.requires_grad = True
        leaf.grad = None
    build().backward()
    analytic = [leaf.grad.copy() for leaf in leaves]

    def value():
        with T.no_grad():
            return build().item()

    worst = 0.0
    for k, leaf in enumerate(leaves):
        idx = None if coords is None else coords[k]
        numeric = numeric_grad(value, leaf.data, eps=eps, coords=idx, richardson=richardson)
        a = analytic[k]
        if idx is not None:
            mask = np.zeros(a.shape, dtype=bool)
            for i in idx:
                mask[i] = True
            a, numeric = a[mask], numeric[mask]
        worst = max(worst, rel_error(a, numeric))
    return worst


def projection(shape, seed=99):
    """Fixed random weights so sum(out * R) exercises every output element."""
    return np.random.default_rng(seed).standard_normal(shape)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
