from pathlib import Path

import numpy as np
import pytest

from lowrating.corpus import read_bundle
from lowrating.defaults import default_ui_vocabulary

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def program1_dir():
    return FIXTURES / "program1"


@pytest.fixture
def program1(program1_dir):
    app, vocab = read_bundle(program1_dir)
    return app, vocab


@pytest.fixture
def ui_vocab():
    return default_ui_vocabulary()


def random_edges(rng, n, max_out=2):
    """Random CFG edges over instructions 0..n-1 plus ENTRY=n and EXIT=n+1.

    Every instruction gets one or two successors anywhere in the graph, so
    irreducible shapes and unreachable nodes both occur.
    """
    entry, exit_ = n, n + 1
    edges = [(entry, 0 if n else exit_)]
    for u in range(n):
        k = int(rng.integers(1, max_out + 1))
        targets = rng.choice(n + 1, size=k, replace=False)  # n stands for EXIT here
        for t in targets:
            edges.append((u, exit_ if t == n else int(t)))
    return edges


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------- acceptance summary

ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
