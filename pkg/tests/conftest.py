import numpy as np
import pytest
import torch

from kgpath.kg import Triple, build_graph


@pytest.fixture(autouse=True)
def _torch_threads():
    # single-threaded kernels keep float sums reproducible across runs
    torch.set_num_threads(1)


def random_triples(rng: np.random.Generator, n_ent: int, n_rel: int, n: int) -> list[Triple]:
    out = set()
    while len(out) < n:
        h, t = rng.integers(n_ent, size=2)
        if h != t:
            out.add(Triple(int(h), int(rng.integers(n_rel)), int(t)))
    return sorted(out)


@pytest.fixture
def small_graph():
    triples = [Triple(0, 0, 1), Triple(1, 1, 2), Triple(0, 1, 3), Triple(3, 0, 2), Triple(2, 0, 4)]
    return build_graph(triples, 5, 2)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
