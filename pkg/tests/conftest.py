import numpy as np
import pytest

from cluster_gcn.sparse import from_edges


def triangle():
    return from_edges([(0, 1), (1, 2), (0, 2)], 3)


def path(n):
    return from_edges([(i, i + 1) for i in range(n - 1)], n)


def two_triangles():
    return from_edges([(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)], 6)


def two_k5_bridge():
    edges = [(i, j) for i in range(5) for j in range(i + 1, 5)]
    edges += [(i + 5, j + 5) for i, j in edges]
    edges.append((4, 5))
    return from_edges(edges, 10)


def random_graph(n, p, seed, isolated=0):
    """G(n, p) with the last ``isolated`` nodes forced to have no edges."""
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, 1)
    keep = (rng.random(len(iu)) < p) & (ju < n - isolated)
    return from_edges(np.stack([iu[keep], ju[keep]], axis=1), n)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
