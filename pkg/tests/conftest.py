import numpy as np
import pytest

from tapem.hetgraph import EdgeType, HeteroGraph, NodeType

A, P, V = NodeType.AUTHOR, NodeType.PAPER, NodeType.VENUE
W, C, PV = EdgeType.WRITES, EdgeType.CITES, EdgeType.PUBLISHES_IN


def build_graph(n_authors, n_papers, n_venues, writes, cites=(), venue_of=None, tokens=None):
    """Graph with ids authors | papers | venues; ``writes`` holds (author, paper) index pairs."""
    names = ([f"a{i}" for i in range(n_authors)] + [f"p{i}" for i in range(n_papers)]
             + [f"v{i}" for i in range(n_venues)])
    types = [A] * n_authors + [P] * n_papers + [V] * n_venues
    pid = lambda i: n_authors + i
    edges = [(a, pid(p), W) for a, p in writes]
    edges += [(pid(s), pid(d), C) for s, d in cites]
    for p, v in (venue_of or {}).items():
        edges.append((pid(p), n_authors + n_papers + v, PV))
    toks = {pid(i): (tokens or {}).get(i, ["w", "x", "y"]) for i in range(n_papers)}
    years = {pid(i): 2000 + i for i in range(n_papers)}
    return HeteroGraph(names, types, edges, toks, years, min_token_count=1)


@pytest.fixture
def small_graph():
    # a0 wrote p0,p1; a1 wrote p1,p2; a2 wrote p2; a3 wrote p0,p2,p3; a4 is isolated
    writes = [(0, 0), (0, 1), (1, 1), (1, 2), (2, 2), (3, 0), (3, 2), (3, 3)]
    return build_graph(5, 4, 2, writes, cites=[(1, 0), (3, 2)], venue_of={0: 0, 1: 0, 2: 1, 3: 1})


@pytest.fixture(scope="session")
def synthetic():
    from tapem.synth import generate_synthetic
    return generate_synthetic(seed=0)


# one line per acceptance criterion, printed after the run
_CRITERIA = []


@pytest.fixture
def record():
    def _record(number, passed, detail):
        _CRITERIA.append((number, passed, detail))
    return _record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(_CRITERIA):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
