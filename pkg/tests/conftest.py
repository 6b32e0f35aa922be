import numpy as np
import pytest
from hypothesis import settings, strategies as st

from plufg.graph import build_graph

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def random_graph(rng, n, extra=None, wlow=0.5, whigh=2.0):
    """Connected weighted graph: random spanning tree plus ``extra`` chords."""
    edges = [(i, int(rng.integers(0, i)), float(rng.uniform(wlow, whigh))) for i in range(1, n)]
    extra = n if extra is None else extra
    for a, b in rng.integers(0, n, size=(extra, 2)):
        if a != b:
            edges.append((int(a), int(b), float(rng.uniform(wlow, whigh))))
    return build_graph(edges, n)


def path_graph(n):
    return build_graph([(i, i + 1, 1.0) for i in range(n - 1)], n)


def cycle_graph(n):
    return build_graph([(i, (i + 1) % n, 1.0) for i in range(n)], n)


def triangle():
    return build_graph([(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)], 3)


def edge2():
    return build_graph([(0, 1, 1.0)], 2)


@st.composite
def graphs(draw, min_n=2, max_n=20):
    n = draw(st.integers(min_n, max_n))
    parents = [draw(st.integers(0, i - 1)) for i in range(1, n)]
    w = st.floats(0.1, 5.0, allow_nan=False)
    edges = [(i + 1, p, draw(w)) for i, p in enumerate(parents)]
    chords = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1), w), max_size=2 * n))
    edges += [c for c in chords if c[0] != c[1]]
    return build_graph(edges, n)


@st.composite
def graph_and_features(draw, min_n=2, max_n=20, channels=(1, 3), scale=3.0):
    g = draw(graphs(min_n, max_n))
    c = draw(st.integers(*channels))
    seed = draw(st.integers(0, 2**32 - 1))
    F = np.random.default_rng(seed).normal(scale=scale, size=(g.n, c))
    return g, F


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def report(number, ok, detail, seconds):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail} [{seconds:.2f} s]"
        lines.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
