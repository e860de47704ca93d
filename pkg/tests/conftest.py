from importlib.resources import files

import numpy as np
import pytest

from trafficgcn.network import Link, Network, parse_tntp_network, parse_tntp_trips

DATA = files("trafficgcn") / "data"


@pytest.fixture(scope="session")
def sioux_net() -> Network:
    return parse_tntp_network((DATA / "SiouxFalls_net.tntp").read_text(), "SiouxFalls")


@pytest.fixture(scope="session")
def sioux_trips(sioux_net) -> np.ndarray:
    return parse_tntp_trips((DATA / "SiouxFalls_trips.tntp").read_text(), sioux_net.node_count)


def make_network(n, arcs, cap=100.0, **kw) -> Network:
    """``arcs`` are (from, to, free_flow_time) triples, 0-based."""
    links = [Link(i, a, b, float(t), cap) for i, (a, b, t) in enumerate(arcs)]
    return Network(n, links, **kw)


def two_way(n, arcs, cap=100.0) -> Network:
    both = []
    for a, b, t in arcs:
        both += [(a, b, t), (b, a, t)]
    return make_network(n, both, cap)


def random_strong_network(rng: np.random.Generator, n: int, extra: int = 0) -> Network:
    """A ring (strongly connected) plus ``extra`` random chords, integer times."""
    arcs = {(i, (i + 1) % n) for i in range(n)}
    while len(arcs) < n + extra and len(arcs) < n * (n - 1):
        a, b = rng.choice(n, 2, replace=False)
        arcs.add((int(a), int(b)))
    return make_network(n, [(a, b, int(rng.integers(1, 5))) for a, b in sorted(arcs)])
