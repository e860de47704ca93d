"""Compare the compiled and pure-Python kernel backends on the bundled network.

    python3 benchmarks/bench_kernels.py [--repeat 20]
"""
from __future__ import annotations

import argparse
import timeit
from importlib.resources import files

import numpy as np

from trafficgcn import _kernels_py
from trafficgcn.assignment import link_travel_times
from trafficgcn.network import parse_tntp_network, parse_tntp_trips

try:
    from trafficgcn import _kernels as _kernels_c
except ImportError:
    _kernels_c = None


def _cases(net, demand):
    out_start, out_links = net.forward_star()
    times = link_travel_times(net, np.zeros(net.link_count))
    frm, to = net.from_nodes, net.to_nodes
    flows = np.full(net.link_count, 3000.0)
    # alternating signs give an interior minimizer, so bisection runs to tolerance
    direction = np.where(np.arange(net.link_count) % 2 == 0, 2000.0, -2000.0)
    t0, cap, a, b = net.free_flow_times, net.capacities, net.alphas, net.betas
    return {
        "shortest_path_tree": lambda k: k.shortest_path_tree(0, times, out_start, out_links,
                                                             to, net.first_thru_node),
        "all_or_nothing": lambda k: k.all_or_nothing(demand, times, out_start, out_links,
                                                     frm, to, net.first_thru_node),
        "line_search": lambda k: k.line_search(flows, direction, t0, cap, a, b, 1e-8),
        "brandes": lambda k: k.brandes(times, out_start, out_links, to),
    }


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    d = files("trafficgcn") / "data"
    net = parse_tntp_network((d / "SiouxFalls_net.tntp").read_text(), "SiouxFalls")
    demand = parse_tntp_trips((d / "SiouxFalls_trips.tntp").read_text(), net.node_count)
    print(f"{'kernel':<20}{'python ms':>12}{'cython ms':>12}{'speedup':>10}")
    for name, call in _cases(net, demand).items():
        py = min(timeit.repeat(lambda: call(_kernels_py), number=1, repeat=args.repeat)) * 1e3
        if _kernels_c is None:
            print(f"{name:<20}{py:>12.3f}{'n/a':>12}{'':>10}")
            continue
        cy = min(timeit.repeat(lambda: call(_kernels_c), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<20}{py:>12.3f}{cy:>12.3f}{py / cy:>9.1f}x")


if __name__ == "__main__":
    main()
