"""Pure-Python reference versions of the hot kernels.

Signatures and results match ``_kernels.pyx`` exactly; the package falls back to
this module when the extension is not built.
"""
from heapq import heappop, heappush

import numpy as np


def shortest_path_tree(origin, costs, out_start, out_links, link_to, first_thru):
    """Dijkstra from ``origin``.

    Returns ``(dist, pred_link, order)`` where ``order`` lists reached nodes in
    settle order. Equal-cost predecessors resolve to the lowest link id. Nodes
    below ``first_thru`` (other than the origin) are never expanded.
    """
    n = len(out_start) - 1
    dist = [np.inf] * n
    pred = [-1] * n
    done = [False] * n
    order = []
    dist[origin] = 0.0
    heap = [(0.0, origin)]
    while heap:
        d, u = heappop(heap)
        if done[u]:
            continue
        done[u] = True
        order.append(u)
        if u != origin and u < first_thru:
            continue
        for k in range(out_start[u], out_start[u + 1]):
            e = out_links[k]
            v = link_to[e]
            if done[v]:
                continue
            nd = d + costs[e]
            if nd < dist[v]:
                dist[v] = nd
                pred[v] = e
                heappush(heap, (nd, v))
            elif nd == dist[v] and e < pred[v]:
                pred[v] = e
    return (np.array(dist, dtype=np.float64), np.array(pred, dtype=np.int64),
            np.array(order, dtype=np.int64))


def all_or_nothing(demand, costs, out_start, out_links, link_from, link_to, first_thru):
    """Load every OD pair onto its shortest path.

    Returns ``(flows, bad_origin, bad_dest)``; the pair is ``(-1, -1)`` unless some
    positive-demand destination is unreachable.
    """
    n = demand.shape[0]
    flows = np.zeros(len(costs), dtype=np.float64)
    for o in range(n):
        row = demand[o]
        if not row.any():
            continue
        dist, pred, order = shortest_path_tree(o, costs, out_start, out_links, link_to, first_thru)
        through = row.copy()
        for v in order[::-1]:
            if v == o:
                continue
            e = pred[v]
            flows[e] += through[v]
            through[link_from[e]] += through[v]
        reached = np.zeros(n, dtype=bool)
        reached[order] = True
        missing = np.flatnonzero((row > 0) & ~reached)
        if missing.size:
            return flows, o, int(missing[0])
    return flows, -1, -1


def _deriv(lam, flows, direction, t0, cap, alpha, beta):
    x = flows + lam * direction
    t = t0 * (1.0 + alpha * (x / cap) ** beta)
    return float(np.dot(t, direction))


def line_search(flows, direction, t0, cap, alpha, beta, tol):
    """Step in [0, 1] along ``direction`` minimizing the Beckmann potential.

    Bisection on the directional derivative; returns the left end of the final
    bracket so the derivative is still non-positive there.
    """
    if _deriv(1.0, flows, direction, t0, cap, alpha, beta) <= 0.0:
        return 1.0
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _deriv(mid, flows, direction, t0, cap, alpha, beta) < 0.0:
            lo = mid
        else:
            hi = mid
    return lo


def brandes(costs, out_start, out_links, link_to):
    """Unnormalized node betweenness on a weighted digraph, all shortest paths counted."""
    n = len(out_start) - 1
    bc = np.zeros(n, dtype=np.float64)
    for s in range(n):
        dist = [np.inf] * n
        sigma = [0.0] * n
        preds = [[] for _ in range(n)]
        done = [False] * n
        stack = []
        dist[s] = 0.0
        sigma[s] = 1.0
        heap = [(0.0, s)]
        while heap:
            d, u = heappop(heap)
            if done[u]:
                continue
            done[u] = True
            stack.append(u)
            for k in range(out_start[u], out_start[u + 1]):
                e = out_links[k]
                v = link_to[e]
                nd = d + costs[e]
                if nd < dist[v]:
                    dist[v] = nd
                    sigma[v] = sigma[u]
                    preds[v] = [u]
                    heappush(heap, (nd, v))
                elif nd == dist[v] and not done[v]:
                    sigma[v] += sigma[u]
                    preds[v].append(u)
        delta = [0.0] * n
        while stack:
            w = stack.pop()
            for u in preds[w]:
                delta[u] += sigma[u] / sigma[w] * (1.0 + delta[w])
            if w != s:
                bc[w] += delta[w]
    return bc
