"""Independent reference computations the package is checked against.

Nothing here imports solver code; the oracles work on plain Python data.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


def bpr(t0, f, c, alpha=0.15, beta=4.0):
    return t0 * (1.0 + alpha * (f / c) ** beta)


def two_link_equilibrium(t0a, t0b, ca, cb, demand, alpha=0.15, beta=4.0, steps=200):
    """Flow on link a at user equilibrium of two parallel BPR links (scalar bisection)."""
    g = lambda x: bpr(t0a, x, ca, alpha, beta) - bpr(t0b, demand - x, cb, alpha, beta)
    if g(demand) <= 0:
        return float(demand)
    if g(0.0) >= 0:
        return 0.0
    lo, hi = 0.0, float(demand)
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def beckmann_quadrature(t0, c, f, alpha=0.15, beta=4.0):
    """Sum of per-link integrals of the BPR function by adaptive quadrature."""
    from scipy.integrate import quad

    return sum(quad(lambda x: bpr(a, x, b, alpha, beta), 0.0, fl, epsabs=1e-12, epsrel=1e-13)[0]
               for a, b, fl in zip(t0, c, f))


def simple_paths(n, arcs, s, t):
    """All simple paths s->t as lists of nodes, with their lengths. ``arcs``: {(a,b): w}."""
    out = []

    def walk(node, path, length):
        if node == t:
            out.append((list(path), length))
            return
        for (a, b), w in arcs.items():
            if a == node and b not in path:
                path.append(b)
                walk(b, path, length + w)
                path.pop()

    walk(s, [s], 0.0)
    return out


def brute_force_betweenness(n, arcs):
    """Unnormalized betweenness by enumerating every shortest simple path per ordered pair.

    ``arcs`` maps (from, to) to a positive weight; parallel arcs are not supported.
    """
    bc = [0.0] * n
    for s, t in itertools.permutations(range(n), 2):
        paths = simple_paths(n, arcs, s, t)
        if not paths:
            continue
        best = min(l for _, l in paths)
        shortest = [p for p, l in paths if math.isclose(l, best, rel_tol=1e-12, abs_tol=1e-12)]
        for p in shortest:
            for v in p[1:-1]:
                bc[v] += 1.0 / len(shortest)
    return np.array(bc)


def dijkstra_dense(n, arcs, source):
    """O(N^2) Dijkstra on an arc dict, used as a distance oracle."""
    dist = [math.inf] * n
    dist[source] = 0.0
    done = [False] * n
    for _ in range(n):
        d, u = min((dist[i], i) for i in range(n) if not done[i])
        if d == math.inf:
            break
        done[u] = True
        for (a, b), w in arcs.items():
            if a == u and dist[u] + w < dist[b]:
                dist[b] = dist[u] + w
    return np.array(dist)


def central_difference(f, x: np.ndarray, h=1e-6) -> np.ndarray:
    """Gradient of scalar ``f`` at ``x`` by central differences, entry by entry."""
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        up = f(x)
        x[idx] = old - h
        down = f(x)
        x[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def relative_error(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12))


def bellman_ford(n, arc_list, source):
    """Distances by repeated relaxation over (from, to, weight) triples."""
    dist = [math.inf] * n
    dist[source] = 0.0
    for _ in range(n - 1):
        changed = False
        for a, b, w in arc_list:
            if dist[a] + w < dist[b]:
                dist[b] = dist[a] + w
                changed = True
        if not changed:
            break
    return np.array(dist)


def conv_loops(theta, p, x, combine):
    """Graph convolution by explicit index loops."""
    n = len(theta)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            acc = 0.0
            if combine == "hadamard":
                for k in range(n):
                    acc += theta[i][k] * p[i][k] * x[k][j]
            else:
                for k in range(n):
                    for l in range(n):
                        acc += theta[i][k] * p[k][l] * x[l][j]
            out[i][j] = acc
    return out


def gcnn_loops(theta, w_q, w_f, p, x, combine):
    """Three-layer forward pass, one scalar at a time."""
    n, e = len(w_q), len(w_q[0])
    h1 = [[math.tanh(v) for v in row] for row in conv_loops(theta, p, x, combine)]
    h2 = [[math.tanh(sum(h1[i][k] * w_q[k][m] for k in range(n))) for m in range(e)]
          for i in range(n)]
    return np.array([sum(h2[i][m] * w_f[i] for i in range(n)) for m in range(e)])
