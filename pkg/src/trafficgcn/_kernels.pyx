# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: shortest-path trees, all-or-nothing loading,
Beckmann line search and Brandes betweenness.

Must stay result-identical to ``_kernels_py``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport pow, INFINITY

cnp.import_array()

ctypedef cnp.int64_t i64


cdef struct HeapItem:
    double key
    i64 node


cdef inline bint _less(HeapItem a, HeapItem b) noexcept nogil:
    # (key, node) lexicographic, same ordering as heapq on tuples
    return a.key < b.key or (a.key == b.key and a.node < b.node)


cdef inline void _push(HeapItem* heap, i64* size, double key, i64 node) noexcept nogil:
    cdef i64 i = size[0]
    cdef i64 parent
    cdef HeapItem item
    item.key = key
    item.node = node
    size[0] += 1
    while i > 0:
        parent = (i - 1) >> 1
        if _less(item, heap[parent]):
            heap[i] = heap[parent]
            i = parent
        else:
            break
    heap[i] = item


cdef inline HeapItem _pop(HeapItem* heap, i64* size) noexcept nogil:
    cdef HeapItem top = heap[0]
    cdef HeapItem last
    cdef i64 n, i, child
    size[0] -= 1
    n = size[0]
    if n > 0:
        last = heap[n]
        i = 0
        while True:
            child = 2 * i + 1
            if child >= n:
                break
            if child + 1 < n and _less(heap[child + 1], heap[child]):
                child += 1
            if _less(heap[child], last):
                heap[i] = heap[child]
                i = child
            else:
                break
        heap[i] = last
    return top


cdef i64 _sp_tree(i64 origin, const double[::1] costs, const i64[::1] out_start,
                  const i64[::1] out_links, const i64[::1] link_to, i64 first_thru,
                  double[::1] dist, i64[::1] pred, i64[::1] order,
                  signed char[::1] done, HeapItem* heap) noexcept nogil:
    cdef i64 n = out_start.shape[0] - 1
    cdef i64 size = 0, n_order = 0
    cdef i64 i, k, e, v, u
    cdef double nd
    cdef HeapItem item
    for i in range(n):
        dist[i] = INFINITY
        pred[i] = -1
        done[i] = 0
    dist[origin] = 0.0
    _push(heap, &size, 0.0, origin)
    while size > 0:
        item = _pop(heap, &size)
        u = item.node
        if done[u]:
            continue
        done[u] = 1
        order[n_order] = u
        n_order += 1
        if u != origin and u < first_thru:
            continue
        for k in range(out_start[u], out_start[u + 1]):
            e = out_links[k]
            v = link_to[e]
            if done[v]:
                continue
            nd = item.key + costs[e]
            if nd < dist[v]:
                dist[v] = nd
                pred[v] = e
                _push(heap, &size, nd, v)
            elif nd == dist[v] and e < pred[v]:
                pred[v] = e
    return n_order


def shortest_path_tree(i64 origin, const double[::1] costs, const i64[::1] out_start,
                       const i64[::1] out_links, const i64[::1] link_to, i64 first_thru):
    cdef i64 n = out_start.shape[0] - 1
    cdef i64 m = costs.shape[0]
    dist = np.empty(n, dtype=np.float64)
    pred = np.empty(n, dtype=np.int64)
    order = np.empty(n, dtype=np.int64)
    done = np.empty(n, dtype=np.int8)
    heap_buf = np.empty((m + 1) * sizeof(HeapItem), dtype=np.uint8)
    cdef unsigned char[::1] hb = heap_buf
    cdef i64 n_order = _sp_tree(origin, costs, out_start, out_links, link_to, first_thru,
                                dist, pred, order, done, <HeapItem*> &hb[0])
    return dist, pred, order[:n_order].copy()


def all_or_nothing(const double[:, ::1] demand, const double[::1] costs,
                   const i64[::1] out_start, const i64[::1] out_links,
                   const i64[::1] link_from, const i64[::1] link_to, i64 first_thru):
    cdef i64 n = demand.shape[0]
    cdef i64 m = costs.shape[0]
    flows_a = np.zeros(m, dtype=np.float64)
    cdef double[::1] flows = flows_a
    cdef double[::1] dist = np.empty(n, dtype=np.float64)
    cdef i64[::1] pred = np.empty(n, dtype=np.int64)
    cdef i64[::1] order = np.empty(n, dtype=np.int64)
    cdef signed char[::1] done = np.empty(n, dtype=np.int8)
    cdef double[::1] through = np.empty(n, dtype=np.float64)
    heap_buf = np.empty((m + 1) * sizeof(HeapItem), dtype=np.uint8)
    cdef unsigned char[::1] hb = heap_buf
    cdef HeapItem* heap = <HeapItem*> &hb[0]
    cdef i64 o, j, k, v, e, n_order
    cdef i64 bad_o = -1, bad_d = -1
    cdef bint any_demand
    with nogil:
        for o in range(n):
            if bad_o >= 0:
                break
            any_demand = False
            for j in range(n):
                if demand[o, j] != 0.0:
                    any_demand = True
                    break
            if not any_demand:
                continue
            n_order = _sp_tree(o, costs, out_start, out_links, link_to, first_thru,
                               dist, pred, order, done, heap)
            for j in range(n):
                through[j] = demand[o, j]
            for k in range(n_order - 1, -1, -1):
                v = order[k]
                if v == o:
                    continue
                e = pred[v]
                flows[e] += through[v]
                through[link_from[e]] += through[v]
            for j in range(n):
                if demand[o, j] > 0.0 and not done[j]:
                    bad_o = o
                    bad_d = j
                    break
    return flows_a, bad_o, bad_d


cdef double _deriv(double lam, const double[::1] f, const double[::1] d, const double[::1] t0,
                   const double[::1] cap, const double[::1] alpha, const double[::1] beta) noexcept nogil:
    cdef double acc = 0.0, x
    cdef i64 e
    for e in range(f.shape[0]):
        x = f[e] + lam * d[e]
        acc += t0[e] * (1.0 + alpha[e] * pow(x / cap[e], beta[e])) * d[e]
    return acc


def line_search(const double[::1] flows, const double[::1] direction, const double[::1] t0,
                const double[::1] cap, const double[::1] alpha, const double[::1] beta,
                double tol):
    cdef double lo = 0.0, hi = 1.0, mid
    if _deriv(1.0, flows, direction, t0, cap, alpha, beta) <= 0.0:
        return 1.0
    with nogil:
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if _deriv(mid, flows, direction, t0, cap, alpha, beta) < 0.0:
                lo = mid
            else:
                hi = mid
    return lo


def brandes(const double[::1] costs, const i64[::1] out_start, const i64[::1] out_links,
            const i64[::1] link_to):
    cdef i64 n = out_start.shape[0] - 1
    cdef i64 m = costs.shape[0]
    bc_a = np.zeros(n, dtype=np.float64)
    cdef double[::1] bc = bc_a
    cdef double[::1] dist = np.empty(n, dtype=np.float64)
    cdef double[::1] sigma = np.empty(n, dtype=np.float64)
    cdef double[::1] delta = np.empty(n, dtype=np.float64)
    cdef signed char[::1] done = np.empty(n, dtype=np.int8)
    cdef i64[::1] stack = np.empty(n, dtype=np.int64)
    # CSR predecessor lists: node v has at most indegree(v) entries
    cdef i64[::1] pred_start = np.empty(n + 1, dtype=np.int64)
    cdef i64[::1] pred_count = np.empty(n, dtype=np.int64)
    cdef i64[::1] pred_node = np.empty(max(m, 1), dtype=np.int64)
    cdef i64[::1] indeg = np.zeros(n, dtype=np.int64)
    heap_buf = np.empty((m + 1) * sizeof(HeapItem), dtype=np.uint8)
    cdef unsigned char[::1] hb = heap_buf
    cdef HeapItem* heap = <HeapItem*> &hb[0]
    cdef HeapItem item
    cdef i64 s, i, k, e, u, v, w, size, top, p
    cdef double nd
    with nogil:
        for e in range(m):
            indeg[link_to[e]] += 1
        pred_start[0] = 0
        for i in range(n):
            pred_start[i + 1] = pred_start[i] + indeg[i]
        for s in range(n):
            for i in range(n):
                dist[i] = INFINITY
                sigma[i] = 0.0
                delta[i] = 0.0
                done[i] = 0
                pred_count[i] = 0
            dist[s] = 0.0
            sigma[s] = 1.0
            size = 0
            top = 0
            _push(heap, &size, 0.0, s)
            while size > 0:
                item = _pop(heap, &size)
                u = item.node
                if done[u]:
                    continue
                done[u] = 1
                stack[top] = u
                top += 1
                for k in range(out_start[u], out_start[u + 1]):
                    e = out_links[k]
                    v = link_to[e]
                    nd = item.key + costs[e]
                    if nd < dist[v]:
                        dist[v] = nd
                        sigma[v] = sigma[u]
                        pred_node[pred_start[v]] = u
                        pred_count[v] = 1
                        _push(heap, &size, nd, v)
                    elif nd == dist[v] and not done[v]:
                        sigma[v] += sigma[u]
                        pred_node[pred_start[v] + pred_count[v]] = u
                        pred_count[v] += 1
            while top > 0:
                top -= 1
                w = stack[top]
                for p in range(pred_start[w], pred_start[w] + pred_count[w]):
                    u = pred_node[p]
                    delta[u] += sigma[u] / sigma[w] * (1.0 + delta[w])
                if w != s:
                    bc[w] += delta[w]
    return bc_a
