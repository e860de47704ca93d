"""Static user-equilibrium assignment with the Frank-Wolfe method."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import NumericError
from .network import Network, validate_demand


class InfeasibleAssignmentError(ValueError):
    """A positive-demand OD pair has no path."""

    def __init__(self, origin: int, destination: int):
        super().__init__(f"no path from node {origin + 1} to node {destination + 1} "
                         "for positive demand")
        self.origin = origin
        self.destination = destination


def bpr_travel_time(t0, flow, capacity, alpha=0.15, beta=4.0):
    """BPR volume-delay function ``t0 * (1 + alpha * (flow / capacity) ** beta)``.

    Works elementwise on arrays.
    """
    flow = np.asarray(flow, dtype=np.float64)
    if np.any(flow < 0):
        raise ValueError("flow must be non-negative")
    t = np.asarray(t0) * (1.0 + np.asarray(alpha) * (flow / np.asarray(capacity)) ** np.asarray(beta))
    return float(t) if t.ndim == 0 else t


def link_travel_times(net: Network, flows: np.ndarray) -> np.ndarray:
    return bpr_travel_time(net.free_flow_times, flows, net.capacities, net.alphas, net.betas)


def beckmann_objective(net: Network, flows: np.ndarray) -> float:
    """Sum over links of the integral of the BPR function from 0 to the link flow."""
    f = np.asarray(flows, dtype=np.float64)
    if np.any(f < 0):
        raise ValueError("flows must be non-negative")
    b = net.betas
    return float(np.sum(net.free_flow_times * f
                        * (1.0 + net.alphas / (b + 1.0) * (f / net.capacities) ** b)))


class _Graph:
    """Contiguous index arrays for the kernels, built once per solve."""

    def __init__(self, net: Network, respect_first_thru: bool = True):
        self.out_start, self.out_links = net.forward_star()
        self.link_from = net.from_nodes
        self.link_to = net.to_nodes
        self.first_thru = net.first_thru_node if respect_first_thru else 0


def shortest_paths(net: Network, travel_times: np.ndarray, origin: int,
                   respect_first_thru: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Label-setting shortest paths from ``origin``.

    Returns ``(dist, predecessor_link)``; unreachable nodes have ``inf`` and ``-1``.
    Among equal-cost predecessors the lowest link id wins.
    """
    times = np.ascontiguousarray(travel_times, dtype=np.float64)
    if times.shape != (net.link_count,) or np.any(times <= 0):
        raise ValueError("travel_times must be positive with one entry per link")
    g = _Graph(net, respect_first_thru)
    dist, pred, _ = kernels.shortest_path_tree(origin, times, g.out_start, g.out_links,
                                               g.link_to, g.first_thru)
    return dist, pred


def _aon(g: _Graph, demand: np.ndarray, times: np.ndarray) -> np.ndarray:
    flows, bad_o, bad_d = kernels.all_or_nothing(demand, times, g.out_start, g.out_links,
                                                 g.link_from, g.link_to, g.first_thru)
    if bad_o >= 0:
        raise InfeasibleAssignmentError(bad_o, bad_d)
    return flows


def all_or_nothing(net: Network, demand: np.ndarray, travel_times: np.ndarray,
                   respect_first_thru: bool = True) -> np.ndarray:
    """Assign each OD pair's full demand to one shortest path."""
    x = np.ascontiguousarray(validate_demand(demand, net.node_count))
    times = np.ascontiguousarray(travel_times, dtype=np.float64)
    return _aon(_Graph(net, respect_first_thru), x, times)


def node_balance_residual(net: Network, demand: np.ndarray, flows: np.ndarray) -> np.ndarray:
    """``inflow - outflow - (attracted - produced)`` per node."""
    n = net.node_count
    f = np.asarray(flows, dtype=np.float64)
    inflow = np.bincount(net.to_nodes, weights=f, minlength=n)
    outflow = np.bincount(net.from_nodes, weights=f, minlength=n)
    x = np.asarray(demand, dtype=np.float64)
    return inflow - outflow - (x.sum(axis=0) - x.sum(axis=1))


@dataclass(frozen=True)
class FwConfig:
    max_iterations: int = 500
    relative_gap_tol: float = 1e-4
    line_search_tol: float = 1e-8
    line_search: str = "bisection_on_derivative"
    # "conjugate": target is a conjugate combination of the previous target and
    # the all-or-nothing solution; "classic": target is the all-or-nothing solution
    direction: str = "conjugate"
    respect_first_thru: bool = True
    record_trace: bool = False

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (self.relative_gap_tol > 0 and self.line_search_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.line_search != "bisection_on_derivative":
            raise ValueError(f"unknown line search {self.line_search!r}")
        if self.direction not in ("conjugate", "classic"):
            raise ValueError(f"unknown direction rule {self.direction!r}")

    def to_dict(self) -> dict:
        return {"max_iterations": self.max_iterations,
                "relative_gap_tol": self.relative_gap_tol,
                "line_search_tol": self.line_search_tol,
                "line_search": self.line_search,
                "direction": self.direction,
                "respect_first_thru": self.respect_first_thru}


@dataclass
class FwResult:
    flows: np.ndarray
    iterations_used: int
    relative_gap: float
    beckmann_value: float
    travel_times: np.ndarray
    converged: bool
    # per-iteration (objective, gap), only filled when FwConfig.record_trace is set
    objective_trace: list[float] = field(default_factory=list)
    gap_trace: list[float] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "flows": self.flows.tolist(),
            "travel_times": self.travel_times.tolist(),
            "relative_gap": self.relative_gap,
            "iterations": self.iterations_used,
            "beckmann_value": self.beckmann_value,
            "converged": self.converged,
        }, indent=1)

    def to_csv(self, net: Network) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["link_id", "from", "to", "flow", "travel_time"])
        for link, f, t in zip(net.links, self.flows, self.travel_times):
            w.writerow([link.id, link.from_node + 1, link.to_node + 1, repr(float(f)), repr(float(t))])
        return buf.getvalue()


# weights at or above this restart from the plain all-or-nothing target; a
# clipped weight near 1 keeps reusing the old target and the method stalls
_MAX_CONJUGATE_WEIGHT = 0.9999


def _conjugate_target(slopes, flows, prev_target, aon):
    prev_dir = prev_target - flows
    num = float(np.sum(slopes * prev_dir * (aon - flows)))
    den = float(np.sum(slopes * prev_dir * (aon - prev_target)))
    weight = num / den if den != 0.0 else 0.0
    if not 0.0 < weight < _MAX_CONJUGATE_WEIGHT:
        return aon
    return weight * prev_target + (1.0 - weight) * aon


def frank_wolfe_solve(net: Network, demand: np.ndarray, cfg: FwConfig | None = None) -> FwResult:
    """Solve the user-equilibrium assignment for ``demand``.

    Each iteration moves toward a target flow with the step that minimizes the
    Beckmann potential along the segment. With ``direction="classic"`` the target
    is the all-or-nothing solution at current travel times; ``"conjugate"``
    mixes in the previous target so successive directions are conjugate with
    respect to the diagonal Hessian of the potential (Mitradjieva & Lindberg, 2013).
    Stops once the relative gap ``(sum t*f - sum t*f_aon) / sum t*f`` is at most
    ``cfg.relative_gap_tol`` or after ``cfg.max_iterations`` updates.
    """
    cfg = cfg or FwConfig()
    x = np.ascontiguousarray(validate_demand(demand, net.node_count))
    g = _Graph(net, cfg.respect_first_thru)
    t0, cap, alpha, beta = net.free_flow_times, net.capacities, net.alphas, net.betas

    def times_of(f):
        return t0 * (1.0 + alpha * (f / cap) ** beta)

    def slopes_of(f):
        return t0 * alpha * beta * (f / cap) ** (beta - 1.0) / cap

    flows = _aon(g, x, t0)
    obj_trace, gap_trace = [], []
    gap = np.inf
    it = 0
    prev_target = None
    while True:
        times = times_of(flows)
        target = _aon(g, x, times)
        total = float(times @ flows)
        if total > 0:
            gap = max((total - float(times @ target)) / total, 0.0)
        else:
            gap = 0.0
        if cfg.record_trace:
            obj_trace.append(beckmann_objective(net, flows))
            gap_trace.append(gap)
        if not np.isfinite(gap):
            raise NumericError(f"non-finite relative gap at iteration {it}")
        if gap <= cfg.relative_gap_tol or it >= cfg.max_iterations:
            break
        if cfg.direction == "conjugate" and prev_target is not None:
            target = _conjugate_target(slopes_of(flows), flows, prev_target, target)
        direction = target - flows
        step = kernels.line_search(flows, direction, t0, cap, alpha, beta, cfg.line_search_tol)
        # a full step leaves no previous direction to be conjugate to
        prev_target = target if step < 1.0 else None
        flows = flows + step * direction
        # clip roundoff below zero; exact convex combinations are non-negative
        np.maximum(flows, 0.0, out=flows)
        it += 1
    value = beckmann_objective(net, flows)
    if not np.isfinite(value):
        raise NumericError("non-finite Beckmann objective")
    return FwResult(flows, it, float(gap), value, times_of(flows),
                    gap <= cfg.relative_gap_tol, obj_trace, gap_trace)
