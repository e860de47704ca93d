"""Betweenness centrality at equilibrium travel times and learned-weight summaries."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .assignment import link_travel_times
from .model import GcnnParams
from .network import Network
from .scenarios import SampleRecord


def equilibrium_travel_times(net: Network, flows: np.ndarray) -> np.ndarray:
    return link_travel_times(net, flows)


def betweenness_centrality(net: Network, travel_times: np.ndarray,
                           normalized: bool = True) -> np.ndarray:
    """Brandes betweenness over all shortest paths (ties split fractionally).

    Endpoints are excluded; normalized values are divided by (N-1)(N-2).
    """
    times = np.ascontiguousarray(travel_times, dtype=np.float64)
    if times.shape != (net.link_count,) or np.any(times <= 0):
        raise ValueError("travel_times must be positive with one entry per link")
    out_start, out_links = net.forward_star()
    bc = kernels.brandes(times, out_start, out_links, net.to_nodes)
    n = net.node_count
    if normalized and n > 2:
        bc = bc / ((n - 1) * (n - 2))
    return bc


def _box(values: np.ndarray) -> dict[str, float]:
    q1, med, q3 = np.quantile(values, [0.25, 0.5, 0.75])
    iqr = q3 - q1
    # interpolated quartiles can sit an ulp beyond the data; keep whiskers around the box
    lo = min(values[values >= q1 - 1.5 * iqr].min(initial=q1), q1)
    hi = max(values[values <= q3 + 1.5 * iqr].max(initial=q3), q3)
    return {"q1": float(q1), "median": float(med), "q3": float(q3), "iqr": float(iqr),
            "whisker_low": float(lo), "whisker_high": float(hi),
            "mean": float(values.mean())}


@dataclass
class CentralityReport:
    # scenario -> (samples, N) matrix of normalized betweenness
    values: dict[str, np.ndarray] = field(default_factory=dict)
    sample_ids: dict[str, list[str]] = field(default_factory=dict)
    # scenario -> per-node box statistics
    summaries: dict[str, list[dict[str, float]]] = field(default_factory=dict)

    def iqr(self, scenario: str) -> np.ndarray:
        return np.array([s["iqr"] for s in self.summaries[scenario]])

    def to_csv(self) -> str:
        return _box_csv(self.summaries)


def centrality_study(net: Network, samples: list[SampleRecord], scenarios=None) -> CentralityReport:
    """Per-sample betweenness at equilibrium times, summarized per node and regime."""
    report = CentralityReport()
    wanted = None if scenarios is None else {getattr(s, "value", s) for s in scenarios}
    groups: dict[str, list[SampleRecord]] = {}
    for s in samples:
        if wanted is None or s.scenario.value in wanted:
            groups.setdefault(s.scenario.value, []).append(s)
    for scen, group in groups.items():
        vals = np.stack([betweenness_centrality(net, equilibrium_travel_times(net, s.flows))
                         for s in group])
        report.values[scen] = vals
        report.sample_ids[scen] = [s.sample_id for s in group]
        report.summaries[scen] = [_box(vals[:, n]) for n in range(net.node_count)]
    return report


def dispersion_comparison(report: CentralityReport, high: str = "congested",
                          low: str = "uncongested", tol: float = 1e-12) -> tuple[int, int, int]:
    """Count nodes whose betweenness IQR is larger, equal and smaller under ``high``.

    IQRs within ``tol`` of each other count as equal, so quantile roundoff on
    constant columns is not read as spread.
    """
    diff = report.iqr(high) - report.iqr(low)
    return int(np.sum(diff > tol)), int(np.sum(np.abs(diff) <= tol)), int(np.sum(diff < -tol))


@dataclass
class WeightDistribution:
    # scenario -> per-node statistics of the node's W_q row
    summaries: dict[str, list[dict[str, float]]] = field(default_factory=dict)

    def to_csv(self) -> str:
        return _box_csv(self.summaries)


def weight_distribution(params: GcnnParams, scenario: str = "all",
                        into: WeightDistribution | None = None) -> WeightDistribution:
    """Row-wise (origin node) statistics of the node-to-link weights."""
    wd = into if into is not None else WeightDistribution()
    w = params.w_q.value
    wd.summaries[scenario] = [_box(w[n]) for n in range(w.shape[0])]
    return wd


def weight_centrality_correlation(params: GcnnParams, report: CentralityReport,
                                  scenario: str) -> float:
    """Spearman correlation of per-node mean W_q with mean betweenness."""
    from scipy.stats import spearmanr

    w_mean = params.w_q.value.mean(axis=1)
    bc_mean = report.values[scenario].mean(axis=0)
    rho = spearmanr(w_mean, bc_mean).statistic
    return float(rho)


def _box_csv(summaries: dict[str, list[dict[str, float]]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ["q1", "median", "q3", "whisker_low", "whisker_high", "iqr", "mean"]
    w.writerow(["node", "scenario", *cols])
    for scen, rows in summaries.items():
        for node, stats in enumerate(rows, start=1):
            w.writerow([node, scen, *(repr(stats[c]) for c in cols)])
    return buf.getvalue()
