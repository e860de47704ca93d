"""Road network data model, TNTP ingestion and graph operator construction."""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np


class TntpParseError(ValueError):
    """Malformed TNTP text."""


class NetworkValidationError(ValueError):
    """Structurally invalid network or demand data."""


class GraphConstructionError(ValueError):
    """Graph operators cannot be built (e.g. an isolated node)."""


@dataclass(frozen=True)
class Link:
    id: int
    from_node: int
    to_node: int
    free_flow_time: float
    capacity: float
    bpr_alpha: float = 0.15
    bpr_beta: float = 4.0
    length: float = 0.0
    # remaining TNTP columns, kept so a parsed file serializes back unchanged
    speed: float = 0.0
    toll: float = 0.0
    link_type: int = 1

    def __post_init__(self):
        if not self.free_flow_time > 0:
            raise NetworkValidationError(f"link {self.id}: free_flow_time must be > 0")
        if not self.capacity > 0:
            raise NetworkValidationError(f"link {self.id}: capacity must be > 0")
        if self.from_node == self.to_node:
            raise NetworkValidationError(f"link {self.id}: self-loop {self.from_node}")


@dataclass(frozen=True)
class Network:
    """Directed road network. Link order is the canonical link index."""

    node_count: int
    links: tuple[Link, ...]
    first_thru_node: int = 0
    zone_count: int | None = None
    name: str = "network"
    metadata: dict = field(default_factory=dict, compare=False, repr=False)
    # solver-only instances may carry several links between one node pair;
    # graph matrices cannot be built for them
    allow_parallel_links: bool = False

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        seen = set()
        for idx, link in enumerate(self.links):
            if link.id != idx:
                raise NetworkValidationError(f"link at position {idx} has id {link.id}")
            for node in (link.from_node, link.to_node):
                if not 0 <= node < self.node_count:
                    raise NetworkValidationError(
                        f"link {idx}: node {node + 1} out of range 1..{self.node_count}")
            pair = (link.from_node, link.to_node)
            if pair in seen and not self.allow_parallel_links:
                raise NetworkValidationError(
                    f"duplicate link {link.from_node + 1}->{link.to_node + 1}")
            seen.add(pair)
        if self.zone_count is None:
            object.__setattr__(self, "zone_count", self.node_count)

    @property
    def link_count(self) -> int:
        return len(self.links)

    # Column views used by the numeric kernels. Recomputed on demand; cheap at N, E < 1e4.
    @property
    def from_nodes(self) -> np.ndarray:
        return np.array([l.from_node for l in self.links], dtype=np.int64)

    @property
    def to_nodes(self) -> np.ndarray:
        return np.array([l.to_node for l in self.links], dtype=np.int64)

    @property
    def free_flow_times(self) -> np.ndarray:
        return np.array([l.free_flow_time for l in self.links], dtype=np.float64)

    @property
    def capacities(self) -> np.ndarray:
        return np.array([l.capacity for l in self.links], dtype=np.float64)

    @property
    def alphas(self) -> np.ndarray:
        return np.array([l.bpr_alpha for l in self.links], dtype=np.float64)

    @property
    def betas(self) -> np.ndarray:
        return np.array([l.bpr_beta for l in self.links], dtype=np.float64)

    def forward_star(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR outgoing-link index: links leaving node ``n`` are
        ``out_links[out_start[n]:out_start[n + 1]]``, in increasing link id."""
        frm = self.from_nodes
        order = np.argsort(frm, kind="stable")
        counts = np.bincount(frm, minlength=self.node_count)
        out_start = np.zeros(self.node_count + 1, dtype=np.int64)
        np.cumsum(counts, out=out_start[1:])
        return out_start, order.astype(np.int64)


_META_RE = re.compile(r"^\s*<([^>]+)>(.*)$")


def _read_metadata(lines: list[str]) -> tuple[dict[str, str], int]:
    meta: dict[str, str] = {}
    for lineno, raw in enumerate(lines, start=1):
        m = _META_RE.match(raw)
        if m is None:
            continue
        key = m.group(1).strip().upper()
        if key == "END OF METADATA":
            return meta, lineno
        meta[key] = m.group(2).strip()
    raise TntpParseError("missing metadata tag <END OF METADATA>")


def _require_int(meta: dict[str, str], tag: str) -> int:
    if tag not in meta:
        raise TntpParseError(f"missing metadata tag <{tag}>")
    try:
        return int(float(meta[tag]))
    except ValueError:
        raise TntpParseError(f"metadata tag <{tag}> is not numeric: {meta[tag]!r}") from None


def _text(stream: str | TextIO) -> str:
    return stream if isinstance(stream, str) else stream.read()


def parse_tntp_network(stream: str | TextIO, name: str = "network") -> Network:
    """Parse a TNTP ``*_net.tntp`` file. Node ids become 0-based."""
    lines = _text(stream).splitlines()
    meta, body_start = _read_metadata(lines)
    n_nodes = _require_int(meta, "NUMBER OF NODES")
    n_links = _require_int(meta, "NUMBER OF LINKS")
    first_thru = _require_int(meta, "FIRST THRU NODE")
    n_zones = int(float(meta["NUMBER OF ZONES"])) if "NUMBER OF ZONES" in meta else n_nodes

    links: list[Link] = []
    for lineno in range(body_start + 1, len(lines) + 1):
        line = lines[lineno - 1].strip()
        if not line or line.startswith("~"):
            continue
        fields = line.rstrip(";").split()
        if len(fields) < 10:
            raise TntpParseError(f"line {lineno}: expected 10 link fields, got {len(fields)}")
        try:
            init, term = int(fields[0]), int(fields[1])
            cap, length, fft, b, power, speed, toll = (float(x) for x in fields[2:9])
            ltype = int(float(fields[9]))
        except ValueError:
            raise TntpParseError(f"line {lineno}: non-numeric field in {line!r}") from None
        if not (1 <= init <= n_nodes and 1 <= term <= n_nodes):
            raise NetworkValidationError(
                f"line {lineno}: node id out of range 1..{n_nodes}: {init}->{term}")
        links.append(Link(len(links), init - 1, term - 1, fft, cap, b, power, length,
                          speed, toll, ltype))
    if len(links) != n_links:
        raise TntpParseError(f"<NUMBER OF LINKS> is {n_links} but {len(links)} link rows found")
    return Network(n_nodes, tuple(links), first_thru - 1, n_zones, name, meta)


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def write_tntp_network(net: Network) -> str:
    """Serialize to TNTP text; ``parse_tntp_network`` of the result reproduces ``net``."""
    out = [
        f"<NUMBER OF ZONES> {net.zone_count}",
        f"<NUMBER OF NODES> {net.node_count}",
        f"<FIRST THRU NODE> {net.first_thru_node + 1}",
        f"<NUMBER OF LINKS> {net.link_count}",
        "<END OF METADATA>",
        "",
        "~ \tinit_node\tterm_node\tcapacity\tlength\tfree_flow_time\tb\tpower\tspeed\ttoll\tlink_type\t;",
    ]
    for l in net.links:
        vals = [str(l.from_node + 1), str(l.to_node + 1), _fmt(l.capacity), _fmt(l.length),
                _fmt(l.free_flow_time), _fmt(l.bpr_alpha), _fmt(l.bpr_beta), _fmt(l.speed),
                _fmt(l.toll), str(l.link_type)]
        out.append("\t" + "\t".join(vals) + "\t;")
    return "\n".join(out) + "\n"


def validate_demand(demand: np.ndarray, node_count: int | None = None) -> np.ndarray:
    """Check the DemandMatrix invariants and return a float64 copy."""
    x = np.array(demand, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise NetworkValidationError(f"demand must be square, got shape {x.shape}")
    if node_count is not None and x.shape[0] != node_count:
        raise NetworkValidationError(f"demand is {x.shape[0]}x{x.shape[0]}, network has {node_count} nodes")
    if not np.all(np.isfinite(x)):
        raise NetworkValidationError("demand contains non-finite entries")
    if np.any(x < 0):
        raise NetworkValidationError("demand contains negative entries")
    if np.any(np.diag(x) != 0):
        raise NetworkValidationError("demand diagonal must be zero")
    return x


_ORIGIN_RE = re.compile(r"^\s*Origin\s+(\d+)", re.IGNORECASE)
_ENTRY_RE = re.compile(r"(\d+)\s*:\s*([^;\s]+)\s*;?")


def parse_tntp_trips(stream: str | TextIO, node_count: int | None = None) -> np.ndarray:
    """Parse a TNTP trips file into an N x N demand matrix.

    Zones map to nodes ``0..Z-1``; with ``node_count`` > Z the remaining rows and
    columns stay zero. Intrazonal entries are dropped.
    """
    lines = _text(stream).splitlines()
    meta, body_start = _read_metadata(lines)
    n_zones = _require_int(meta, "NUMBER OF ZONES")
    size = n_zones if node_count is None else node_count
    if size < n_zones:
        raise NetworkValidationError(f"{n_zones} zones do not fit in {size} nodes")
    x = np.zeros((size, size), dtype=np.float64)
    origin = None
    for lineno in range(body_start + 1, len(lines) + 1):
        line = lines[lineno - 1]
        if not line.strip() or line.lstrip().startswith("~"):
            continue
        m = _ORIGIN_RE.match(line)
        if m:
            origin = int(m.group(1))
            if not 1 <= origin <= n_zones:
                raise NetworkValidationError(f"line {lineno}: origin zone {origin} > {n_zones}")
            continue
        if origin is None:
            raise TntpParseError(f"line {lineno}: demand entry before any 'Origin' line")
        for dest_s, flow_s in _ENTRY_RE.findall(line):
            dest = int(dest_s)
            try:
                flow = float(flow_s)
            except ValueError:
                raise TntpParseError(f"line {lineno}: non-numeric flow {flow_s!r}") from None
            if not 1 <= dest <= n_zones:
                raise NetworkValidationError(f"line {lineno}: destination zone {dest} > {n_zones}")
            if flow < 0:
                raise NetworkValidationError(f"line {lineno}: negative flow {flow}")
            x[origin - 1, dest - 1] += flow
    np.fill_diagonal(x, 0.0)
    return x


class DegreeMode(str, enum.Enum):
    WEIGHTED_ROW_SUM = "weighted_row_sum"
    OUT_LINK_COUNT = "out_link_count"


@dataclass(frozen=True)
class GraphMatrices:
    adjacency: np.ndarray
    neighborhood: np.ndarray
    degree: np.ndarray
    random_walk: np.ndarray
    laplacian: np.ndarray
    spectral: np.ndarray

    def operator(self, kind: str) -> np.ndarray:
        return {"random_walk": self.random_walk,
                "laplacian": self.laplacian,
                "spectral": self.spectral}[str(getattr(kind, "value", kind))]


def build_graph_matrices(net: Network,
                         degree_mode: DegreeMode | str = DegreeMode.WEIGHTED_ROW_SUM) -> GraphMatrices:
    """Free-flow-time weighted adjacency and the three propagation operators.

    The degree matrix is the row sum of the neighborhood matrix by default, which
    makes the random-walk operator row-stochastic. ``out_link_count`` counts
    outgoing links plus the self-loop instead.
    """
    mode = DegreeMode(degree_mode)
    n = net.node_count
    a = np.zeros((n, n))
    if len({(l.from_node, l.to_node) for l in net.links}) != net.link_count:
        raise GraphConstructionError("adjacency is undefined for a network with parallel links")
    for l in net.links:
        a[l.from_node, l.to_node] = l.free_flow_time
    a_bar = a + np.eye(n)
    if mode is DegreeMode.WEIGHTED_ROW_SUM:
        deg = a_bar.sum(axis=1)
    else:
        deg = np.count_nonzero(a, axis=1).astype(np.float64) + 1.0
    isolated = np.flatnonzero(np.count_nonzero(a, axis=1) == 0)
    if isolated.size:
        raise GraphConstructionError(f"node {isolated[0] + 1} has no outgoing links")
    p_rw = a_bar / deg[:, None]
    p_lap = np.eye(n) - p_rw
    inv_sqrt = 1.0 / np.sqrt(deg)
    p_sp = inv_sqrt[:, None] * a_bar * inv_sqrt[None, :]
    return GraphMatrices(a, a_bar, np.diag(deg), p_rw, p_lap, p_sp)
