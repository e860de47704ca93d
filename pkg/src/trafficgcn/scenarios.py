"""Demand scenario generation, congestion classification and dataset storage.

Each sample scales the base OD table by one uniform random factor and solves
the user equilibrium for it. Factors are drawn from per-regime sub-ranges found
by a calibration sweep, so that solutions land in the intended congestion regime.

On-disk layout::

    manifest.json
    od/<sample_id>.csv       N rows x N columns
    flows/<sample_id>.csv    header + E rows (link_id, flow)
"""
from __future__ import annotations

import csv
import dataclasses
import enum
import hashlib
import io
import json
import logging
import os
import shutil
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assignment import FwConfig, frank_wolfe_solve
from .network import Network, validate_demand, write_tntp_network

log = logging.getLogger(__name__)

FORMAT = "trafficgcn-dataset/1"
SIG_DIGITS = 12
DEFAULT_FACTOR_RANGE = (0.1, 1.0)


class DatasetIntegrityError(RuntimeError):
    pass


class DatasetLoadError(ValueError):
    pass


class ScenarioKind(str, enum.Enum):
    UNCONGESTED = "uncongested"
    MODERATE = "moderate"
    CONGESTED = "congested"


def scale_demand(base: np.ndarray, factor: float) -> np.ndarray:
    if not factor > 0:
        raise ValueError(f"demand scale factor must be positive, got {factor}")
    return np.asarray(base, dtype=np.float64) * factor


def quantize(a: np.ndarray) -> np.ndarray:
    """Round to the storage precision so CSV round trips are exact."""
    fmt = f"%.{SIG_DIGITS}g"
    return np.array([float(fmt % v) for v in np.ravel(a)], dtype=np.float64).reshape(np.shape(a))


def classify_ratios(ratios: np.ndarray) -> tuple[ScenarioKind, bool]:
    """Classify a flow/capacity profile. Returns ``(kind, warning)``.

    uncongested: 95th percentile < 0.5; congested: median > 1.0; moderate:
    95th percentile <= 0.8. Profiles matching none of these are reported as
    moderate with ``warning=True``.
    """
    q50, q95 = np.quantile(np.asarray(ratios, dtype=np.float64), [0.5, 0.95])
    if q95 < 0.5:
        return ScenarioKind.UNCONGESTED, False
    if q50 > 1.0:
        return ScenarioKind.CONGESTED, False
    if q95 <= 0.8:
        return ScenarioKind.MODERATE, False
    return ScenarioKind.MODERATE, True


def classify_scenario(net: Network, flows: np.ndarray) -> ScenarioKind:
    return classify_ratios(np.asarray(flows) / net.capacities)[0]


def _rank(kind: ScenarioKind, warning: bool) -> int:
    if kind is ScenarioKind.UNCONGESTED:
        return 0
    if kind is ScenarioKind.CONGESTED:
        return 3
    return 2 if warning else 1


@dataclass
class SampleRecord:
    sample_id: str
    scale_factor: float
    demand: np.ndarray
    flows: np.ndarray
    relative_gap: float
    scenario: ScenarioKind
    iterations: int = 0
    class_warning: bool = False

    def __eq__(self, other):
        if not isinstance(other, SampleRecord):
            return NotImplemented
        return (self.sample_id == other.sample_id and self.scale_factor == other.scale_factor
                and np.array_equal(self.demand, other.demand)
                and np.array_equal(self.flows, other.flows)
                and self.relative_gap == other.relative_gap and self.scenario == other.scenario
                and self.iterations == other.iterations
                and self.class_warning == other.class_warning)


@dataclass
class DatasetManifest:
    network_name: str
    network_digest: str
    base_demand_digest: str
    seed: int
    fw_config: dict
    factor_ranges: dict[str, list[float] | None]
    counts: dict[str, int] = field(default_factory=dict)
    samples: list[dict] = field(default_factory=list)
    calibration: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    created: str = ""
    format: str = FORMAT

    def content_digest(self) -> str:
        """Digest of everything except the creation timestamp."""
        d = dataclasses.asdict(self)
        d.pop("created")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["dataset_digest"] = self.content_digest()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> DatasetManifest:
        d = dict(d)
        d.pop("dataset_digest", None)
        return cls(**d)


@dataclass
class ScenarioDataset:
    manifest: DatasetManifest
    samples: list[SampleRecord]

    def by_scenario(self, kind: ScenarioKind | str) -> list[SampleRecord]:
        kind = ScenarioKind(kind)
        return [s for s in self.samples if s.scenario is kind]

    def __len__(self):
        return len(self.samples)


def network_digest(net: Network) -> str:
    return hashlib.sha256(write_tntp_network(net).encode()).hexdigest()


def demand_digest(x: np.ndarray) -> str:
    return hashlib.sha256(_matrix_csv(x).encode()).hexdigest()


def _created_stamp() -> str:
    # SOURCE_DATE_EPOCH pins the stamp for reproducible builds
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = time.gmtime(int(epoch)) if epoch else time.gmtime()
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", t)


def _solve_label(net: Network, base: np.ndarray, factor: float, cfg: FwConfig):
    x = quantize(scale_demand(base, factor))
    res = frank_wolfe_solve(net, x, cfg)
    kind, warn = classify_ratios(res.flows / net.capacities)
    return x, res, kind, warn


def calibrate_factor_ranges(net: Network, base: np.ndarray, cfg: FwConfig,
                            factor_range=DEFAULT_FACTOR_RANGE, grid_points: int = 10,
                            refine_steps: int = 12):
    """Find the factor sub-range that produces each congestion regime.

    Solves on an even grid over ``factor_range`` and bisects between grid points
    wherever the regime changes, assuming congestion grows with the factor.
    Returns ``(ranges, sweep)``: ``ranges[kind] = [lo, hi]`` or ``None`` when the
    regime is not reachable, and ``sweep`` lists every solved point.
    """
    lo_f, hi_f = factor_range
    sweep: dict[float, int] = {}

    def rank_at(s: float) -> int:
        s = float(s)
        if s not in sweep:
            _, res, kind, warn = _solve_label(net, base, s, cfg)
            sweep[s] = _rank(kind, warn)
        return sweep[s]

    grid = [float(v) for v in np.round(np.linspace(lo_f, hi_f, grid_points), 12)]
    ranks = [rank_at(s) for s in grid]

    def boundary(level: int):
        # (last factor with rank <= level, first factor with rank > level)
        idx = next((i for i, r in enumerate(ranks) if r > level), None)
        if idx is None:
            return grid[-1], None
        if idx == 0:
            return None, grid[0]
        a, b = grid[idx - 1], grid[idx]
        for _ in range(refine_steps):
            mid = 0.5 * (a + b)
            if rank_at(mid) > level:
                b = mid
            else:
                a = mid
        return a, b

    ranges: dict[str, list[float] | None] = {}
    unc_hi, mod_lo = boundary(0)
    mod_hi, _ = boundary(1)
    _, cong_lo = boundary(2)
    ranges[ScenarioKind.UNCONGESTED.value] = (
        [grid[0], unc_hi] if unc_hi is not None and rank_at(grid[0]) == 0 else None)
    if mod_lo is not None and mod_hi is not None and mod_lo <= mod_hi \
            and rank_at(mod_lo) == 1 and rank_at(mod_hi) == 1:
        ranges[ScenarioKind.MODERATE.value] = [mod_lo, mod_hi]
    elif ranks[0] == 1 and mod_hi is not None and rank_at(mod_hi) == 1:
        ranges[ScenarioKind.MODERATE.value] = [grid[0], mod_hi]
    else:
        ranges[ScenarioKind.MODERATE.value] = None
    ranges[ScenarioKind.CONGESTED.value] = (
        [cong_lo, grid[-1]] if cong_lo is not None and rank_at(grid[-1]) == 3 else None)
    table = [{"factor": s, "rank": r} for s, r in sorted(sweep.items())]
    return ranges, table


def _draw_sample(args):
    net, base, cfg, seed, s_index, kind_value, k, lo, hi, redraw_budget = args
    rng = np.random.default_rng([seed, s_index, k])
    target = ScenarioKind(kind_value)
    for attempt in range(redraw_budget + 1):
        factor = float(rng.uniform(lo, hi))
        x, res, kind, warn = _solve_label(net, base, factor, cfg)
        if kind is target and not warn:
            break
    return SampleRecord(
        sample_id=f"{target.value}_{k:05d}", scale_factor=factor, demand=x,
        flows=quantize(res.flows), relative_gap=float(res.relative_gap), scenario=kind,
        iterations=res.iterations_used, class_warning=warn or kind is not target,
    ), attempt


def generate_dataset(net: Network, base: np.ndarray, n_per_scenario: int, seed: int,
                     cfg: FwConfig | None = None, scenarios=tuple(ScenarioKind),
                     factor_range=DEFAULT_FACTOR_RANGE, redraw_budget: int = 20,
                     workers: int = 1, calibration=None) -> ScenarioDataset:
    """Draw, solve and classify ``n_per_scenario`` samples for each regime.

    Deterministic in ``seed``: each sample has its own generator derived from
    ``(seed, scenario index, sample index)``, so the worker count does not change
    the result. ``calibration`` may pass precomputed ``(ranges, sweep)``.
    """
    if n_per_scenario < 1:
        raise ValueError("n_per_scenario must be >= 1")
    cfg = cfg or FwConfig()
    base = validate_demand(base, net.node_count)
    scenarios = [ScenarioKind(s) for s in scenarios]
    ranges, sweep = calibration or calibrate_factor_ranges(net, base, cfg, factor_range)
    warnings: list[str] = []
    jobs = []
    for kind in scenarios:
        rng_ = ranges.get(kind.value)
        if rng_ is None:
            warnings.append(f"no calibrated factor range for {kind.value}; "
                            f"drawing from {list(factor_range)}")
            rng_ = list(factor_range)
        s_index = list(ScenarioKind).index(kind)
        jobs += [(net, base, cfg, seed, s_index, kind.value, k, rng_[0], rng_[1], redraw_budget)
                 for k in range(n_per_scenario)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_draw_sample, jobs, chunksize=8))
    else:
        results = [_draw_sample(j) for j in jobs]

    samples = []
    for rec, attempts in results:
        if rec.class_warning:
            warnings.append(f"{rec.sample_id}: classified {rec.scenario.value} "
                            f"(warning) after {attempts + 1} draws")
        if rec.relative_gap > cfg.relative_gap_tol:
            warnings.append(f"{rec.sample_id}: relative gap {rec.relative_gap:.3g} above tolerance")
        samples.append(rec)
    manifest = DatasetManifest(
        network_name=net.name, network_digest=network_digest(net),
        base_demand_digest=demand_digest(base), seed=seed, fw_config=cfg.to_dict(),
        factor_ranges={k.value: ranges.get(k.value) for k in scenarios},
        calibration=sweep, warnings=warnings, created=_created_stamp())
    _refresh_manifest(manifest, samples)
    return ScenarioDataset(manifest, samples)


def _refresh_manifest(manifest: DatasetManifest, samples: list[SampleRecord]) -> None:
    counts: dict[str, int] = {}
    entries = []
    for s in samples:
        counts[s.scenario.value] = counts.get(s.scenario.value, 0) + 1
        entries.append({
            "sample_id": s.sample_id, "scenario": s.scenario.value,
            "scale_factor": s.scale_factor, "relative_gap": s.relative_gap,
            "iterations": s.iterations, "class_warning": s.class_warning,
            "od_sha256": hashlib.sha256(_matrix_csv(s.demand).encode()).hexdigest(),
            "flows_sha256": hashlib.sha256(_flows_csv(s.flows).encode()).hexdigest(),
        })
    manifest.counts = counts
    manifest.samples = entries


def _fmt(v: float) -> str:
    return f"%.{SIG_DIGITS}g" % v


def _matrix_csv(x: np.ndarray) -> str:
    return "".join(",".join(_fmt(v) for v in row) + "\n" for row in np.asarray(x))


def _flows_csv(f: np.ndarray) -> str:
    return "link_id,flow\n" + "".join(f"{i},{_fmt(v)}\n" for i, v in enumerate(f))


def write_dataset(ds: ScenarioDataset, directory) -> DatasetManifest:
    """Write ``ds`` under ``directory`` (replaced atomically if it exists)."""
    directory = Path(directory)
    _refresh_manifest(ds.manifest, ds.samples)
    directory.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".tmp-dataset-", dir=directory.parent))
    try:
        (tmp / "od").mkdir()
        (tmp / "flows").mkdir()
        for s in ds.samples:
            (tmp / "od" / f"{s.sample_id}.csv").write_text(_matrix_csv(s.demand))
            (tmp / "flows" / f"{s.sample_id}.csv").write_text(_flows_csv(s.flows))
        (tmp / "manifest.json").write_text(json.dumps(ds.manifest.to_dict(), indent=1))
        if directory.exists():
            shutil.rmtree(directory)
        tmp.rename(directory)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return ds.manifest


def _parse_rows(path: Path, text: str, skip_header: bool) -> list[list[float]]:
    rows = []
    reader = csv.reader(io.StringIO(text))
    for lineno, row in enumerate(reader, start=1):
        if skip_header and lineno == 1:
            continue
        try:
            vals = [float(v) for v in row]
        except ValueError:
            raise DatasetLoadError(f"{path}: row {lineno}: non-numeric value") from None
        if not all(np.isfinite(vals)):
            raise DatasetLoadError(f"{path}: row {lineno}: non-finite value")
        rows.append(vals)
    return rows


def read_dataset(directory, net: Network | None = None) -> ScenarioDataset:
    """Load and verify a dataset written by :func:`write_dataset`."""
    directory = Path(directory)
    mpath = directory / "manifest.json"
    if not mpath.exists():
        raise DatasetIntegrityError(f"{mpath} is missing")
    raw = json.loads(mpath.read_text())
    manifest = DatasetManifest.from_dict(raw)
    if raw.get("dataset_digest") not in (None, manifest.content_digest()):
        raise DatasetIntegrityError(f"{mpath}: manifest digest mismatch")
    if net is not None and network_digest(net) != manifest.network_digest:
        raise DatasetIntegrityError(f"dataset was generated for another network "
                                    f"({manifest.network_name!r})")
    for sub in ("od", "flows"):
        present = len(list((directory / sub).glob("*.csv"))) if (directory / sub).exists() else 0
        if present != len(manifest.samples):
            raise DatasetIntegrityError(f"manifest lists {len(manifest.samples)} samples "
                                        f"but {present} files are in {sub}/")
    samples = []
    for entry in manifest.samples:
        sid = entry["sample_id"]
        loaded = {}
        for sub, key in (("od", "od_sha256"), ("flows", "flows_sha256")):
            path = directory / sub / f"{sid}.csv"
            if not path.exists():
                raise DatasetIntegrityError(f"missing sample file {path}")
            text = path.read_text()
            rows = _parse_rows(path, text, skip_header=(sub == "flows"))
            if hashlib.sha256(text.encode()).hexdigest() != entry[key]:
                raise DatasetIntegrityError(f"{path}: digest mismatch")
            loaded[sub] = rows
        demand = np.array(loaded["od"], dtype=np.float64)
        flows = np.array([r[1] for r in loaded["flows"]], dtype=np.float64)
        samples.append(SampleRecord(sid, entry["scale_factor"], demand, flows,
                                    entry["relative_gap"], ScenarioKind(entry["scenario"]),
                                    entry["iterations"], entry["class_warning"]))
    return ScenarioDataset(manifest, samples)


def stack(samples: list[SampleRecord]) -> tuple[np.ndarray, np.ndarray]:
    """(batch, N, N) demands and (batch, E) flows."""
    return (np.stack([s.demand for s in samples]), np.stack([s.flows for s in samples]))
