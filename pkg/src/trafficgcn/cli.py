"""Command-line entry point: solve, generate, train, eval, analyze, export-plots.

Settings come from built-in defaults, then an optional flat JSON ``--config``
file, then command-line flags (flags win). Every output directory receives a
``run_config.json`` holding the full effective configuration.

Exit codes: 0 success, 1 usage or input error, 2 non-convergence, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import shutil
import sys
import tempfile
from importlib.resources import files
from pathlib import Path

import numpy as np

from . import kernels
from .assignment import FwConfig, InfeasibleAssignmentError, frank_wolfe_solve
from .errors import NumericError
from .network import Network, parse_tntp_network, parse_tntp_trips


EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED, EXIT_NUMERIC = 0, 1, 2, 3

FILTERS = ("random_walk", "laplacian", "spectral")
COMBINES = ("hadamard", "matmul")
SCENARIOS = ("uncongested", "moderate", "congested")
SPLITS = ("train", "val", "test", "all")


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))
        self.problems = problems


def _bundled(name: str) -> str:
    return str(files("trafficgcn") / "data" / name)


def _positive(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _fraction(v):
    return 0 < v < 1


# key -> (type, default, check, message)
SCHEMA: dict[str, tuple] = {
    "net": (str, None, None, ""),
    "trips": (str, None, None, ""),
    "out": (str, None, None, ""),
    "dataset": (str, None, None, ""),
    "checkpoint": (str, None, None, ""),
    "seed": (int, 0, _nonneg, "must be >= 0"),
    "gap": (float, 1e-4, _positive, "must be > 0"),
    "max_fw_iterations": (int, 500, _positive, "must be >= 1"),
    "fw_direction": (str, "conjugate", lambda v: v in ("conjugate", "classic"),
                     "must be conjugate or classic"),
    "demand_scale": (float, 1.0, _positive, "must be > 0"),
    "n": (int, 50, _positive, "must be >= 1"),
    "workers": (int, 1, _positive, "must be >= 1"),
    "scenario": (list, list(SCENARIOS), lambda v: bool(v) and all(s in SCENARIOS for s in v),
                 f"must be a non-empty list drawn from {list(SCENARIOS)}"),
    "factor_min": (float, 0.1, _positive, "must be > 0"),
    "factor_max": (float, 1.0, _positive, "must be > 0"),
    "filter": (str, "random_walk", lambda v: v in FILTERS, f"must be one of {list(FILTERS)}"),
    "theta_combine": (str, "hadamard", lambda v: v in COMBINES, f"must be one of {list(COMBINES)}"),
    "degree_mode": (str, "weighted_row_sum",
                    lambda v: v in ("weighted_row_sum", "out_link_count"),
                    "must be weighted_row_sum or out_link_count"),
    "optimizer": (str, "adam", lambda v: v in ("adam", "rmsprop"), "must be adam or rmsprop"),
    "learning_rate": (float, 1e-3, _positive, "must be > 0"),
    "iterations": (int, 5000, _positive, "must be >= 1"),
    "eval_every": (int, 50, _positive, "must be >= 1"),
    "train_fraction": (float, 0.7, _fraction, "must be in (0, 1)"),
    "val_fraction": (float, 0.2, _fraction, "must be in (0, 1)"),
    "test_fraction": (float, 0.1, _fraction, "must be in (0, 1)"),
    "split": (str, "test", lambda v: v in SPLITS, f"must be one of {list(SPLITS)}"),
}

# keys each command reads; paths listed in the second tuple must exist at start
COMMAND_KEYS = {
    "solve": (("net", "trips", "out", "gap", "max_fw_iterations", "fw_direction",
               "demand_scale"), ("net", "trips")),
    "generate": (("net", "trips", "out", "seed", "gap", "max_fw_iterations", "fw_direction",
                  "n", "workers", "scenario", "factor_min", "factor_max"), ("net", "trips")),
    "train": (("net", "dataset", "out", "seed", "scenario", "filter", "theta_combine",
               "degree_mode", "optimizer", "learning_rate", "iterations", "eval_every",
               "train_fraction", "val_fraction", "test_fraction"), ("net", "dataset")),
    "eval": (("net", "dataset", "checkpoint", "out", "split"), ("net", "dataset", "checkpoint")),
    "analyze": (("net", "dataset", "checkpoint", "out", "scenario"), ("net", "dataset")),
    "export-plots": (("net", "dataset", "checkpoint", "out", "split"),
                     ("net", "dataset", "checkpoint")),
}


def _coerce(key: str, value, problems: list[str]):
    typ = SCHEMA[key][0]
    if value is None:
        return None
    try:
        if typ is list:
            value = [value] if isinstance(value, str) else list(value)
            return [str(v) for v in value]
        if typ is int and (isinstance(value, bool) or float(value) != int(value)):
            raise ValueError
        return typ(value)
    except (TypeError, ValueError):
        problems.append(f"{key}: expected {typ.__name__}, got {value!r}")
        return None


def resolve_config(command: str, file_cfg: dict, flags: dict) -> dict:
    """Merge defaults, config file and flags for ``command``; report every problem at once."""
    keys, must_exist = COMMAND_KEYS[command]
    problems = [f"{k}: unknown setting" for k in file_cfg if k not in SCHEMA]
    cfg = {k: SCHEMA[k][1] for k in keys}
    cfg["net"] = _bundled("SiouxFalls_net.tntp")
    if "trips" in cfg:
        cfg["trips"] = _bundled("SiouxFalls_trips.tntp")
    cfg["out"] = f"{command}-out"
    for source in (file_cfg, flags):
        for k, v in source.items():
            if k in cfg:
                cfg[k] = _coerce(k, v, problems)
    for k in keys:
        check, msg = SCHEMA[k][2], SCHEMA[k][3]
        v = cfg[k]
        if v is not None and check is not None and not check(v):
            problems.append(f"{k}: {msg}, got {v!r}")
    if command == "generate" and all(cfg[k] is not None for k in ("factor_min", "factor_max")):
        if cfg["factor_min"] > cfg["factor_max"]:
            problems.append("factor_min must not exceed factor_max")
    if command == "train":
        fr = [cfg[k] for k in ("train_fraction", "val_fraction", "test_fraction")]
        if None not in fr and abs(sum(fr) - 1.0) > 1e-9:
            problems.append(f"split fractions must sum to 1, got {sum(fr):g}")
    for k in must_exist:
        if cfg[k] is None:
            problems.append(f"{k}: required")
        elif not Path(cfg[k]).exists():
            problems.append(f"{k}: path does not exist: {cfg[k]}")
    if problems:
        raise ConfigError(problems)
    return cfg


@contextlib.contextmanager
def staged_output(out: str):
    """Yield a scratch directory that replaces ``out`` only if the block succeeds."""
    target = Path(out)
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{target.name}-", dir=target.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if target.exists():
        shutil.rmtree(target)
    tmp.rename(target)


def _echo(stage: Path, command: str, cfg: dict, **extra) -> None:
    doc = {"command": command, "config": cfg, "kernel_backend": kernels.BACKEND, **extra}
    (stage / "run_config.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _load_net(cfg: dict) -> Network:
    path = Path(cfg["net"])
    return parse_tntp_network(path.read_text(encoding="utf-8"), name=path.name.split("_")[0])


def _load_trips(cfg: dict, net: Network) -> np.ndarray:
    return parse_tntp_trips(Path(cfg["trips"]).read_text(encoding="utf-8"), net.node_count)


def _fw_config(cfg: dict) -> FwConfig:
    return FwConfig(max_iterations=cfg["max_fw_iterations"], relative_gap_tol=cfg["gap"],
                    direction=cfg["fw_direction"])


def cmd_solve(cfg: dict) -> int:
    """Solve user equilibrium for one demand level."""
    from .scenarios import scale_demand

    net = _load_net(cfg)
    demand = scale_demand(_load_trips(cfg, net), cfg["demand_scale"])
    res = frank_wolfe_solve(net, demand, _fw_config(cfg))
    summary = {"relative_gap": res.relative_gap, "iterations": res.iterations_used,
               "beckmann_value": res.beckmann_value, "converged": res.converged,
               "total_demand": float(demand.sum()), "network": net.name}
    with staged_output(cfg["out"]) as stage:
        (stage / "flows.csv").write_text(res.to_csv(net))
        _write_json(stage / "summary.json", summary)
        _echo(stage, "solve", cfg)
    print(json.dumps(summary, sort_keys=True))
    if not res.converged:
        print(f"error: relative gap {res.relative_gap:.3g} above {cfg['gap']:.3g} "
              f"after {res.iterations_used} iterations", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_generate(cfg: dict) -> int:
    """Generate a labelled scenario dataset."""
    from .scenarios import generate_dataset, write_dataset

    net = _load_net(cfg)
    base = _load_trips(cfg, net)
    ds = generate_dataset(net, base, cfg["n"], cfg["seed"], _fw_config(cfg),
                          scenarios=cfg["scenario"],
                          factor_range=(cfg["factor_min"], cfg["factor_max"]),
                          workers=cfg["workers"])
    with staged_output(cfg["out"]) as stage:
        manifest = write_dataset(ds, stage)
        _echo(stage, "generate", cfg)
    print(json.dumps({"dataset_digest": manifest.content_digest(), "counts": manifest.counts,
                      "warnings": len(manifest.warnings)}, sort_keys=True))
    return EXIT_OK


def _split_spec(d: dict):
    from .training import SplitSpec

    return SplitSpec(d["train_fraction"], d["val_fraction"], d["test_fraction"], d["seed"])


def _training_samples(ds, scenarios):
    return [s for s in ds.samples if s.scenario.value in scenarios]


def cmd_train(cfg: dict) -> int:
    """Train a surrogate on a dataset split."""
    from .model import ModelConfig, init_params, save_model
    from .scenarios import read_dataset
    from .training import TrainConfig, evaluate, export_loss_curve, split_dataset, train

    net = _load_net(cfg)
    ds = read_dataset(cfg["dataset"], net)
    samples = _training_samples(ds, cfg["scenario"])
    if not samples:
        raise ConfigError([f"scenario: dataset has no samples in {cfg['scenario']}"])
    tr, va, te = split_dataset(samples, _split_spec(cfg))
    mcfg = ModelConfig(filter=cfg["filter"], theta_combine=cfg["theta_combine"],
                       seed=cfg["seed"], degree_mode=cfg["degree_mode"])
    tcfg = TrainConfig(optimizer=cfg["optimizer"], learning_rate=cfg["learning_rate"],
                       max_iterations=cfg["iterations"], eval_every=cfg["eval_every"],
                       seed=cfg["seed"])
    params, report = train(net, init_params(net, mcfg), tr, va, tcfg)
    report.metrics["test"] = evaluate(params, net, te)
    split_doc = {k: cfg[k] for k in ("train_fraction", "val_fraction", "test_fraction",
                                     "seed", "scenario")}
    with staged_output(cfg["out"]) as stage:
        save_model(stage / "model.json", params, net, iteration=report.best_iteration,
                   extra={"split": split_doc, "dataset_digest": ds.manifest.content_digest()})
        _write_json(stage / "report.json", report.to_dict())
        (stage / "loss_curve.csv").write_text(export_loss_curve(report))
        _echo(stage, "train", cfg, dataset_digest=ds.manifest.content_digest())
    print(json.dumps({k: m.to_dict() for k, m in report.metrics.items()}, sort_keys=True))
    return EXIT_OK


def _checkpoint_split(cfg: dict, net: Network):
    """Load the checkpoint and the dataset, and recover the split used in training."""
    from .autodiff import load_checkpoint
    from .model import load_model
    from .scenarios import read_dataset
    from .training import split_dataset

    params = load_model(cfg["checkpoint"], net)
    meta = load_checkpoint(cfg["checkpoint"])["extra"]
    split_doc = meta.get("split", {"train_fraction": 0.7, "val_fraction": 0.2,
                                   "test_fraction": 0.1, "seed": 0,
                                   "scenario": list(SCENARIOS)})
    ds = read_dataset(cfg["dataset"], net)
    samples = _training_samples(ds, split_doc["scenario"])
    if cfg["split"] == "all":
        return params, samples
    parts = dict(zip(("train", "val", "test"), split_dataset(samples, _split_spec(split_doc))))
    return params, parts[cfg["split"]]


def cmd_eval(cfg: dict) -> int:
    """Evaluate a checkpoint on a dataset split."""
    from .training import evaluate

    net = _load_net(cfg)
    params, samples = _checkpoint_split(cfg, net)
    metrics = evaluate(params, net, samples).to_dict()
    metrics["split"] = cfg["split"]
    with staged_output(cfg["out"]) as stage:
        _write_json(stage / "metrics.json", metrics)
        _echo(stage, "eval", cfg)
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def cmd_analyze(cfg: dict) -> int:
    """Summarize betweenness dispersion and learned weights."""
    from .analysis import (centrality_study, dispersion_comparison, weight_centrality_correlation,
                           weight_distribution)
    from .model import load_model
    from .scenarios import read_dataset

    net = _load_net(cfg)
    ds = read_dataset(cfg["dataset"], net)
    report = centrality_study(net, ds.samples, cfg["scenario"])
    summary: dict = {"samples": {k: len(v) for k, v in report.sample_ids.items()}}
    if {"congested", "uncongested"} <= report.values.keys():
        larger, equal, smaller = dispersion_comparison(report)
        summary["iqr_congested_vs_uncongested"] = {"larger": larger, "equal": equal,
                                                    "smaller": smaller}
    params = None
    if cfg["checkpoint"]:
        params = load_model(cfg["checkpoint"], net)
        summary["weight_centrality_spearman"] = {
            scen: weight_centrality_correlation(params, report, scen) for scen in report.values}
    with staged_output(cfg["out"]) as stage:
        (stage / "centrality_box.csv").write_text(report.to_csv())
        if params is not None:
            (stage / "weights_box.csv").write_text(weight_distribution(params).to_csv())
        _write_json(stage / "summary.json", summary)
        _echo(stage, "analyze", cfg)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_export_plots(cfg: dict) -> int:
    """Write scatter and loss-curve tables for plotting."""
    from .training import export_scatter

    net = _load_net(cfg)
    params, samples = _checkpoint_split(cfg, net)
    ckpt_dir = Path(cfg["checkpoint"]).parent
    with staged_output(cfg["out"]) as stage:
        (stage / "scatter.csv").write_text(export_scatter(params, net, samples))
        curve = ckpt_dir / "loss_curve.csv"
        if curve.exists():
            shutil.copyfile(curve, stage / "loss_curve.csv")
        _echo(stage, "export-plots", cfg)
    print(json.dumps({"out": cfg["out"], "rows": len(samples) * net.link_count}))
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "generate": cmd_generate, "train": cmd_train,
            "eval": cmd_eval, "analyze": cmd_analyze, "export-plots": cmd_export_plots}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="trafficgcn", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS
    flag_help = {
        "net": "TNTP network file (default: bundled Sioux Falls)",
        "trips": "TNTP trips file (default: bundled Sioux Falls)",
        "out": "output directory",
        "dataset": "dataset directory written by generate",
        "checkpoint": "model.json written by train",
        "gap": "relative gap tolerance",
        "max_fw_iterations": "Frank-Wolfe iteration cap",
        "fw_direction": "Frank-Wolfe direction rule",
        "demand_scale": "multiply the trips matrix by this factor",
        "n": "samples per scenario",
        "workers": "parallel solver processes",
        "scenario": "scenario selection",
        "iterations": "training iterations",
        "split": "dataset split to evaluate",
    }
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or name).strip().splitlines()[0])
        p.add_argument("--config", default=None, help="flat JSON settings file")
        for key in COMMAND_KEYS[name][0]:
            typ = SCHEMA[key][0]
            opt = "--" + key.replace("_", "-")
            kw = {"dest": key, "default": S, "help": flag_help.get(key)}
            if key == "scenario":
                p.add_argument(opt, nargs="+", choices=SCENARIOS, **kw)
            elif key in ("filter", "theta_combine", "split"):
                choices = {"filter": FILTERS, "theta_combine": COMBINES, "split": SPLITS}[key]
                p.add_argument(opt, choices=choices, **kw)
            else:
                p.add_argument(opt, type=str if typ is list else typ, **kw)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    try:
        file_cfg = {}
        if args.config:
            try:
                file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
            except FileNotFoundError:
                raise ConfigError([f"config: path does not exist: {args.config}"]) from None
            except json.JSONDecodeError as exc:
                raise ConfigError([f"config: {args.config} is not valid JSON ({exc})"]) from None
            if not isinstance(file_cfg, dict):
                raise ConfigError([f"config: {args.config} must hold a JSON object"])
        cfg = resolve_config(args.command, file_cfg, flags)
        return COMMANDS[args.command](cfg)
    except NumericError as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except InfeasibleAssignmentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
