"""Dataset splitting, full-batch training and evaluation metrics."""
from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import OptimizerState, Tensor
from .errors import NumericError
from .model import GcnnParams, forward, predict_flows, propagation_operator
from .network import Network
from .scenarios import SampleRecord, stack

log = logging.getLogger(__name__)


class SplitConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.7
    val: float = 0.2
    test: float = 0.1
    seed: int = 0

    def __post_init__(self):
        fr = (self.train, self.val, self.test)
        if min(fr) <= 0 or not math.isclose(sum(fr), 1.0, abs_tol=1e-9):
            raise SplitConfigError(f"split fractions must be positive and sum to 1, got {fr}")


def split_dataset(samples: list, spec: SplitSpec = SplitSpec()) -> tuple[list, list, list]:
    """Shuffled train/val/test partition. Val and test sizes are floored; the
    remainder goes to train."""
    n = len(samples)
    if n == 0:
        raise SplitConfigError("cannot split an empty dataset")
    n_val = int(math.floor(n * spec.val + 1e-9))
    n_test = int(math.floor(n * spec.test + 1e-9))
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) == 0:
        raise SplitConfigError(f"split of {n} samples leaves an empty part "
                               f"({n_train}/{n_val}/{n_test})")
    perm = np.random.default_rng(spec.seed).permutation(n)
    pick = [samples[i] for i in perm]
    return pick[:n_train], pick[n_train:n_train + n_val], pick[n_train + n_val:]


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    max_iterations: int = 10_000
    eval_every: int = 50
    early_stop_patience: int | None = None
    # None means full batch
    batch_size: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.optimizer not in ("adam", "rmsprop"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")


@dataclass
class Metrics:
    rmse: float
    mae: float
    r2: float
    pct_error_over_mean: float
    min_flow: float
    max_flow: float
    mean_flow: float
    n_samples: int = 0

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["pct_error"] = d["pct_error_over_mean"]
        return d


@dataclass
class TrainReport:
    # rows of (iteration, train MSE, val MSE), MSE in squared vehicles
    curve: list[tuple[int, float, float]] = field(default_factory=list)
    metrics: dict[str, Metrics] = field(default_factory=dict)
    best_iteration: int = 0
    wall_seconds: float = 0.0
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"curve": [list(r) for r in self.curve],
                "metrics": {k: m.to_dict() for k, m in self.metrics.items()},
                "best_iteration": self.best_iteration,
                "wall_seconds": self.wall_seconds,
                "config": self.config}


def compute_metrics(actual: np.ndarray, predicted: np.ndarray) -> Metrics:
    """RMSE and MAE averaged per sample then over samples; R^2 pooled over all
    (sample, link) pairs."""
    a = np.atleast_2d(np.asarray(actual, dtype=np.float64))
    p = np.atleast_2d(np.asarray(predicted, dtype=np.float64))
    err = a - p
    rmse = float(np.sqrt(np.mean(np.mean(err ** 2, axis=1))))
    mae = float(np.mean(np.mean(np.abs(err), axis=1)))
    sst = float(np.sum((a - a.mean()) ** 2))
    sse = float(np.sum(err ** 2))
    r2 = 1.0 - sse / sst if sst > 0 else (1.0 if sse == 0 else -math.inf)
    mean_flow = float(a.mean())
    pct = 100.0 * mae / mean_flow if mean_flow != 0 else math.inf
    return Metrics(rmse, mae, r2, pct, float(a.min()), float(a.max()), mean_flow, a.shape[0])


def fit_scales(params: GcnnParams, train: list[SampleRecord]) -> GcnnParams:
    """Fill unset input/output scales from the training set maxima."""
    x, f = stack(train)
    cfg = params.config
    cfg = dataclasses.replace(
        cfg,
        input_scale=cfg.input_scale if cfg.input_scale is not None else float(x.max()) or 1.0,
        output_scale=cfg.output_scale if cfg.output_scale is not None else float(f.max()) or 1.0)
    return dataclasses.replace(params, config=cfg)


def train(net: Network, params: GcnnParams, train_set: list[SampleRecord],
          val_set: list[SampleRecord], tcfg: TrainConfig = TrainConfig()
          ) -> tuple[GcnnParams, TrainReport]:
    """Minimize MSE on ``train_set``; return the parameters with the best
    validation loss seen at an evaluation point."""
    start = time.perf_counter()
    params = fit_scales(params.copy(), train_set)
    cfg = params.config
    p = Tensor(propagation_operator(net, cfg))
    xt, ft = stack(train_set)
    xt, ft = xt / cfg.input_scale, ft / cfg.output_scale
    xv, fv = stack(val_set)
    xv, fv = xv / cfg.input_scale, fv / cfg.output_scale
    out2 = cfg.output_scale ** 2

    state = OptimizerState(kind=tcfg.optimizer, learning_rate=tcfg.learning_rate)
    tensors = params.tensors()
    rng = np.random.default_rng(tcfg.seed)
    report = TrainReport(config={"train": dataclasses.asdict(tcfg), "model": cfg.to_dict(),
                                 "n_train": len(train_set), "n_val": len(val_set)})
    best_val = math.inf
    best = params.copy()
    stale = 0
    for it in range(1, tcfg.max_iterations + 1):
        if tcfg.batch_size and tcfg.batch_size < len(xt):
            idx = rng.choice(len(xt), tcfg.batch_size, replace=False)
            xb, fb = xt[idx], ft[idx]
        else:
            xb, fb = xt, ft
        try:
            loss = ad.mse_loss(forward(params, p, xb), fb)
            ad.backward(loss)
            ad.optimizer_step(state, tensors)
        except NumericError as exc:
            ad.reset_default_tape()
            raise NumericError(f"iteration {it}: {exc}") from exc
        if it % tcfg.eval_every == 0 or it == tcfg.max_iterations:
            with ad.no_grad():
                val = float(ad.mse_loss(forward(params, p, xv), fv).value)
            report.curve.append((it, float(loss.value) * out2, val * out2))
            if val < best_val:
                best_val, best, stale = val, params.copy(), 0
                report.best_iteration = it
            else:
                stale += 1
                if tcfg.early_stop_patience and stale >= tcfg.early_stop_patience:
                    log.info("early stop at iteration %d", it)
                    break
    report.metrics["train"] = evaluate(best, net, train_set, p=p.value)
    report.metrics["val"] = evaluate(best, net, val_set, p=p.value)
    report.wall_seconds = time.perf_counter() - start
    return best, report


def evaluate(params: GcnnParams, net: Network, samples: list[SampleRecord],
             p: np.ndarray | None = None) -> Metrics:
    if not samples:
        raise ValueError("evaluate needs at least one sample")
    x, f = stack(samples)
    pred, _ = predict_flows(params, net, x, p=p)
    return compute_metrics(f, pred)


def export_loss_curve(report: TrainReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "train_mse", "val_mse"])
    for it, tr, va in report.curve:
        w.writerow([it, repr(tr), repr(va)])
    return buf.getvalue()


def export_scatter(params: GcnnParams, net: Network, samples: list[SampleRecord]) -> str:
    """One row per (sample, link): actual vs predicted flow."""
    x, f = stack(samples)
    pred, _ = predict_flows(params, net, x)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample_id", "link_id", "from", "to", "actual", "predicted"])
    for s, actual, guess in zip(samples, f, pred):
        for link, a, g in zip(net.links, actual, guess):
            w.writerow([s.sample_id, link.id, link.from_node + 1, link.to_node + 1,
                        repr(float(a)), repr(float(g))])
    return buf.getvalue()
