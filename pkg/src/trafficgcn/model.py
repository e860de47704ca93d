"""Three-layer graph-convolutional link-flow model.

Layers, for a demand matrix X (N x N) and a fixed propagation operator P:

    H1 = tanh(conv(P, theta, X))        N x N
    H2 = tanh(H1 @ W_q)                 N x E
    F  = H2^T @ w_f                     E

``conv`` is ``(theta * P) @ X`` (elementwise routing mask) or
``theta @ (P @ X)``. There are no bias terms, so a zero demand matrix maps to
zero flows exactly.
"""
from __future__ import annotations

import dataclasses
import enum
import hashlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .network import DegreeMode, Network, build_graph_matrices


class FilterKind(str, enum.Enum):
    RANDOM_WALK = "random_walk"
    LAPLACIAN = "laplacian"
    SPECTRAL = "spectral"


class ThetaCombine(str, enum.Enum):
    HADAMARD = "hadamard"
    MATMUL = "matmul"


class ModelShapeError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    filter: FilterKind = FilterKind.RANDOM_WALK
    theta_combine: ThetaCombine = ThetaCombine.HADAMARD
    # demand divisor and label multiplier; fitted from the training set when None
    input_scale: float | None = None
    output_scale: float | None = None
    init: str = "uniform_glorot"
    seed: int = 0
    degree_mode: DegreeMode = DegreeMode.WEIGHTED_ROW_SUM

    def __post_init__(self):
        object.__setattr__(self, "filter", FilterKind(self.filter))
        object.__setattr__(self, "theta_combine", ThetaCombine(self.theta_combine))
        object.__setattr__(self, "degree_mode", DegreeMode(self.degree_mode))
        for name in ("input_scale", "output_scale"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive, got {v}")
        if self.init != "uniform_glorot":
            raise ValueError(f"unknown init {self.init!r}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k in ("filter", "theta_combine", "degree_mode"):
            d[k] = d[k].value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        return cls(**d)


@dataclass
class GcnnParams:
    theta: Tensor
    w_q: Tensor
    w_f: Tensor
    config: ModelConfig

    @property
    def theta_combine(self) -> ThetaCombine:
        return self.config.theta_combine

    def tensors(self) -> dict[str, Tensor]:
        return {"theta": self.theta, "w_q": self.w_q, "w_f": self.w_f}

    def copy(self) -> GcnnParams:
        return GcnnParams(*(Tensor(t.value.copy(), requires_grad=True, name=t.name)
                            for t in (self.theta, self.w_q, self.w_f)), self.config)


def _glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_params(net: Network, cfg: ModelConfig) -> GcnnParams:
    """Glorot-uniform initialization, deterministic in ``cfg.seed``."""
    n, e = net.node_count, net.link_count
    rng = np.random.default_rng(cfg.seed)
    theta = _glorot(rng, (n, n), n, n)
    w_q = _glorot(rng, (n, e), n, e)
    w_f = _glorot(rng, (n,), n, 1)
    return GcnnParams(Tensor(theta, True, "theta"), Tensor(w_q, True, "w_q"),
                      Tensor(w_f, True, "w_f"), cfg)


def propagation_operator(net: Network, cfg: ModelConfig) -> np.ndarray:
    return build_graph_matrices(net, cfg.degree_mode).operator(cfg.filter.value)


def graph_convolution(p, theta, x, combine: ThetaCombine | str = ThetaCombine.HADAMARD) -> Tensor:
    """``(theta * P) @ X`` for hadamard, ``theta @ (P @ X)`` for matmul.

    ``x`` may be a single N x N matrix or a (batch, N, N) stack.
    """
    combine = ThetaCombine(combine)
    p = p if isinstance(p, Tensor) else Tensor(p)
    if combine is ThetaCombine.HADAMARD:
        return ad.matmul(ad.hadamard(theta, p), x)
    return ad.matmul(theta, ad.matmul(p, x))


def forward(params: GcnnParams, p, x, return_hidden: bool = False):
    """Model output in scaled label units for scaled demand ``x``.

    Returns an (E,) or (batch, E) Tensor, plus ``(H1, H2)`` when ``return_hidden``.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    n = params.theta.shape[0]
    if x.shape[-2:] != (n, n):
        raise ModelShapeError(f"demand shape {x.shape} does not match {n} nodes")
    h1 = ad.tanh_elem(graph_convolution(p, params.theta, x, params.theta_combine))
    h2 = ad.tanh_elem(ad.matmul(h1, params.w_q))
    out = ad.matmul(ad.transpose(h2), ad.reshape(params.w_f, (n, 1)))
    out = ad.reshape(out, out.shape[:-1])
    if return_hidden:
        return out, h1, h2
    return out


def predict_flows(params: GcnnParams, net: Network, x_raw: np.ndarray,
                  p: np.ndarray | None = None) -> tuple[np.ndarray, int]:
    """Link flows in vehicles for raw demand; negatives are clamped to zero.

    Returns ``(flows, n_clamped)``. Accepts one matrix or a (batch, N, N) stack.
    """
    cfg = params.config
    if cfg.input_scale is None or cfg.output_scale is None:
        raise ValueError("model scales are not fitted; train the model first")
    n, e = params.w_q.shape
    if (n, e) != (net.node_count, net.link_count):
        raise ModelShapeError(f"model is for N={n}, E={e}; network {net.name!r} has "
                              f"N={net.node_count}, E={net.link_count}")
    x = np.asarray(x_raw, dtype=np.float64)
    if x.shape[-2:] != (n, n):
        raise ModelShapeError(f"demand shape {x.shape} does not match {n} nodes")
    if p is None:
        p = propagation_operator(net, cfg)
    with ad.no_grad():
        out = forward(params, p, x / cfg.input_scale).value * cfg.output_scale
    neg = out < 0
    n_clamped = int(neg.sum())
    if n_clamped:
        out = np.where(neg, 0.0, out)
    return out, n_clamped


def network_fingerprint(net: Network) -> dict:
    h = hashlib.sha256()
    for l in net.links:
        h.update(f"{l.from_node},{l.to_node},{l.free_flow_time!r},{l.capacity!r};".encode())
    return {"name": net.name, "nodes": net.node_count, "links": net.link_count,
            "digest": h.hexdigest()}


def save_model(path, params: GcnnParams, net: Network, state: ad.OptimizerState | None = None,
               iteration: int = 0, extra: dict | None = None) -> None:
    meta = dict(extra or {})
    meta.update({"model_config": params.config.to_dict(),
                 "input_scale": params.config.input_scale,
                 "output_scale": params.config.output_scale,
                 "network": network_fingerprint(net)})
    ad.save_checkpoint(path, params.tensors(), state, params.config.seed, iteration, extra=meta)


def load_model(path, net: Network | None = None) -> GcnnParams:
    """Load a checkpoint; with ``net`` given, refuse one trained on another network."""
    doc = ad.load_checkpoint(path)
    extra = doc["extra"]
    cfg = ModelConfig.from_dict(extra["model_config"])
    if net is not None:
        have = network_fingerprint(net)
        want = extra["network"]
        if (have["nodes"], have["links"], have["digest"]) != (want["nodes"], want["links"], want["digest"]):
            raise ModelShapeError(
                f"checkpoint network {want['name']!r} (N={want['nodes']}, E={want['links']}) "
                f"does not match network {have['name']!r} (N={have['nodes']}, E={have['links']})")
    t = doc["params"]
    return GcnnParams(t["theta"], t["w_q"], t["w_f"], cfg)

