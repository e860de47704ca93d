"""A small tape-based reverse-mode autodiff engine over numpy arrays.

Only the operations the GCNN needs are provided. Every op checks its output
for NaN/Inf and raises :class:`NumericError` instead of propagating them.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError


class ShapeError(ValueError):
    pass


class TapeStateError(RuntimeError):
    pass


class Tensor:
    """Dense float64 array with an optional gradient accumulator."""

    __slots__ = ("value", "requires_grad", "grad", "name", "_tape")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.array(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.value) if requires_grad else None
        self.name = name
        self._tape = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __mul__(self, other):
        return hadamard(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    @property
    def T(self):
        return transpose(self)


@dataclass
class _Record:
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None


class Tape:
    """Ordered record of differentiable ops. Usable as a context manager.

    Outside any ``with Tape()`` block ops go to a module default tape, which is
    replaced by a fresh one after each :func:`backward`.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self.consumed = False

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def record(self, inputs, output, backward):
        if self.consumed:
            raise TapeStateError("tape already consumed by backward(); start a new forward pass")
        self.records.append(_Record(tuple(inputs), output, backward))
        output._tape = self


_TAPES: list[Tape] = []
_DEFAULT = [Tape()]


def current_tape() -> Tape:
    return _TAPES[-1] if _TAPES else _DEFAULT[0]


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite value produced by {op}")
    return arr


def _emit(op: str, value: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    _check_finite(value, op)
    needs = any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.value = value
    out.requires_grad = needs
    out.grad = None
    out.name = op
    out._tape = None
    if needs:
        current_tape().record(inputs, out, backward)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _swap(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batch broadcasting (both operands >= 2-D)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.value.ndim < 2 or b.value.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    av, bv = a.value, b.value

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            if av.ndim > 2 and bv.ndim == 2:
                ga = g @ bv.T
            else:
                ga = _unbroadcast(np.matmul(g, _swap(bv)), av.shape)
        if b.requires_grad:
            if bv.ndim == 2 and av.ndim > 2:
                # fold the batch into one GEMM: sum_b A_b^T G_b
                k = av.shape[-1]
                gb = av.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(_swap(av), g), bv.shape)
        return ga, gb

    if av.ndim > 2 and bv.ndim == 2:
        value = (av.reshape(-1, av.shape[-1]) @ bv).reshape(*av.shape[:-1], bv.shape[-1])
    else:
        value = np.matmul(av, bv)
    return _emit("matmul", value, (a, b), backward)


def hadamard(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        value = a.value * b.value
    except ValueError:
        raise ShapeError(f"hadamard shape mismatch: {a.shape} * {b.shape}") from None

    def backward(g):
        return (_unbroadcast(g * b.value, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.value, b.shape) if b.requires_grad else None)

    return _emit("hadamard", value, (a, b), backward)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        value = a.value + b.value
    except ValueError:
        raise ShapeError(f"add shape mismatch: {a.shape} + {b.shape}") from None
    return _emit("add", value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        value = a.value - b.value
    except ValueError:
        raise ShapeError(f"sub shape mismatch: {a.shape} - {b.shape}") from None
    return _emit("sub", value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    return _emit("scale", a.value * c, (a,), lambda g: (g * c,))


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = _as_tensor(a)
    if a.value.ndim < 2:
        raise ShapeError(f"transpose needs >= 2 dims, got {a.shape}")
    return _emit("transpose", _swap(a.value), (a,), lambda g: (_swap(g),))


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    try:
        value = a.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}") from None
    return _emit("reshape", value, (a,), lambda g: (g.reshape(a.shape),))


def tanh_elem(a) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.value)
    return _emit("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    return _emit("sum", np.array(a.value.sum()), (a,),
                 lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mse_loss(pred, target) -> Tensor:
    """Mean squared error over all entries.

    For a (samples, links) batch this is the mean over samples of the per-sample
    mean over links, since every sample has the same number of links.
    """
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.value - target.value
    n = diff.size

    def backward(g):
        return (g * 2.0 * diff / n if pred.requires_grad else None,
                -g * 2.0 * diff / n if target.requires_grad else None)

    return _emit("mse_loss", np.array(np.mean(diff * diff)), (pred, target), backward)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it."""
    if loss.value.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None or not loss.requires_grad:
        raise TapeStateError("loss was not produced by a recorded forward pass")
    if tape.consumed:
        raise TapeStateError("backward() called twice for one forward pass")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        in_grads = rec.backward(g)
        for t, gi in zip(rec.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            _check_finite(gi, "backward")
            if t.grad is not None:
                # leaf
                t.grad += gi
            elif id(t) in grads:
                grads[id(t)] = grads[id(t)] + gi
            else:
                grads[id(t)] = gi
    tape.consumed = True
    tape.records.clear()
    if tape is _DEFAULT[0]:
        _DEFAULT[0] = Tape()


def reset_default_tape() -> None:
    """Drop any unconsumed records (e.g. after a forward pass used only for evaluation)."""
    _DEFAULT[0] = Tape()


class no_grad:
    """Context in which ops are not recorded, for evaluation passes."""

    def __enter__(self):
        self._tape = _NullTape()
        _TAPES.append(self._tape)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self._tape)
        return False


class _NullTape(Tape):
    def record(self, inputs, output, backward):
        output.requires_grad = False


@dataclass
class OptimizerState:
    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    decay: float = 0.9
    eps: float = 1e-8
    step: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("adam", "rmsprop"):
            raise ValueError(f"unknown optimizer {self.kind!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "learning_rate": self.learning_rate, "beta1": self.beta1,
                "beta2": self.beta2, "decay": self.decay, "eps": self.eps, "step": self.step,
                "first_moment": {k: _array_to_json(v) for k, v in self.first_moment.items()},
                "second_moment": {k: _array_to_json(v) for k, v in self.second_moment.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> OptimizerState:
        d = dict(d)
        d["first_moment"] = {k: _array_from_json(v) for k, v in d.get("first_moment", {}).items()}
        d["second_moment"] = {k: _array_from_json(v) for k, v in d.get("second_moment", {}).items()}
        return cls(**d)


def optimizer_step(state: OptimizerState, params: dict[str, Tensor]) -> None:
    """Apply one Adam or RMSProp update in place, then zero the gradients."""
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = p.grad
        if state.kind == "adam":
            m = state.first_moment.setdefault(name, np.zeros_like(p.value))
            v = state.second_moment.setdefault(name, np.zeros_like(p.value))
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            v += (1.0 - state.beta2) * g * g
            m_hat = m / (1.0 - state.beta1 ** t)
            v_hat = v / (1.0 - state.beta2 ** t)
            p.value -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
        else:
            s = state.second_moment.setdefault(name, np.zeros_like(p.value))
            s *= state.decay
            s += (1.0 - state.decay) * g * g
            p.value -= state.learning_rate * g / (np.sqrt(s) + state.eps)
        _check_finite(p.value, f"{state.kind} update of {name}")
        p.zero_grad()


def _array_to_json(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "values": a.ravel().tolist()}


def _array_from_json(d: dict) -> np.ndarray:
    return np.array(d["values"], dtype=np.float64).reshape(d["shape"])


def save_checkpoint(path, params: dict[str, Tensor], state: OptimizerState | None = None,
                    seed: int | None = None, iteration: int = 0, extra: dict | None = None) -> None:
    doc = {"params": {k: _array_to_json(p.value) for k, p in params.items()},
           "optimizer": state.to_dict() if state is not None else None,
           "seed": seed, "iteration": iteration, "extra": extra or {}}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> dict:
    """Inverse of :func:`save_checkpoint`; params come back as trainable Tensors."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    doc["params"] = {k: Tensor(_array_from_json(v), requires_grad=True, name=k)
                     for k, v in doc["params"].items()}
    if doc.get("optimizer") is not None:
        doc["optimizer"] = OptimizerState.from_dict(doc["optimizer"])
    return doc
