"""Dense float64 tensors with a per-forward-pass reverse-mode tape.

A ``GradTape`` records every operation whose inputs depend on a watched leaf.
``backward`` walks the recording once in reverse and returns gradients for
the watched leaves only.  Tensors never mutate after construction.

    tape = GradTape()
    x = tape.watch(np.array([3.0, -4.0]))
    loss = 0.5 * (x * x).sum()
    grads = backward(tape, loss)      # {x: array([3., -4.])}
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

ACTIVATIONS = ("relu", "tanh", "identity")


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite value produced by {op}")
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class GradTape:
    """Single-owner recording of one forward pass."""

    def __init__(self) -> None:
        self.nodes: list[Tensor] = []
        self.marked: list[Tensor] = []

    def watch(self, value) -> "Tensor":
        """Wrap ``value`` as a leaf whose gradient ``backward`` will report."""
        data = value.data if isinstance(value, Tensor) else value
        t = Tensor(data)
        t._tape = self
        self.marked.append(t)
        return t

    def record(self, t: "Tensor") -> None:
        self.nodes.append(t)


class Tensor:
    __slots__ = ("data", "_parents", "_backward", "_tape")
    __array_priority__ = 100

    def __init__(self, data, _parents: tuple = (), _backward: Callable | None = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = _check_finite(arr, "tensor construction")
        self._parents = _parents
        self._backward = _backward
        self._tape: GradTape | None = None

    # -- bookkeeping -------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def tracked(self) -> bool:
        return self._tape is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, tracked={self.tracked})"

    def __len__(self) -> int:
        return len(self.data)

    @staticmethod
    def _make(data: np.ndarray, parents: tuple, backward: Callable, op: str) -> "Tensor":
        _check_finite(data, op)
        tape = None
        for p in parents:
            if p._tape is not None:
                if tape is not None and p._tape is not tape:
                    raise ContractError("operands recorded on different tapes")
                tape = p._tape
        out = Tensor.__new__(Tensor)
        out.data = data
        if tape is None:
            out._parents, out._backward, out._tape = (), None, None
            return out
        out._parents = parents
        out._backward = backward
        out._tape = tape
        tape.record(out)
        return out

    # -- elementwise arithmetic ------------------------------------------
    def __add__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return Tensor._make(a.data + b.data, (a, b), bw, "add")

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor._make(-self.data, (self,), lambda g: (-g,), "neg")

    def __sub__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

        return Tensor._make(a.data - b.data, (a, b), bw, "sub")

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other) - self

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

        return Tensor._make(a.data * b.data, (a, b), bw, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            return (_unbroadcast(g / b.data, a.shape),
                    _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

        return Tensor._make(a.data / b.data, (a, b), bw, "div")

    def __rtruediv__(self, other) -> "Tensor":
        return as_tensor(other) / self

    def __pow__(self, p: float) -> "Tensor":
        a = self
        return Tensor._make(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),), "pow")

    def square(self) -> "Tensor":
        a = self
        return Tensor._make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")

    def __matmul__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul shapes {a.shape} and {b.shape}")

        def bw(g):
            return g @ b.data.T, a.data.T @ g

        return Tensor._make(a.data @ b.data, (a, b), bw, "matmul")

    # -- unary functions ---------------------------------------------------
    def relu(self) -> "Tensor":
        a = self
        mask = a.data > 0
        return Tensor._make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")

    def tanh(self) -> "Tensor":
        a = self
        out = np.tanh(a.data)
        return Tensor._make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")

    def exp(self) -> "Tensor":
        a = self
        out = np.exp(a.data)
        return Tensor._make(out, (a,), lambda g: (g * out,), "exp")

    def log(self) -> "Tensor":
        a = self
        if np.any(a.data <= 0):
            raise NumericError("log of non-positive value")
        return Tensor._make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")

    def sqrt(self) -> "Tensor":
        a = self
        out = np.sqrt(a.data)
        return Tensor._make(out, (a,), lambda g: (0.5 * g / out,), "sqrt")

    def abs(self) -> "Tensor":
        a = self
        return Tensor._make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")

    def maximum(self, floor: float) -> "Tensor":
        a = self
        mask = a.data > floor
        return Tensor._make(np.where(mask, a.data, floor), (a,), lambda g: (g * mask,), "maximum")

    # -- reductions and reshaping -----------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).copy(),)

        return Tensor._make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            n = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            n = int(np.prod([self.shape[i] for i in axes]))
        if n == 0:
            raise ContractError("mean over an empty axis")
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape) -> "Tensor":
        a = self
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")

    def __getitem__(self, idx) -> "Tensor":
        a = self

        def bw(g):
            out = np.zeros_like(a.data)
            np.add.at(out, idx, g)
            return (out,)

        return Tensor._make(np.asarray(a.data[idx]), (a,), bw, "getitem")

    def pick(self, labels) -> "Tensor":
        """Row-wise gather ``self[i, labels[i]]`` for a 2-D tensor."""
        labels = np.asarray(labels, dtype=np.int64)
        if self.ndim != 2 or labels.shape != (self.shape[0],):
            raise DimensionError(f"pick needs (B, K) logits and (B,) labels, got {self.shape}, {labels.shape}")
        return self[np.arange(self.shape[0]), labels]


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw, "concat")


def backward(tape: GradTape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to every watched leaf."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is not tape:
        raise ContractError("loss was not recorded on this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if parent._tape is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return {leaf: grads.get(id(leaf), np.zeros_like(leaf.data)) for leaf in tape.marked}


def grad_of(fn: Callable, *args: np.ndarray) -> tuple[Tensor, list[np.ndarray]]:
    """Evaluate ``fn`` on watched copies of ``args``; return (value, grads)."""
    tape = GradTape()
    leaves = [tape.watch(a) for a in args]
    out = fn(*leaves)
    g = backward(tape, out)
    return out, [g[leaf] for leaf in leaves]


# -- numerically stable reductions ------------------------------------------

def logsumexp(v, axis: int = -1) -> Tensor:
    """Max-shifted log-sum-exp along ``axis`` (the axis is removed)."""
    v = as_tensor(v)
    if v.ndim == 0 or v.shape[axis] == 0:
        raise ContractError("logsumexp over an empty axis")
    m = np.max(v.data, axis=axis, keepdims=True)
    shifted = np.exp(v.data - m)
    s = shifted.sum(axis=axis, keepdims=True)
    out = (np.log(s) + m).squeeze(axis)
    soft = shifted / s

    def bw(g):
        return (np.expand_dims(g, axis) * soft,)

    return Tensor._make(out, (v,), bw, "logsumexp")


def log_softmax(v, axis: int = -1) -> Tensor:
    v = as_tensor(v)
    lse = logsumexp(v, axis=axis)
    return v - lse.reshape(lse.shape[:axis % v.ndim] + (1,) + lse.shape[axis % v.ndim:])


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Per-sample cross-entropy, shape (B,)."""
    return -log_softmax(logits, axis=-1).pick(labels)


# -- feed-forward networks ---------------------------------------------------

@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ContractError("layer widths must be positive")


# Flat list [W1, b1, W2, b2, ...] with W_l of shape (in_dim, out_dim).
ParameterSet = list


def _activate(h: Tensor, act: str) -> Tensor:
    if act == "relu":
        return h.relu()
    if act == "tanh":
        return h.tanh()
    return h


def mlp_trace(params: ParameterSet, x, spec: Sequence[LayerSpec]) -> list[Tensor]:
    """Post-activation output of every layer; the last entry is the logits."""
    x = as_tensor(x)
    squeeze = x.ndim == 1
    if squeeze:
        x = x.reshape(1, -1)
    if len(params) != 2 * len(spec):
        raise DimensionError(f"{len(params)} parameter arrays for {len(spec)} layers")
    if x.shape[-1] != spec[0].in_dim:
        raise DimensionError(f"input width {x.shape[-1]} != {spec[0].in_dim}")
    outs = []
    h = x
    for i, layer in enumerate(spec):
        W, b = as_tensor(params[2 * i]), as_tensor(params[2 * i + 1])
        if W.shape != (layer.in_dim, layer.out_dim) or b.shape != (layer.out_dim,):
            raise DimensionError(f"layer {i} parameter shapes {W.shape}, {b.shape} do not match {layer}")
        h = _activate(h @ W + b, layer.activation)
        outs.append(h)
    if squeeze:
        outs = [o.reshape(-1) for o in outs]
    return outs


def forward_mlp(params: ParameterSet, x, spec: Sequence[LayerSpec]) -> Tensor:
    return mlp_trace(params, x, spec)[-1]


def init_params(spec: Sequence[LayerSpec], rng: np.random.Generator, scale: str = "he") -> ParameterSet:
    params = []
    for layer in spec:
        std = np.sqrt(2.0 / layer.in_dim) if scale == "he" else np.sqrt(1.0 / layer.in_dim)
        params.append(rng.normal(0.0, std, size=(layer.in_dim, layer.out_dim)))
        params.append(np.zeros(layer.out_dim))
    return params


def finite_difference(fn: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of one array."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = fn(x)
        flat[i] = old - h
        down = fn(x)
        flat[i] = old
        gf[i] = (up - down) / (2 * h)
    return g


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))
