"""Dense float64 tensors with a reverse-mode computation tape.

A :class:`Tape` records every primitive applied to its tensors in
execution order; :meth:`Tape.backward` walks the record once in reverse
and returns a gradient for every node that contributed to the seed.

The primitive set is closed.  Everything trainable in the package is
composed from the functions defined here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

_GELU_C = math.sqrt(2.0 / math.pi)
LAYER_NORM_EPS = 1e-5

PRIMITIVES = (
    "matmul",
    "add",
    "multiply",
    "scale",
    "sum",
    "mean",
    "relu",
    "gelu",
    "softmax",
    "layer_norm",
    "concat",
    "slice",
    "embedding",
    "dropout",
    "softplus",
)


class ShapeError(ValueError):
    pass


@dataclass
class Entry:
    op: str
    inputs: tuple
    output: int
    backward: Callable[[np.ndarray], tuple]


@dataclass
class Tape:
    """Single-writer record of primitive applications.

    With ``record=False`` the tape only hands out node ids and keeps no
    backward closures, which is what inference wants.
    """

    record: bool = True
    entries: list = field(default_factory=list)
    leaves: dict = field(default_factory=dict)
    names: dict = field(default_factory=dict)
    _next_id: int = 0

    def _new_id(self) -> int:
        nid = self._next_id
        self._next_id += 1
        return nid

    def leaf(self, value, name: str | None = None) -> "Tensor":
        t = Tensor(value, tape=self)
        t.node = self._new_id()
        self.leaves[t.node] = t
        if name is not None:
            self.names[t.node] = name
        return t

    def constant(self, value) -> "Tensor":
        return Tensor(value)

    def _push(self, op, inputs, out_value, backward) -> "Tensor":
        out = Tensor(out_value, tape=self)
        out.node = self._new_id()
        if self.record:
            ids = tuple(t.node for t in inputs)
            self.entries.append(Entry(op, ids, out.node, backward))
        return out

    def backward(self, seed: "Tensor") -> dict:
        """Gradients of the scalar ``seed`` w.r.t. every node of the tape.

        Returns a map node-id -> ndarray.  Leaves that do not influence the
        seed receive zeros.
        """
        if seed.tape is not self:
            raise ValueError("seed tensor does not belong to this tape")
        if seed.data.size != 1:
            raise ShapeError(f"backward seed must be scalar, got shape {seed.shape}")
        if not self.record:
            raise RuntimeError("tape was created with record=False")
        grads = {seed.node: np.ones_like(seed.data)}
        for entry in reversed(self.entries):
            g = grads.get(entry.output)
            if g is None:
                continue
            if entry.output not in self.leaves:
                del grads[entry.output]
            in_grads = entry.backward(g)
            for nid, ig in zip(entry.inputs, in_grads):
                if nid is None or ig is None:
                    continue
                if nid in grads:
                    grads[nid] = grads[nid] + ig
                else:
                    grads[nid] = ig
        for nid, leaf in self.leaves.items():
            if nid not in grads:
                grads[nid] = np.zeros_like(leaf.data)
        return grads

    def named_gradients(self, grads: dict) -> dict:
        return {name: grads[nid] for nid, name in self.names.items()}


class Tensor:
    """An ndarray optionally attached to a tape.

    Tensors without a tape (``node is None``) are constants: they take
    part in arithmetic but never receive gradients.
    """

    __slots__ = ("data", "tape", "node")
    __array_priority__ = 100

    def __init__(self, value, tape: Tape | None = None):
        self.data = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.node = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, node={self.node})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other), scale(self, -1.0))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return multiply(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(op: str, *tensors: Tensor) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is not None and t.node is not None:
            if tape is None:
                tape = t.tape
            elif t.tape is not tape:
                raise ValueError(f"{op}: operands belong to different tapes")
    return tape


def _emit(op, inputs, value, backward) -> Tensor:
    tape = _tape_of(op, *inputs)
    if tape is None:
        return Tensor(value)
    return tape._push(op, inputs, value, backward)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    if lead > 0:
        grad = grad.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op: str, a: tuple, b: tuple) -> tuple:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a} and {b}") from None


# -- primitives --------------------------------------------------------------


def matmul(a: Tensor, b: Tensor, transpose_b: bool = False) -> Tensor:
    """Batched matrix product over the last two axes.

    ``transpose_b`` swaps the last two axes of ``b`` first; it is how
    attention scores are formed without a separate transpose primitive.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul: operands need >= 2 dims, got {a.shape} and {b.shape}")
    bd = np.swapaxes(b.data, -1, -2) if transpose_b else b.data
    if a.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, shapes {a.shape} and {b.shape}")
    _broadcast_shape("matmul", a.shape[:-2], bd.shape[:-2])
    ad, bs = a.data, b.shape
    flat = bd.ndim == 2 and ad.ndim > 2
    if flat:
        # (..., k) @ (k, n) as one 2-d product
        out = (ad.reshape(-1, ad.shape[-1]) @ bd).reshape(ad.shape[:-1] + (bd.shape[-1],))
    else:
        out = np.matmul(ad, bd)

    def backward(g):
        if flat:
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ bd.T).reshape(ad.shape)
            gb = ad.reshape(-1, ad.shape[-1]).T @ g2
            return ga, (gb.T if transpose_b else gb)
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        if transpose_b:
            gb = np.swapaxes(gb, -1, -2)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bs)

    return _emit("matmul", (a, b), out, backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("add", a.shape, b.shape)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _emit("add", (a, b), a.data + b.data, backward)


def multiply(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("multiply", a.shape, b.shape)
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _emit("multiply", (a, b), ad * bd, backward)


def scale(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)
    return _emit("scale", (a,), a.data * c, lambda g: (g * c,))


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit("sum", (a,), out, backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    out = np.mean(a.data, axis=axis, keepdims=keepdims)
    count = a.data.size / max(out.size, 1)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).copy(),)

    return _emit("mean", (a,), out, backward)


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    pos = a.data > 0
    return _emit("relu", (a,), np.where(pos, a.data, 0.0), lambda g: (g * pos,))


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    a = _as_tensor(a)
    x = a.data
    x2 = x * x
    th = np.tanh(_GELU_C * (x + 0.044715 * x2 * x))
    out = 0.5 * x * (1.0 + th)

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th**2) * d_inner),)

    return _emit("gelu", (a,), out, backward)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - np.sum(g * s, axis=-1, keepdims=True)),)

    return _emit("softmax", (a,), s, backward)


def layer_norm(a: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """(x - mean) / sqrt(var + eps) over the last axis, population variance."""
    a = _as_tensor(a)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt(np.mean(xc * xc, axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _emit("layer_norm", (a,), xhat, backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            t.shape[i] != ref[i] for i in range(len(ref)) if i != ax
        ):
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape} on axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _emit("concat", tuple(tensors), np.concatenate([t.data for t in tensors], axis=ax), backward)


def slice_(a: Tensor, index) -> Tensor:
    """Basic (non-fancy) indexing."""
    a = _as_tensor(a)
    shape = a.shape
    try:
        out = a.data[index]
    except IndexError as exc:
        raise ShapeError(f"slice: index {index!r} invalid for shape {shape}") from exc
    if not np.shares_memory(out, a.data) and out.size > 0:
        raise ShapeError("slice: only basic slicing is supported")

    def backward(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return _emit("slice", (a,), out.copy(), backward)


def embedding(table: Tensor, index) -> Tensor:
    """Row lookup ``table[index]`` for an integer index array."""
    table = _as_tensor(table)
    idx = np.asarray(index)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ShapeError(f"embedding: index must be integer, got {idx.dtype}")
    if table.data.ndim != 2:
        raise ShapeError(f"embedding: table must be 2-d, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(f"embedding: index out of range for table {table.shape}")
    shape = table.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, idx.reshape(-1), g.reshape(-1, shape[1]))
        return (full,)

    return _emit("embedding", (table,), table.data[idx], backward)


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; the sampled mask is saved for the backward pass."""
    a = _as_tensor(a)
    if rate <= 0.0:
        return a
    keep = 1.0 - rate
    mask = (rng.random(a.shape) < keep) / keep
    return _emit("dropout", (a,), a.data * mask, lambda g: (g * mask,))


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), computed without overflow."""
    a = _as_tensor(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def backward(g):
        return (g * _sigmoid(x),)

    return _emit("softplus", (a,), out, backward)


def _sigmoid(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


sigmoid = _sigmoid


def finite_difference_gradient(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central differences (f(x + h e_i) - f(x - h e_i)) / 2h, componentwise."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    """max |a - n| / max(|a|, |n|, floor), elementwise, then max."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
