"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every differentiable operation appends a :class:`Node` stamped with a
monotonically increasing sequence number.  Because a node can only consume
tensors that already exist, sequence order is a topological order of the
graph; :func:`backward` simply walks the reachable nodes in decreasing
sequence order, visiting each once.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

_sequence = itertools.count()
_local = threading.local()


def grad_enabled() -> bool:
    return getattr(_local, "enabled", True)


@contextmanager
def no_grad():
    """Run operations without recording graph nodes (evaluation mode)."""
    prev = grad_enabled()
    _local.enabled = False
    try:
        yield
    finally:
        _local.enabled = prev


class Node:
    __slots__ = ("seq", "inputs", "outputs", "backward")

    def __init__(self, inputs, outputs, backward):
        self.seq = next(_sequence)
        self.inputs = inputs
        self.outputs = outputs
        self.backward = backward


class Tensor:
    __slots__ = ("data", "requires_grad", "node", "grad", "name", "__weakref__")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = requires_grad
        self.node: Node | None = None
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)


def _raise_item(t):
    raise ContractError(f"item() needs a single-element tensor, got shape {t.shape}")


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def record(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap ``data`` as the output of a new graph node.

    ``backward(grads_of_outputs) -> grads_of_inputs``; used by fused ops
    defined outside this module too.
    """
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.node = None
    out.requires_grad = False
    if grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(tuple(inputs), (out,), backward)
    return out


def _record_multi(datas: Sequence[np.ndarray], inputs: Sequence[Tensor], backward: Callable):
    outs = []
    for d in datas:
        t = Tensor.__new__(Tensor)
        t.data, t.grad, t.name, t.node, t.requires_grad = d, None, None, None, False
        outs.append(t)
    if grad_enabled() and any(t.requires_grad for t in inputs):
        node = Node(tuple(inputs), tuple(outs), backward)
        for t in outs:
            t.requires_grad = True
            t.node = node
    return tuple(outs)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, opname: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{opname}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape

    def back(gs):
        g = gs[0]
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return record(a.data + b.data, (a, b), back)


def add_n(parts: Sequence[Tensor]) -> Tensor:
    """Sum of same-shaped tensors, accumulated left to right."""
    parts = [as_tensor(p) for p in parts]
    shape = parts[0].shape
    for p in parts[1:]:
        if p.shape != shape:
            raise DimensionError(f"add_n: incompatible shapes {shape} and {p.shape}")
    out = parts[0].data.copy()
    for p in parts[1:]:
        out += p.data

    def back(gs):
        return tuple(gs[0] for _ in parts)

    return record(out, parts, back)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape

    def back(gs):
        g = gs[0]
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return record(a.data - b.data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def back(gs):
        g = gs[0]
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return record(ad * bd, (a, b), back)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return record(-a.data, (a,), lambda gs: (-gs[0],))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp overflow to inf yields the correct limit 0
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)

    def back(gs):
        return (gs[0] * out * (1.0 - out),)

    return record(out, (a,), back)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)

    def back(gs):
        return (gs[0] * (1.0 - out * out),)

    return record(out, (a,), back)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return record(out, (a,), lambda gs: (gs[0] * out,))


def square(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return record(x * x, (a,), lambda gs: (2.0 * x * gs[0],))


def reciprocal(a) -> Tensor:
    a = as_tensor(a)
    out = 1.0 / a.data
    return record(out, (a,), lambda gs: (-gs[0] * out * out,))


def maximum(a, floor: float) -> Tensor:
    """Elementwise max against a constant; gradient passes where ``a > floor``."""
    a = as_tensor(a)
    keep = a.data > floor
    out = np.where(keep, a.data, floor)
    return record(out, (a,), lambda gs: (gs[0] * keep,))


def norm(a, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``; zero vectors get a zero subgradient."""
    a = as_tensor(a)
    x = a.data
    out = np.sqrt((x * x).sum(axis=axis))

    def back(gs):
        g = np.expand_dims(gs[0], axis)
        n = np.expand_dims(out, axis)
        safe = np.where(n > 0, n, 1.0)
        return (np.where(n > 0, g * x / safe, 0.0),)

    return record(out, (a,), back)


def affine_combine(z, a, b) -> Tensor:
    """``z * a + (1 - z) * b`` as one node (gated interpolation)."""
    z, a, b = as_tensor(z), as_tensor(a), as_tensor(b)
    for other in (a, b):
        if other.shape != z.shape:
            _broadcast_shape(z, other, "affine_combine")
    zd, ad, bd = z.data, a.data, b.data
    out = zd * ad + (1.0 - zd) * bd

    def back(gs):
        g = gs[0]
        return (
            _unbroadcast(g * (ad - bd), zd.shape),
            _unbroadcast(g * zd, ad.shape),
            _unbroadcast(g * (1.0 - zd), bd.shape),
        )

    return record(out, (z, a, b), back)


ELEMENTWISE = {
    "sigmoid": sigmoid,
    "tanh": tanh,
    "add": add,
    "sub": sub,
    "mul": mul,
    "affine_combine": affine_combine,
}


def elementwise(op: str, *args) -> Tensor:
    try:
        fn = ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


# ---------------------------------------------------------------------------
# linear algebra and reductions


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise DimensionError(f"matmul: scalar operand, shapes {a.shape} and {b.shape}")
    a_vec, b_vec = a.ndim == 1, b.ndim == 1
    ad = a.data[None, :] if a_vec else a.data
    bd = b.data[:, None] if b_vec else b.data
    if ad.shape[-1] != bd.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(ad, bd)
    except ValueError:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None
    out_shape = out.shape
    if a_vec:
        out = out[..., 0, :]
    if b_vec:
        out = out[..., 0]

    def back(gs):
        g = gs[0].reshape(out_shape)
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape).reshape(a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape).reshape(b.shape)
        return ga, gb

    return record(out, (a, b), back)


def linear(blocks: Sequence, bias=None) -> Tensor:
    """``sum_i x_i @ W_i (+ bias)`` as one node.

    ``blocks`` holds ``(x, W)`` pairs of 2-D tensors; a bare tensor is added
    as is.  Terms accumulate left to right, so appending a block whose
    contribution is exactly zero leaves the result bit-identical.
    """
    pairs = []
    for blk in blocks:
        if isinstance(blk, tuple):
            pairs.append((as_tensor(blk[0]), as_tensor(blk[1])))
        else:
            pairs.append((as_tensor(blk), None))
    if not pairs:
        raise DimensionError("linear: no input blocks")
    out = None
    for x, w in pairs:
        if w is None:
            term = x.data
        elif x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
            raise DimensionError(f"linear: incompatible shapes {x.shape} and {w.shape}")
        else:
            term = x.data @ w.data
        if out is None:
            out = term.copy() if w is None else term
        elif out.shape != term.shape:
            raise DimensionError(f"linear: block outputs differ {out.shape} vs {term.shape}")
        else:
            out += term
    inputs = [t for x, w in pairs for t in ((x,) if w is None else (x, w))]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (out.shape[1],):
            raise DimensionError(f"linear: bias {bias.shape} for output {out.shape}")
        out = out + bias.data
        inputs.append(bias)

    def back(gs):
        g = gs[0]
        grads = []
        for x, w in pairs:
            if w is None:
                grads.append(g)
                continue
            grads.append(g @ w.data.T if x.requires_grad else None)
            grads.append(x.data.T @ g if w.requires_grad else None)
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return record(out, inputs, back)


def gated_update(pre, h_prev) -> Tensor:
    """``z * tanh(o) + (1 - z) * h_prev`` with ``z = sigmoid(pre[:, :n])``, ``o = pre[:, n:]``."""
    pre, h_prev = as_tensor(pre), as_tensor(h_prev)
    n = h_prev.shape[-1]
    if pre.shape[-1] != 2 * n or pre.shape[:-1] != h_prev.shape[:-1]:
        raise DimensionError(f"gated_update: gates {pre.shape} do not match state {h_prev.shape}")
    z = _sigmoid(pre.data[..., :n])
    o = np.tanh(pre.data[..., n:])
    hp = h_prev.data
    out = z * o + (1.0 - z) * hp

    def back(gs):
        g = gs[0]
        dpre = np.concatenate([g * (o - hp) * z * (1.0 - z), g * z * (1.0 - o * o)], axis=-1)
        return dpre, g * (1.0 - z)

    return record(out, (pre, h_prev), back)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

    def back(gs):
        g = gs[0]
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return record(out, (a,), back)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis=axis), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    orig = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {orig} as {tuple(shape)}") from None
    return record(out, (a,), lambda gs: (gs[0].reshape(orig),))


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return record(a.data.transpose(axes), (a,), lambda gs: (gs[0].transpose(inv),))


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat: no parts")
    ndim = parts[0].ndim
    ax = axis % ndim if ndim else 0
    ref = parts[0].shape
    for p in parts[1:]:
        if p.ndim != ndim or any(p.shape[i] != ref[i] for i in range(ndim) if i != ax):
            raise DimensionError(f"concat: extents differ off axis {axis}: {ref} vs {p.shape}")
    if len(parts) == 1:
        return record(parts[0].data.copy(), parts, lambda gs: (gs[0],))
    out = np.concatenate([p.data for p in parts], axis=ax)
    bounds = np.cumsum([p.shape[ax] for p in parts])[:-1]

    def back(gs):
        return tuple(np.split(gs[0], bounds, axis=ax))

    return record(out, parts, back)


def stack(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    shape = parts[0].shape
    for p in parts[1:]:
        if p.shape != shape:
            raise DimensionError(f"stack: shapes differ: {shape} vs {p.shape}")
    out = np.stack([p.data for p in parts], axis=axis)
    n = len(parts)

    def back(gs):
        g = gs[0]
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return record(out, parts, back)


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    out = a.data[idx]
    basic = _is_basic_index(idx)
    if not basic:
        out = out.copy()
    shape = a.shape

    def back(gs):
        full = np.zeros(shape)
        if basic:
            full[idx] = gs[0]
        else:
            np.add.at(full, idx, gs[0])
        return (full,)

    return record(out, (a,), back)


def take(a, indices, axis: int = 0) -> Tensor:
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.intp)
    out = np.take(a.data, indices, axis=axis)
    shape = a.shape

    def back(gs):
        g = gs[0]
        full = np.zeros(shape)
        if indices.ndim == 1 and np.unique(indices).size == indices.size:
            sl = [slice(None)] * len(shape)
            sl[axis] = indices
            full[tuple(sl)] = g
        else:
            moved = np.moveaxis(full, axis, 0)
            np.add.at(moved, indices, np.moveaxis(g, axis, 0) if indices.ndim == 1 else g)
        return (full,)

    return record(out, (a,), back)


def set_row(a, row: int, value) -> Tensor:
    """Copy of 2-D ``a`` whose ``row`` is replaced by ``value``; other rows untouched."""
    a, value = as_tensor(a), as_tensor(value)
    if a.ndim != 2 or value.shape != (a.shape[1],):
        raise DimensionError(f"set_row: cannot place {value.shape} into a row of {a.shape}")
    if not 0 <= row < a.shape[0]:
        raise ContractError(f"set_row: row {row} outside [0, {a.shape[0]})")
    out = a.data.copy()
    out[row] = value.data

    def back(gs):
        g = gs[0]
        ga = g.copy()
        ga[row] = 0.0
        return ga, g[row].copy()

    return record(out, (a, value), back)


def set_rows(a, rows, values) -> Tensor:
    """Copy of 2-D ``a`` with distinct ``rows`` replaced by the rows of ``values``."""
    a, values = as_tensor(a), as_tensor(values)
    rows = np.asarray(rows, dtype=np.intp).reshape(-1)
    if a.ndim != 2 or values.shape != (rows.size, a.shape[1]):
        raise DimensionError(f"set_rows: cannot place {values.shape} into {rows.size} rows of {a.shape}")
    if rows.size and (rows.min() < 0 or rows.max() >= a.shape[0]):
        raise ContractError(f"set_rows: rows outside [0, {a.shape[0]})")
    if np.unique(rows).size != rows.size:
        raise ContractError("set_rows: duplicate rows")
    out = a.data.copy()
    out[rows] = values.data

    def back(gs):
        g = gs[0]
        ga = g.copy()
        ga[rows] = 0.0
        return ga, g[rows]

    return record(out, (a, values), back)


def softmax(a, axis: int = -1, mask=None) -> Tensor:
    """Max-shifted softmax; masked-out entries get probability zero.

    A slice with every entry masked returns all zeros.
    """
    a = as_tensor(a)
    x = a.data
    if np.isnan(x).any():
        raise NumericError("softmax: NaN in input")
    if mask is None:
        shifted = x - x.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
    else:
        mask = np.asarray(mask, dtype=bool)
        filled = np.where(mask, x, -np.inf)
        top = filled.max(axis=axis, keepdims=True)
        top = np.where(np.isfinite(top), top, 0.0)
        e = np.where(mask, np.exp(np.where(mask, x, 0.0) - top), 0.0)
    denom = e.sum(axis=axis, keepdims=True)
    out = e / np.where(denom > 0, denom, 1.0)

    def back(gs):
        g = gs[0]
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return record(out, (a,), back)


def lstm_cell(pre, c_prev):
    """Standard LSTM nonlinearity on gate pre-activations ordered [i, f, g, o].

    Returns ``(h, c)``.  Fused into one node because every recurrent unit in
    the model goes through it.
    """
    pre, c_prev = as_tensor(pre), as_tensor(c_prev)
    n = c_prev.shape[-1]
    if pre.shape[-1] != 4 * n or pre.shape[:-1] != c_prev.shape[:-1]:
        raise DimensionError(f"lstm_cell: gates {pre.shape} do not match cell state {c_prev.shape}")
    p = pre.data
    i = _sigmoid(p[..., :n])
    f = _sigmoid(p[..., n:2 * n])
    g = np.tanh(p[..., 2 * n:3 * n])
    o = _sigmoid(p[..., 3 * n:])
    cp = c_prev.data
    c = f * cp + i * g
    tc = np.tanh(c)
    h = o * tc

    def back(gs):
        gh, gc = gs
        dc = gc + gh * o * (1.0 - tc * tc)
        dpre = np.concatenate(
            [
                dc * g * i * (1.0 - i),
                dc * cp * f * (1.0 - f),
                dc * i * (1.0 - g * g),
                gh * tc * o * (1.0 - o),
            ],
            axis=-1,
        )
        return dpre, dc * f

    return _record_multi((h, c), (pre, c_prev), back)


# ---------------------------------------------------------------------------
# reverse pass


def backward(loss: Tensor, accumulate: bool = True) -> dict:
    """Propagate d(loss)/d(.) to every leaf reachable from ``loss``.

    Returns ``{leaf_tensor: gradient}``.  With ``accumulate`` the gradients are
    also added into each leaf's ``.grad``.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    if loss.node is None:
        if loss.requires_grad:
            leaves[id(loss)] = loss
    else:
        seen: dict[int, Node] = {}
        todo = [loss.node]
        while todo:
            node = todo.pop()
            if node.seq in seen:
                continue
            seen[node.seq] = node
            for t in node.inputs:
                if t.node is not None:
                    if t.node.seq not in seen:
                        todo.append(t.node)
                elif t.requires_grad:
                    leaves[id(t)] = t
        for seq in sorted(seen, reverse=True):
            node = seen[seq]
            outs = [grads.pop(id(o), None) for o in node.outputs]
            if all(g is None for g in outs):
                continue
            outs = [np.zeros_like(o.data) if g is None else g for o, g in zip(node.outputs, outs)]
            for t, g in zip(node.inputs, node.backward(outs)):
                if g is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
    result = {}
    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is None:
            g = np.zeros_like(leaf.data)
        result[leaf] = g
        if accumulate:
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
    return result


def gradient_map(loss: Tensor, params: Iterable[Tensor]) -> list:
    """Gradients for ``params`` in order; unreachable parameters get zeros."""
    got = backward(loss, accumulate=False)
    return [got.get(p, np.zeros_like(p.data)) for p in params]


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, scale: float = 1.0) -> None:
        """Apply one update using ``scale * p.grad`` (parameters without grad count as zero)."""
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = np.zeros_like(p.data) if p.grad is None else p.grad * scale
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict:
        return {"t": self.t, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}


def numerical_gradient(f: Callable[[], float], t: Tensor, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f()`` with respect to ``t.data``."""
    flat = t.data.reshape(-1)
    out = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        out[i] = (up - down) / (2.0 * step)
    return out.reshape(t.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))
