"""A small float64 tensor engine with tape-based reverse-mode gradients.

Only the operations the recurrent predictor needs are provided. Image
tensors are channels-last, ``(batch, height, width, channels)``. Every op checks that its
result is finite and, when a :class:`Tape` is active and any operand requires
gradients, appends a node holding the backward rule. Nodes land on the tape
in execution order, which is therefore already topological.

    >>> w = Tensor(np.ones(3), requires_grad=True)
    >>> with Tape():
    ...     loss = sum_all(w * w)
    ...     backward(loss)
    >>> w.grad
    array([2., 2., 2.])

No broadcasting exists beyond tensor-scalar arithmetic.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NotScalar, NumericOverflow, ShapeMismatch

DTYPE = np.float64


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_tape", "_node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=DTYPE)
        if not np.all(np.isfinite(self.data)):
            raise NumericOverflow("tensor initialised with non-finite values")
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._tape = None
        self._node = None

    @classmethod
    def _result(cls, data: np.ndarray, tape: "Tape | None") -> "Tensor":
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = tape is not None
        t.grad = None
        t._tape = tape
        t._node = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def zero_grad(self) -> None:
        if self.requires_grad and self.is_leaf:
            self.grad = np.zeros_like(self.data)

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class _Node:
    out: Tensor
    inputs: tuple
    backward: Callable[[np.ndarray], tuple]


class Tape:
    """Ordered record of the ops executed while the tape is active."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def __len__(self):
        return len(self.nodes)


_TAPES: list[Tape] = []
_NO_GRAD = [0]


@contextmanager
def no_grad():
    _NO_GRAD[0] += 1
    try:
        yield
    finally:
        _NO_GRAD[0] -= 1


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(data: np.ndarray, inputs: Sequence[Tensor], rule: Callable, name: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericOverflow(f"{name} produced non-finite values")
    tape = _TAPES[-1] if (_TAPES and not _NO_GRAD[0]) else None
    if tape is None or not any(t.requires_grad for t in inputs):
        return Tensor._result(data, None)
    out = Tensor._result(data, tape)
    out._node = len(tape.nodes)
    tape.nodes.append(_Node(out, tuple(inputs), rule))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    return np.asarray(g.sum()) if shape == () and g.shape != () else g


def _binary_shapes(a: Tensor, b: Tensor, name: str) -> None:
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise ShapeMismatch(f"{name}: shapes {a.shape} and {b.shape} differ")


# -- elementwise ------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "add")
    return _emit(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "sub")
    return _emit(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "mul")
    ad, bd = a.data, b.data
    return _emit(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)), "mul")


def sigmoid(x: Tensor) -> Tensor:
    # tanh form never overflows
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _emit(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _emit(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _emit(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def mse_loss(pred: Tensor, target) -> Tensor:
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse_loss: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    scale = 2.0 / n

    def rule(g):
        gd = g * scale * diff
        return gd, -gd

    return _emit(np.asarray(np.mean(diff * diff)), (pred, target), rule, "mse_loss")


# -- structural -------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _emit(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
                s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)):
            raise ShapeMismatch(f"concat: incompatible shapes {ref} and {t.shape}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def rule(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _emit(np.concatenate([t.data for t in tensors], axis=axis), tensors, rule, "concat")


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    n = x.shape[axis]
    if not (0 <= start < stop <= n):
        raise ShapeMismatch(f"slice [{start}:{stop}] out of range for axis of size {n}")
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    shape = x.shape

    def rule(g):
        full = np.zeros(shape, dtype=DTYPE)
        full[index] = g
        return (full,)

    return _emit(x.data[index], (x,), rule, "slice")


def split_channels(x: Tensor, parts: int) -> list[Tensor]:
    size, rem = divmod(x.shape[-1], parts)
    if rem:
        raise ShapeMismatch(f"cannot split {x.shape[-1]} channels into {parts}")
    axis = x.data.ndim - 1
    return [slice_axis(x, axis, k * size, (k + 1) * size) for k in range(parts)]


# -- convolution ------------------------------------------------------------------


def _pad_same(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    b, h, w, c = x.shape
    xp = np.zeros((b, h + 2 * ph, w + 2 * pw, c), dtype=DTYPE)
    xp[:, ph:ph + h, pw:pw + w, :] = x
    return xp


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """'Same' patches of (B, H, W, C) as a (B*H*W, kh*kw*C) matrix."""
    b, h, w, c = x.shape
    if kh == 1 and kw == 1:
        return x.reshape(b * h * w, c)
    win = sliding_window_view(_pad_same(x, kh // 2, kw // 2), (kh, kw), axis=(1, 2))
    # (B, H, W, C, kh, kw) -> (B, H, W, kh, kw, C): keeps the copy's inner axis contiguous
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(b * h * w, kh * kw * c)


def _col2im(cols: np.ndarray, shape: tuple, kh: int, kw: int) -> np.ndarray:
    b, h, w, c = shape
    if kh == 1 and kw == 1:
        return cols.reshape(shape)
    ph, pw = kh // 2, kw // 2
    cols = cols.reshape(b, h, w, kh, kw, c)
    out = np.zeros((b, h + 2 * ph, w + 2 * pw, c), dtype=DTYPE)
    for i in range(kh):
        for j in range(kw):
            out[:, i:i + h, j:j + w, :] += cols[:, :, :, i, j, :]
    return out[:, ph:ph + h, pw:pw + w, :]


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-1 cross-correlation with zero 'same' padding, channels last.

    ``x`` is (B, H, W, Cin), ``kernel`` is (kh, kw, Cin, Cout) with odd kh and
    kw, ``bias`` is (Cout,) or None. Output is (B, H, W, Cout).
    """
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeMismatch(f"conv2d expects 4-d input and kernel, got {x.shape}, {kernel.shape}")
    bsz, h, w, cin = x.shape
    kh, kw, kcin, cout = kernel.shape
    if kcin != cin:
        raise ShapeMismatch(f"conv2d: input has {cin} channels, kernel expects {kcin}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeMismatch(f"conv2d kernel must be odd-sized, got {kh}x{kw}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeMismatch(f"conv2d bias must be ({cout},), got {bias.shape}")
    wmat = kernel.data.reshape(-1, cout)
    cols = _im2col(x.data, kh, kw)
    out = cols @ wmat
    if bias is not None:
        out += bias.data
    in_shape = x.shape

    def rule(g):
        g2 = g.reshape(-1, cout)
        gk = (cols.T @ g2).reshape(kernel.shape)
        gx = _col2im(g2 @ wmat.T, in_shape, kh, kw) if x.requires_grad else None
        if bias is None:
            return gx, gk
        return gx, gk, g2.sum(axis=0)

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return _emit(out.reshape(bsz, h, w, cout), inputs, rule, "conv2d")


# -- differentiation --------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad."""
    if loss.data.size != 1 or loss.data.ndim != 0:
        raise NotScalar(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is None:
        return
    nodes = loss._tape.nodes
    pending = {id(loss): np.ones((), dtype=DTYPE)}
    for node in reversed(nodes[: loss._node + 1]):
        g = pending.pop(id(node.out), None)
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not t.requires_grad:
                continue
            if t.is_leaf:
                t.grad += gi
            else:
                key = id(t)
                prev = pending.get(key)
                pending[key] = gi if prev is None else prev + gi


# -- optimiser --------------------------------------------------------------------


@dataclass
class AdamState:
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update, in place on ``params``."""
    if len(params) != len(grads):
        raise ShapeMismatch(f"{len(params)} params but {len(grads)} grads")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
    if len(state.first_moment) != len(params):
        raise ShapeMismatch("optimizer state does not match parameter list")
    for p, g, m in zip(params, grads, state.first_moment):
        if p.shape != np.shape(g) or m.shape != p.shape:
            raise ShapeMismatch(f"param {p.shape} vs grad {np.shape(g)} vs moment {m.shape}")

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
