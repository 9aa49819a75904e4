"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape` when at
least one input requires a gradient.  Outside a tape, operations are plain
numpy evaluations, which is what inference and finite-difference checks use.

    >>> w = Tensor([[1.0, 2.0]], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = (w * w).sum()
    >>> backward(tape, loss)[w]
    array([[2., 4.]])
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "as_tensor",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "power",
    "exp",
    "log",
    "sqrt",
    "tanh",
    "sigmoid",
    "relu",
    "leaky_relu",
    "activation",
    "softmax",
    "layer_norm",
    "causal_conv1d",
    "conv2d",
    "concat",
    "stack",
    "reshape",
    "transpose",
    "dropout",
    "mse",
    "check_finite",
    "DimensionError",
    "ContractError",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """A precondition on an operation's arguments was violated."""


class Tensor:
    """An n-dimensional float64 array that may take part in differentiation."""

    __slots__ = ("data", "requires_grad", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.name = name

    # array-like surface
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=4)}{flag})"

    # operators
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return _getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return _sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else np.prod([self.data.shape[a] for a in np.atleast_1d(axis)])
        return _sum(self, axis, keepdims) * (1.0 / float(n))

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of primitive applications.

    Use as a context manager; nested tapes are allowed and only the innermost
    one records.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.roots: dict[int, Tensor] = {}
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()

    def record(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, backward_fn) -> None:
        for t in inputs:
            if t.requires_grad and id(t) not in self._produced:
                self.roots.setdefault(id(t), t)
        self.nodes.append(Node(op, inputs, output, backward_fn))
        self._produced.add(id(output))

    @property
    def leaves(self) -> list[Tensor]:
        return list(self.roots.values())


_local = threading.local()


def _tape_stack() -> list[Tape]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def _active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def _emit(op: str, inputs: tuple[Tensor, ...], value: np.ndarray, backward_fn) -> Tensor:
    tape = _active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=needs)
    if needs:
        tape.record(op, inputs, out, backward_fn)
    return out


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse-accumulate gradients of a scalar ``loss`` recorded on ``tape``.

    Returns a mapping from every leaf that required a gradient to its
    gradient array.  The tape is not modified, so calling this twice gives
    identical results.
    """
    if loss.data.size != 1:
        raise ContractError(f"loss must be a scalar, got shape {loss.shape}")
    if not tape.roots:
        return {}
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    owned: set[int] = set()  # buffers created here, safe to update in place
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        owned.discard(id(node.output))
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward_fn(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            buf = grads.get(key)
            if isinstance(gi, _SliceGrad):
                if buf is None:
                    buf = np.zeros(gi.shape)
                elif key not in owned:
                    buf = buf.copy()
                gi.add_to(buf)
                owned.add(key)
            elif buf is None:
                buf = gi
            elif key in owned:
                buf += gi
            else:
                buf = buf + gi
                owned.add(key)
            grads[key] = buf
    return {
        leaf: grads.get(key, np.zeros_like(leaf.data)).reshape(leaf.shape)
        for key, leaf in tape.roots.items()
    }


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit("add", (a, b), a.data + b.data,
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit("sub", (a, b), a.data - b.data,
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit("mul", (a, b), a.data * b.data,
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def grad(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _emit("div", (a, b), out, grad)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _emit("neg", (a,), -a.data, lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    p = float(exponent)
    return _emit("pow", (a,), a.data ** p, lambda g: (g * p * a.data ** (p - 1.0),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _emit("exp", (a,), out, lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _emit("log", (a,), np.log(a.data), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _emit("sqrt", (a,), out, lambda g: (g * 0.5 / out,))


# activations --------------------------------------------------------------

def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _emit("tanh", (a,), out, lambda g: (g * (1.0 - out * out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _emit("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _emit("relu", (a,), np.where(mask, a.data, 0.0), lambda g: (g * mask,))


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky slope must lie in (0, 1), got {slope}")
    a = as_tensor(a)
    factor = np.where(a.data > 0, 1.0, slope)
    return _emit("leaky_relu", (a,), a.data * factor, lambda g: (g * factor,))


def activation(a, kind: str, slope: float = 0.1) -> Tensor:
    """Apply a named elementwise activation (sigmoid, tanh, relu, leaky_relu)."""
    if kind == "sigmoid":
        return sigmoid(a)
    if kind == "tanh":
        return tanh(a)
    if kind == "relu":
        return relu(a)
    if kind == "leaky_relu":
        return leaky_relu(a, slope)
    raise ValueError(f"unknown activation {kind!r}")


# reductions and shape ops -------------------------------------------------

def _sum(a: Tensor, axis, keepdims: bool) -> Tensor:
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def grad(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _emit("sum", (a,), out, grad)


def _sorted_sum(x: np.ndarray, axis: int, keepdims: bool) -> np.ndarray:
    # numpy's summation order depends on memory layout; reduce a contiguous last axis only
    terms = np.ascontiguousarray(np.moveaxis(np.sort(x, axis=axis), axis, -1))
    out = terms.sum(axis=-1)
    return np.expand_dims(out, axis) if keepdims else out


def order_free_sum(a, axis: int, keepdims: bool = False) -> Tensor:
    """Sum along ``axis`` after sorting the terms, so the result ignores their order bit for bit."""
    a = as_tensor(a)
    shape = a.shape
    out = _sorted_sum(a.data, axis, keepdims)

    def grad(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _emit("order_free_sum", (a,), out, grad)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    return _emit("reshape", (a,), a.data.reshape(shape), lambda g: (g.reshape(src),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    inv = np.argsort(axes)
    return _emit("transpose", (a,), a.data.transpose(axes), lambda g: (g.transpose(inv),))


class _SliceGrad:
    """Gradient that is non-zero only at ``index`` of an array of ``shape``."""

    __slots__ = ("index", "value", "shape", "basic")

    def __init__(self, index, value: np.ndarray, shape: tuple[int, ...], basic: bool):
        self.index, self.value, self.shape, self.basic = index, value, shape, basic

    def add_to(self, buf: np.ndarray) -> None:
        if self.basic:
            buf[self.index] += self.value
        else:
            np.add.at(buf, self.index, self.value)


def _getitem(a: Tensor, index) -> Tensor:
    basic = isinstance(index, (int, slice, type(Ellipsis))) or (
        isinstance(index, tuple) and all(isinstance(i, (int, slice, type(Ellipsis), type(None))) for i in index)
    )
    src = a.shape
    return _emit("getitem", (a,), a.data[index], lambda g: (_SliceGrad(index, g, src, basic),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]
    return _emit("concat", ts, np.concatenate([t.data for t in ts], axis=axis),
                 lambda g: tuple(np.split(g, cuts, axis=axis)))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    out = np.stack([t.data for t in ts], axis=axis)
    return _emit("stack", ts, out,
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(ts))))


# linear algebra -----------------------------------------------------------

def _fold_rows(x: np.ndarray, extra: int) -> np.ndarray:
    """``[*lead, *batch, m, k]`` to ``[*batch, prod(lead) * m, k]``."""
    if extra == 0:
        return x
    lead = int(np.prod(x.shape[:extra]))
    x = x.reshape((lead,) + x.shape[extra:])
    x = np.moveaxis(x, 0, -3)
    return x.reshape(x.shape[:-3] + (lead * x.shape[-2], x.shape[-1]))


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batch broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >= 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    out = a.data @ b.data

    def grad(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            extra = a.ndim - b.ndim
            if extra >= 0 and a.shape[extra:-2] == b.shape[:-2]:
                # fold a's extra leading axes into the row axis instead of summing per-sample products
                a2, g2 = _fold_rows(a.data, extra), _fold_rows(g, extra)
                gb = np.swapaxes(a2, -1, -2) @ g2
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _emit("matmul", (a, b), out, grad)


def softmax(a, axis: int = -1, order_free: bool = False) -> Tensor:
    """Max-shifted softmax; ``order_free`` sums the denominator in sorted order (permutation exact)."""
    a = as_tensor(a)
    if a.shape[axis] == 0:
        raise ValueError("softmax over an empty axis")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    denom = _sorted_sum(e, axis, True) if order_free else e.sum(axis=axis, keepdims=True)
    out = e / denom

    def grad(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _emit("softmax", (a,), out, grad)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale by ``gain`` and shift by ``bias``."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if d < 1:
        raise DimensionError("layer_norm needs a non-empty last axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def grad(g):
        gx_hat = g * gain.data
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)

    return _emit("layer_norm", (x, gain, bias), out, grad)


def causal_conv1d(x, kernel, dilation: int = 1) -> Tensor:
    """Causal dilated 1-D convolution.

    Args:
        x: ``[..., T, C_in]`` sequence.
        kernel: ``[k, C_in, C_out]``; tap ``k - 1`` sees the current step,
            tap ``j`` sees ``(k - 1 - j) * dilation`` steps back.
        dilation: spacing between taps.

    Returns:
        ``[..., T, C_out]``; output ``t`` depends only on inputs ``<= t``.
    """
    if int(dilation) != dilation or dilation < 1:
        raise ValueError(f"dilation must be a positive integer, got {dilation}")
    x, kernel = as_tensor(x), as_tensor(kernel)
    if kernel.ndim != 3:
        raise DimensionError(f"kernel must be [k, C_in, C_out], got {kernel.shape}")
    k, c_in, c_out = kernel.shape
    if x.shape[-1] != c_in:
        raise DimensionError(f"input channels {x.shape[-1]} do not match kernel {kernel.shape}")
    T = x.shape[-2]
    if T < 1:
        raise DimensionError("causal_conv1d needs at least one timestep")
    pad = (k - 1) * dilation
    widths = [(0, 0)] * (x.ndim - 2) + [(pad, 0), (0, 0)]
    xp = np.pad(x.data, widths)
    cols = np.stack([xp[..., j * dilation: j * dilation + T, :] for j in range(k)], axis=-2)
    flat_k = kernel.data.reshape(k * c_in, c_out)
    out = cols.reshape(cols.shape[:-2] + (k * c_in,)) @ flat_k

    def grad(g):
        gcols = (g @ flat_k.T).reshape(cols.shape)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[..., j * dilation: j * dilation + T, :] += gcols[..., j, :]
        gx = gxp[..., pad:, :]
        lhs = cols.reshape(-1, k * c_in)
        gk = (lhs.T @ g.reshape(-1, c_out)).reshape(k, c_in, c_out)
        return gx, gk

    return _emit("causal_conv1d", (x, kernel), out, grad)


def conv2d(x, kernel) -> Tensor:
    """Valid (unpadded) 2-D cross-correlation.

    ``x`` is ``[..., C_in, H, W]`` and ``kernel`` is ``[C_out, C_in, kh, kw]``;
    the result is ``[..., C_out, H - kh + 1, W - kw + 1]``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    c_out, c_in, kh, kw = kernel.shape
    if x.ndim < 3 or x.shape[-3] != c_in:
        raise DimensionError(f"input {x.shape} does not match kernel {kernel.shape}")
    H, W = x.shape[-2:]
    if kh > H or kw > W:
        raise DimensionError(f"kernel {kernel.shape} larger than input {x.shape}")
    Ho, Wo = H - kh + 1, W - kw + 1
    windows = np.lib.stride_tricks.sliding_window_view(x.data, (kh, kw), axis=(-2, -1))
    # windows: [..., C_in, Ho, Wo, kh, kw]
    out = np.einsum("...chwij,ocij->...ohw", windows, kernel.data, optimize=True)

    def grad(g):
        gk = np.einsum("...ohw,...chwij->ocij", g, windows, optimize=True)
        gx = np.zeros_like(x.data)
        for i in range(kh):
            for j in range(kw):
                gx[..., i:i + Ho, j:j + Wo] += np.einsum("...ohw,oc->...chw", g, kernel.data[:, :, i, j])
        return gx, gk

    return _emit("conv2d", (x, kernel), out, grad)


def dropout(x, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or ``p == 0``."""
    x = as_tensor(x)
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return mul(x, keep)


def mse(pred, target) -> Tensor:
    diff = sub(pred, target)
    return (diff * diff).mean()


def check_finite(x, where: str = "tensor") -> None:
    """Raise ``FloatingPointError`` if ``x`` holds NaN or Inf values."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    bad = ~np.isfinite(data)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise FloatingPointError(f"non-finite value in {where} at index {idx}")
