"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every operation the cascade's networks need lives here: convolution,
pooling, channel concatenation, activations, reductions, and matrix
multiplication, each with an exact backward rule. The graph is built
eagerly during the forward pass (each output tensor remembers its inputs
and a local backward closure) and is discarded after ``backward``.

Precision is a build-level policy: DTYPE defaults to float64 so gradient
checks are meaningful; release builds may flip it to float32.
"""

from __future__ import annotations

import os
from typing import Iterable, Optional, Sequence

import numpy as np

DTYPE = np.float32 if os.environ.get("XDX_DTYPE") == "float32" else np.float64

_grad_enabled = True


class no_grad:
    """Context manager disabling graph construction (inference, data prep)."""

    def __enter__(self):
        global _grad_enabled
        self._saved = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._saved
        return False


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """N-dimensional array node in a reverse-mode differentiation graph.

    Leaf tensors created with ``requires_grad=True`` receive gradient
    accumulators (initialized to exact zero). Interior nodes produced by
    operations carry references to their inputs and a local backward rule;
    ``backward`` on a scalar replays those rules in reverse topological
    order, visiting each node exactly once per call, and accumulates into
    the leaves' ``grad`` fields (repeated calls accumulate).
    """

    __slots__ = ("data", "grad", "requires_grad", "_prev", "_tracked", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = (
            np.zeros_like(self.data) if self.requires_grad else None
        )
        self._prev: tuple = ()
        self._tracked: tuple = ()
        self._backward = None
        self._op = ""

    # -- construction of interior nodes -------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, inputs: Sequence["Tensor"], backward, op: str) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out._op = op
        tracked = _grad_enabled and any(t.requires_grad for t in inputs)
        out.requires_grad = tracked
        if tracked:
            out._prev = tuple(inputs)
            # Graph topology freezes at construction: which inputs receive
            # gradient is decided now, not at backward time.
            out._tracked = tuple(t.requires_grad for t in inputs)
            out._backward = backward
        else:
            out._prev = ()
            out._tracked = ()
            out._backward = None
        return out

    # -- basic properties ----------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad[...] = 0.0

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, requires_grad={self.requires_grad})"

    # -- backward ------------------------------------------------------------

    def backward(self) -> None:
        """Populate ``grad`` on every reachable requires_grad leaf.

        The loss must be scalar. Interior gradients are held in a
        per-call map so repeated backward calls on graphs sharing leaves
        accumulate correctly.
        """
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {tuple(self.shape)}")
        if not self.requires_grad:
            return
        order = _topo_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._prev:
                for inp, gi, keep in zip(node._prev, node._backward(g), node._tracked):
                    if gi is None or not keep:
                        continue
                    held = grads.get(id(inp))
                    grads[id(inp)] = gi if held is None else held + gi
            else:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __neg__(self):
        return mul(self, _lift(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=DTYPE))


def _topo_order(root: Tensor) -> list:
    """Iterative DFS topological order: inputs before outputs."""
    order: list = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._prev:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over broadcast dimensions back to the original shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- elementwise arithmetic ---------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(data, (a, b), backward, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._from_op(data, (a, b), backward, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._from_op(data, (a, b), backward, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    data = a.data / b.data

    def backward(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return Tensor._from_op(data, (a, b), backward, "div")


def power(x: Tensor, exponent: float) -> Tensor:
    """Elementwise x**p for a scalar exponent."""
    data = x.data**exponent

    def backward(g):
        return (g * exponent * x.data ** (exponent - 1.0),)

    return Tensor._from_op(data, (x,), backward, "power")


def exp(x: Tensor) -> Tensor:
    data = np.exp(x.data)

    def backward(g):
        return (g * data,)

    return Tensor._from_op(data, (x,), backward, "exp")


def log(x: Tensor) -> Tensor:
    data = np.log(x.data)

    def backward(g):
        return (g / x.data,)

    return Tensor._from_op(data, (x,), backward, "log")


# -- shape manipulation --------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    data = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.shape),)

    return Tensor._from_op(data, (x,), backward, "reshape")


def pick(x: Tensor, index: int) -> Tensor:
    """Select one element of a 1-D tensor as a scalar (used to isolate a
    single class logit for explanation)."""
    if x.ndim != 1:
        raise ValueError(f"pick expects a 1-D tensor, got shape {tuple(x.shape)}")
    if not 0 <= index < x.shape[0]:
        raise IndexError(f"pick index {index} out of range for length {x.shape[0]}")
    data = x.data[index : index + 1].reshape(())

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[index] = g
        return (gx,)

    return Tensor._from_op(data, (x,), backward, "pick")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the channel axis ([C,H,W] axis 0, [N,C,H,W] axis 1).

    Spatial dimensions (and batch, when present) must match; the backward
    pass splits the incoming gradient at a's channel count. A zero-channel
    operand is allowed and acts as the identity.
    """
    if a.ndim != b.ndim or a.ndim not in (3, 4):
        raise ValueError(
            f"concat_channels expects two 3-D or 4-D tensors of equal rank, "
            f"got {tuple(a.shape)} and {tuple(b.shape)}"
        )
    axis = a.ndim - 3
    if a.shape[-2:] != b.shape[-2:]:
        raise ValueError(
            f"spatial mismatch: {tuple(a.shape[-2:])} vs {tuple(b.shape[-2:])}"
        )
    if a.ndim == 4 and a.shape[0] != b.shape[0]:
        raise ValueError(f"batch mismatch: {a.shape[0]} vs {b.shape[0]}")
    data = np.concatenate([a.data, b.data], axis=axis)
    ca = a.shape[axis]

    def backward(g):
        ga, gb = np.split(g, [ca], axis=axis)
        return ga, gb

    return Tensor._from_op(data, (a, b), backward, "concat")


# -- reductions ------------------------------------------------------------------


def tensor_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor._from_op(np.asarray(data), (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= x.shape[ax]
    s = tensor_sum(x, axis=axis, keepdims=keepdims)
    return mul(s, _lift(1.0 / count))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D tensors, got {tuple(a.shape)} @ {tuple(b.shape)}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions differ: {a.shape[1]} vs {b.shape[0]}")
    data = a.data @ b.data

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor._from_op(data, (a, b), backward, "matmul")


# -- activations -------------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0.0)

    def backward(g):
        return (g * (x.data > 0.0),)

    return Tensor._from_op(data, (x,), backward, "relu")


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x: Tensor) -> Tensor:
    data = _sigmoid_stable(x.data)

    def backward(g):
        return (g * data * (1.0 - data),)

    return Tensor._from_op(data, (x,), backward, "sigmoid")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - dot),)

    return Tensor._from_op(data, (x,), backward, "softmax")


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)) in the overflow-safe form max(x,0) + log1p(exp(-|x|))."""
    data = np.maximum(x.data, 0.0) + np.log1p(np.exp(-np.abs(x.data)))

    def backward(g):
        return (g * _sigmoid_stable(x.data),)

    return Tensor._from_op(data, (x,), backward, "softplus")


def activation(kind: str, x: Tensor) -> Tensor:
    """Dispatch by name: relu, sigmoid, or softmax (softmax over the last axis)."""
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "softmax":
        return softmax(x, axis=-1)
    raise ValueError(f"unknown activation kind {kind!r}")


# -- convolution and pooling ----------------------------------------------------


def _conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """[N,C,H,W] -> [N, C*kh*kw, Ho*Wo] patch matrix (zero padding)."""
    n, c, h, w = x.shape
    ho = _conv_out_size(h, kh, stride, pad)
    wo = _conv_out_size(w, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride]
    return cols.reshape(n, c * kh * kw, ho * wo)


def _col2im(cols: np.ndarray, xshape: tuple, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Scatter-add inverse of _im2col."""
    n, c, h, w = xshape
    ho = _conv_out_size(h, kh, stride, pad)
    wo = _conv_out_size(w, kw, stride, pad)
    cols6 = cols.reshape(n, c, kh, kw, ho, wo)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride] += cols6[:, :, i, j]
    return xp[:, :, pad : pad + h, pad : pad + w] if pad else xp


def conv2d(
    x: Tensor,
    kernels: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    pad: int = 0,
) -> Tensor:
    """2-D cross-correlation (no kernel flip), zero padding.

    ``x`` is [C,H,W] or [N,C,H,W]; ``kernels`` is [C_out, C_in, kh, kw].
    Output spatial size is floor((H + 2*pad - kh)/stride) + 1.
    """
    if kernels.ndim != 4:
        raise ValueError(f"kernels must be 4-D [C_out,C_in,kh,kw], got {tuple(kernels.shape)}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if pad < 0:
        raise ValueError(f"pad must be >= 0, got {pad}")
    single = x.ndim == 3
    if not single and x.ndim != 4:
        raise ValueError(f"input must be 3-D or 4-D, got shape {tuple(x.shape)}")
    xd = x.data[None] if single else x.data
    n, ci, h, w = xd.shape
    co, ck, kh, kw = kernels.shape
    if ck != ci:
        raise ValueError(f"channel mismatch: input has {ci} channels, kernels expect {ck}")
    if kh > h + 2 * pad:
        raise ValueError(f"kernel height {kh} exceeds padded input height {h + 2 * pad}")
    if kw > w + 2 * pad:
        raise ValueError(f"kernel width {kw} exceeds padded input width {w + 2 * pad}")
    if bias is not None and bias.shape != (co,):
        raise ValueError(f"bias shape {tuple(bias.shape)} does not match {co} output channels")

    ho = _conv_out_size(h, kh, stride, pad)
    wo = _conv_out_size(w, kw, stride, pad)
    cols = _im2col(xd, kh, kw, stride, pad)
    wmat = kernels.data.reshape(co, -1)
    out = np.matmul(wmat, cols).reshape(n, co, ho, wo)
    if bias is not None:
        out = out + bias.data.reshape(1, co, 1, 1)
    data = out[0] if single else out

    inputs = (x, kernels) if bias is None else (x, kernels, bias)

    def backward(g):
        g4 = (g[None] if single else g).reshape(n, co, ho * wo)
        gw = np.tensordot(g4, cols, axes=([0, 2], [0, 2])).reshape(kernels.shape)
        gcols = np.matmul(wmat.T, g4)
        gx = _col2im(gcols, xd.shape, kh, kw, stride, pad)
        gx = gx[0] if single else gx
        if bias is None:
            return gx, gw
        return gx, gw, g4.sum(axis=(0, 2))

    return Tensor._from_op(data, inputs, backward, "conv2d")


def pool2d(
    x: Tensor,
    kind: str,
    window: int,
    stride: int,
    pad: int = 0,
) -> Tensor:
    """Average or max pooling over square windows.

    Average pooling always divides by window**2 (zero padding counts).
    Max pooling routes gradient to the first maximum in each window.
    """
    if kind not in ("average", "max"):
        raise ValueError(f"pool kind must be 'average' or 'max', got {kind!r}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if not 0 <= pad < window:
        raise ValueError(f"pad must satisfy 0 <= pad < window, got pad={pad} window={window}")
    single = x.ndim == 3
    if not single and x.ndim != 4:
        raise ValueError(f"input must be 3-D or 4-D, got shape {tuple(x.shape)}")
    xd = x.data[None] if single else x.data
    n, c, h, w = xd.shape
    if window > h + 2 * pad or window > w + 2 * pad:
        raise ValueError(
            f"window {window} exceeds padded spatial size {h + 2 * pad}x{w + 2 * pad}"
        )

    ho = _conv_out_size(h, window, stride, pad)
    wo = _conv_out_size(w, window, stride, pad)
    fill = 0.0 if kind == "average" else -np.inf
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=fill) if pad else xd
    wins = np.empty((n, c, ho, wo, window * window), dtype=xd.dtype)
    idx = 0
    for i in range(window):
        for j in range(window):
            wins[..., idx] = xp[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride]
            idx += 1

    if kind == "average":
        out = wins.sum(axis=-1) / float(window * window)

        def backward(g):
            g4 = g[None] if single else g
            cols = np.repeat(
                (g4 / float(window * window))[..., None], window * window, axis=-1
            )
            gx = _scatter_windows(cols, (n, c, h, w), window, stride, pad)
            return (gx[0] if single else gx,)

    else:
        arg = wins.argmax(axis=-1)
        out = np.take_along_axis(wins, arg[..., None], axis=-1)[..., 0]

        def backward(g):
            g4 = g[None] if single else g
            cols = np.zeros((n, c, ho, wo, window * window), dtype=g4.dtype)
            np.put_along_axis(cols, arg[..., None], g4[..., None], axis=-1)
            gx = _scatter_windows(cols, (n, c, h, w), window, stride, pad)
            return (gx[0] if single else gx,)

    data = out[0] if single else out
    return Tensor._from_op(data, (x,), backward, f"pool_{kind}")


def _scatter_windows(cols: np.ndarray, xshape: tuple, window: int, stride: int, pad: int) -> np.ndarray:
    """Add per-window gradients back onto the (padded, then cropped) input."""
    n, c, h, w = xshape
    ho, wo = cols.shape[2], cols.shape[3]
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    idx = 0
    for i in range(window):
        for j in range(window):
            xp[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride] += cols[..., idx]
            idx += 1
    return xp[:, :, pad : pad + h, pad : pad + w] if pad else xp
