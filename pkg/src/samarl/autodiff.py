"""Minimal tape-based reverse-mode autodiff over float64 numpy arrays.

A ``Graph`` is an insertion-ordered tape. Ops record onto the currently
active graph (entered via ``with Graph() as g``); outside any graph they
just compute, which doubles as inference mode. ``Graph.backward`` walks
the tape once in reverse and *accumulates* into each participating
tensor's ``grad`` (calling it twice doubles the gradients).
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import erf

_GRAPH_STACK: list["Graph"] = []


def _active_graph() -> Optional["Graph"]:
    return _GRAPH_STACK[-1] if _GRAPH_STACK else None


class Tensor:
    """Shape + float64 data + optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


class _Node:
    __slots__ = ("output", "inputs", "backward_fn")

    def __init__(self, output: Tensor, inputs: Sequence[Tensor],
                 backward_fn: Callable[[np.ndarray, "Graph"], None]):
        self.output = output
        self.inputs = inputs
        self.backward_fn = backward_fn


class Graph:
    """Insertion-ordered op tape; topological order is insertion order."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _GRAPH_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _GRAPH_STACK.pop()
        return False

    def backward(self, loss: Tensor):
        """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor on the tape.

        Leaves never touched by the tape keep whatever grad they had
        (zero-filled by callers that want the zero-gradient contract).
        """
        if loss.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
        # Per-call gradient map so repeated backward() calls accumulate
        # exactly once each into persistent .grad slots.
        local: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

        def accumulate(t: Tensor, g: np.ndarray):
            key = id(t)
            if key in local:
                local[key] = local[key] + g
            else:
                local[key] = np.array(g, dtype=np.float64, copy=True)
            local[key] = local[key].reshape(t.data.shape)

        seen_outputs = {id(loss)}
        for node in reversed(self.nodes):
            g = local.get(id(node.output))
            if g is None:
                continue
            seen_outputs.add(id(node.output))
            node.backward_fn(g, accumulate)
        for node in self.nodes:
            for t in list(node.inputs) + [node.output]:
                g = local.get(id(t))
                if g is None:
                    continue
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
                t.grad = t.grad + g
                local.pop(id(t))
        if id(loss) in local:
            if loss.grad is None:
                loss.grad = np.zeros_like(loss.data)
            loss.grad = loss.grad + local[id(loss)]


class no_tape:
    """Suppress recording inside an active graph (e.g. target-network passes)."""

    def __enter__(self):
        _GRAPH_STACK.append(None)
        return self

    def __exit__(self, *exc):
        _GRAPH_STACK.pop()
        return False


def _record(output: Tensor, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    g = _active_graph()
    if g is not None and any(t.requires_grad for t in inputs):
        output.requires_grad = True
        g.nodes.append(_Node(output, inputs, backward_fn))
    return output


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)

    def backward(g, acc):
        acc(a, _unbroadcast(g, a.data.shape))
        acc(b, _unbroadcast(g, b.data.shape))

    return _record(out, (a, b), backward)


def sub(a, b) -> Tensor:
    return add(a, neg(as_tensor(b)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.data)

    def backward(g, acc):
        acc(a, -g)

    return _record(out, (a,), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)

    def backward(g, acc):
        acc(a, _unbroadcast(g * b.data, a.data.shape))
        acc(b, _unbroadcast(g * a.data, b.data.shape))

    return _record(out, (a, b), backward)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data * c)

    def backward(g, acc):
        acc(a, g * c)

    return _record(out, (a,), backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape))

    def backward(g, acc):
        acc(a, g.reshape(a.data.shape))

    return _record(out, (a,), backward)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    out = Tensor(a.data.transpose(axes))
    inv = tuple(np.argsort(axes))

    def backward(g, acc):
        acc(a, g.transpose(inv))

    return _record(out, (a,), backward)


def concat(tensors, axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g, acc):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            acc(t, piece)

    return _record(out, tuple(tensors), backward)


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.broadcast_to(a.data, shape).copy())

    def backward(g, acc):
        acc(a, _unbroadcast(g, a.data.shape))

    return _record(out, (a,), backward)


def select(a, axis: int, index: int) -> Tensor:
    """Pick one slice along ``axis`` (e.g. the saliency token row)."""
    a = as_tensor(a)
    out = Tensor(np.take(a.data, index, axis=axis))

    def backward(g, acc):
        full = np.zeros_like(a.data)
        sl = [slice(None)] * a.data.ndim
        sl[axis] = index
        full[tuple(sl)] = g
        acc(a, full)

    return _record(out, (a,), backward)


def take_along(a, indices: np.ndarray, axis: int) -> Tensor:
    """Gather (non-differentiable integer indices) along an axis."""
    a = as_tensor(a)
    idx = np.asarray(indices)
    out = Tensor(np.take_along_axis(a.data, idx, axis=axis))

    def backward(g, acc):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx, g, axis=axis)
        acc(a, full)

    return _record(out, (a,), backward)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def backward(g, acc):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        acc(a, np.broadcast_to(gg, a.data.shape))

    return _record(out, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0))
    mask = a.data > 0

    def backward(g, acc):
        acc(a, g * mask)

    return _record(out, (a,), backward)


def gelu(a) -> Tensor:
    """Exact Gaussian-error linear unit (erf form)."""
    a = as_tensor(a)
    x = a.data
    phi = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    out = Tensor(x * phi)

    def backward(g, acc):
        dphi = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
        acc(a, g * (phi + x * dphi))

    return _record(out, (a,), backward)


def cos(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.cos(a.data))

    def backward(g, acc):
        acc(a, -g * np.sin(a.data))

    return _record(out, (a,), backward)


def huber(a, kappa: float = 1.0) -> Tensor:
    """Elementwise Huber penalty of the input (treated as a residual)."""
    a = as_tensor(a)
    u = a.data
    absu = np.abs(u)
    out = Tensor(np.where(absu <= kappa, 0.5 * u * u, kappa * (absu - 0.5 * kappa)))

    def backward(g, acc):
        acc(a, g * np.clip(u, -kappa, kappa))

    return _record(out, (a,), backward)


# ---------------------------------------------------------------------------
# matrix / network ops
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(
            f"matmul inner-dimension mismatch: {a.shape} x {b.shape} "
            f"({a.shape[-1]} != {b.shape[-2]})")
    out = Tensor(a.data @ b.data)

    def backward(g, acc):
        acc(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        acc(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    return _record(out, (a, b), backward)


def softmax_rows(a) -> Tensor:
    """Row-wise (last axis) softmax with max-subtraction for stability."""
    a = as_tensor(a)
    if np.isnan(a.data).any():
        raise ValueError("softmax_rows: NaN in input")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def backward(g, acc):
        acc(a, y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return _record(out, (a,), backward)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Per-row (last axis) normalization followed by affine gain/bias."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    n = x.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise ValueError(f"layer_norm affine shapes {gain.shape}/{bias.shape} "
                         f"do not match feature dim {n}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gain.data + bias.data)

    def backward(g, acc):
        lead = tuple(range(g.ndim - 1))
        acc(gain, (g * xhat).sum(axis=lead))
        acc(bias, g.sum(axis=lead))
        dxhat = g * gain.data
        dx = inv / n * (n * dxhat
                        - dxhat.sum(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        acc(x, dx)

    return _record(out, (x, gain, bias), backward)


def conv2d_patch(x, kernels, bias=None, stride: Optional[int] = None) -> Tensor:
    """Non-overlapping PxP patch projection: (B,)N_C,R,R -> (B,)C,R//P,R//P.

    ``stride`` defaults to the kernel side P. With P=1 this is a per-cell
    linear map from N_C input channels to C output channels.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or kernels.ndim != 4:
        raise ValueError(f"conv2d_patch expects 3/4-D input and 4-D kernels, "
                         f"got {x.shape} and {kernels.shape}")
    B, nc, R, R2 = xd.shape
    C, knc, P, P2 = kernels.shape
    if knc != nc or P != P2:
        raise ValueError(f"conv2d_patch kernel/channel mismatch: input channels "
                         f"{nc}, kernels {kernels.shape}")
    if stride is not None and stride != P:
        raise ValueError("conv2d_patch stride must equal the patch size")
    if P > R or P > R2:
        raise ValueError(f"patch size {P} exceeds window {R}x{R2}")
    ri, rj = R // P, R2 // P
    xw = xd[:, :, :ri * P, :rj * P].reshape(B, nc, ri, P, rj, P)
    od = np.einsum("bnipjq,onpq->boij", xw, kernels.data, optimize=True)
    inputs = [x, kernels]
    if bias is not None:
        bias = as_tensor(bias)
        od = od + bias.data[:, None, None]
        inputs.append(bias)
    out = Tensor(od[0] if squeeze else od)

    def backward(g, acc):
        gb = g[None] if squeeze else g
        acc(kernels, np.einsum("bnipjq,boij->onpq", xw, gb, optimize=True))
        dxw = np.einsum("boij,onpq->bnipjq", gb, kernels.data, optimize=True)
        dx = np.zeros_like(xd)
        dx[:, :, :ri * P, :rj * P] = dxw.reshape(B, nc, ri * P, rj * P)
        acc(x, dx[0] if squeeze else dx)
        if bias is not None:
            acc(bias, gb.sum(axis=(0, 2, 3)))

    return _record(out, tuple(inputs), backward)


def conv2d(x, kernels, bias=None, padding: int = 0) -> Tensor:
    """Plain stride-1 cross-correlation, used by the convolutional baselines."""
    x, kernels = as_tensor(x), as_tensor(kernels)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    C, nc, kh, kw = kernels.shape
    if nc != xd.shape[1]:
        raise ValueError(f"conv2d channel mismatch: input {xd.shape[1]}, kernels {nc}")
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    od = np.einsum("bnijpq,onpq->boij", win, kernels.data, optimize=True)
    inputs = [x, kernels]
    if bias is not None:
        bias = as_tensor(bias)
        od = od + bias.data[:, None, None]
        inputs.append(bias)
    out = Tensor(od[0] if squeeze else od)

    def backward(g, acc):
        gb = g[None] if squeeze else g
        acc(kernels, np.einsum("bnijpq,boij->onpq", win, gb, optimize=True))
        gpad = np.pad(gb, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
        gwin = np.lib.stride_tricks.sliding_window_view(gpad, (kh, kw), axis=(2, 3))
        kflip = kernels.data[:, :, ::-1, ::-1]
        dxp = np.einsum("boijpq,onpq->bnij", gwin, kflip, optimize=True)
        if padding:
            dxp = dxp[:, :, padding:-padding, padding:-padding]
        acc(x, dxp[0] if squeeze else dxp)
        if bias is not None:
            acc(bias, gb.sum(axis=(0, 2, 3)))

    return _record(out, tuple(inputs), backward)


def maxpool2d(x, window: int = 2) -> Tensor:
    """Non-overlapping max pooling; trailing rows/cols beyond a full window drop."""
    x = as_tensor(x)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    B, C, H, W = xd.shape
    h, w = H // window, W // window
    xw = xd[:, :, :h * window, :w * window] \
        .reshape(B, C, h, window, w, window) \
        .transpose(0, 1, 2, 4, 3, 5) \
        .reshape(B, C, h, w, window * window)
    idx = xw.argmax(axis=-1)
    od = np.take_along_axis(xw, idx[..., None], axis=-1)[..., 0]
    out = Tensor(od[0] if squeeze else od)

    def backward(g, acc):
        gb = g[None] if squeeze else g
        flat = np.zeros_like(xw)
        np.put_along_axis(flat, idx[..., None], gb[..., None], axis=-1)
        dx = np.zeros_like(xd)
        dx[:, :, :h * window, :w * window] = flat \
            .reshape(B, C, h, w, window, window) \
            .transpose(0, 1, 2, 4, 3, 5) \
            .reshape(B, C, h * window, w * window)
        acc(x, dx[0] if squeeze else dx)

    return _record(out, (x,), backward)
