"""Dense float64 tensor with reverse-mode automatic differentiation.

Every value flowing through the model is a Tensor. Operations record a
node on the implicit tape (parent links plus a backward closure) whenever
gradients are enabled and at least one input requires them. `backward`
replays the tape in reverse topological order and accumulates gradients
into `.grad` of every participating tensor that requires grad.

There is no broadcasting between tensors: shape mismatches raise
ShapeError. The only sanctioned shape change across an operation is the
explicit `expand` op, whose backward sums over the expanded axes.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised on any shape mismatch between operands."""


class GraphError(RuntimeError):
    """Raised when backward is called on a tensor that is not on the tape."""


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim and not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)  # keeps 0-d tensors 0-d
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self._op: str = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}, op={self._op})"

    # Operator sugar; scalars are allowed, tensor-tensor requires equal shapes.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def from_op(
    data: np.ndarray,
    parents: Sequence[Tensor],
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
    op: str,
) -> Tensor:
    """Create the output tensor of an operation, recording it when needed.

    `backward` receives the upstream gradient and returns one gradient
    array (or None) per parent, in order. Exposed so higher modules can
    define composite differentiable operations on the same tape.
    """
    record = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=record)
    if record:
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _check_same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def backward(loss: Tensor):
    """Populate .grad of every requires_grad tensor reachable from `loss`.

    Gradients accumulate: calling backward twice without zeroing doubles
    them. `loss` must be a scalar produced by recorded operations.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss._backward is None:
        raise GraphError("backward on a tensor that is not on the tape")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.grad is None:
            node.grad = g.copy()
        else:
            node.grad = node.grad + g
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            acc = grads.get(id(p))
            grads[id(p)] = pg if acc is None else acc + pg


# ---------------------------------------------------------------------------
# Elementwise and structural operations
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.data.ndim and b.data.ndim:
        _check_same_shape(a, b, "add")
    out = a.data + b.data

    def bwd(g):
        ga = g if a.data.shape == g.shape else g.sum().reshape(a.data.shape)
        gb = g if b.data.shape == g.shape else g.sum().reshape(b.data.shape)
        return ga, gb

    return from_op(out, (a, b), bwd, "add")


def sub(a, b) -> Tensor:
    return add(a, mul(b, -1.0))


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.data.ndim and b.data.ndim:
        _check_same_shape(a, b, "mul")
    out = a.data * b.data

    def bwd(g):
        ga = g * b.data
        gb = g * a.data
        if ga.shape != a.data.shape:
            ga = ga.sum().reshape(a.data.shape)
        if gb.shape != b.data.shape:
            gb = gb.sum().reshape(b.data.shape)
        return ga, gb

    return from_op(out, (a, b), bwd, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return from_op(out, (a, b), bwd, "matmul")


def concat_channels(*tensors: Tensor) -> Tensor:
    """Concatenate along axis 0 (the channel axis); other dims must match."""
    if not tensors:
        raise ShapeError("concat_channels of nothing")
    rest = tensors[0].shape[1:]
    for t in tensors[1:]:
        if t.shape[1:] != rest:
            raise ShapeError(
                f"concat_channels: non-channel dims differ, {tensors[0].shape} vs {t.shape}"
            )
    out = np.concatenate([t.data for t in tensors], axis=0)
    sizes = [t.shape[0] for t in tensors]

    def bwd(g):
        pieces = []
        ofs = 0
        for n in sizes:
            pieces.append(g[ofs : ofs + n])
            ofs += n
        return pieces

    return from_op(out, tensors, bwd, "concat_channels")


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start < stop <= x.shape[0]):
        raise ShapeError(f"slice_channels [{start}:{stop}] out of range for {x.shape}")
    out = x.data[start:stop].copy()

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[start:stop] = g
        return (gx,)

    return from_op(out, (x,), bwd, "slice_channels")


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid_arr(x.data)

    def bwd(g):
        return (g * out * (1.0 - out),)

    return from_op(out, (x,), bwd, "sigmoid")


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)

    def bwd(g):
        return (g * (x.data > 0),)

    return from_op(out, (x,), bwd, "relu")


def _sigmoid_arr(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(x: Tensor) -> Tensor:
    s = _sigmoid_arr(x.data)
    out = x.data * s

    def bwd(g):
        return (g * (s + x.data * s * (1.0 - s)),)

    return from_op(out, (x,), bwd, "silu")


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)

    def bwd(g):
        return (g * 0.5 / np.maximum(out, 1e-300),)

    return from_op(out, (x,), bwd, "sqrt")


def log(x: Tensor) -> Tensor:
    out = np.log(x.data)

    def bwd(g):
        return (g / x.data,)

    return from_op(out, (x,), bwd, "log")


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    out = np.clip(x.data, lo, hi)

    def bwd(g):
        return (g * ((x.data >= lo) & (x.data <= hi)),)

    return from_op(out, (x,), bwd, "clamp")


def _norm_axes(axes, ndim) -> tuple[int, ...]:
    if isinstance(axes, int):
        axes = (axes,)
    axes = tuple(a % ndim for a in axes)
    if len(set(axes)) != len(axes):
        raise ShapeError(f"duplicate reduction axes {axes}")
    return axes


def sum_over(x: Tensor, axes=None) -> Tensor:
    axes = tuple(range(x.data.ndim)) if axes is None else _norm_axes(axes, x.data.ndim)
    out = x.data.sum(axis=axes)

    def bwd(g):
        return (np.broadcast_to(np.expand_dims(g, axes), x.data.shape).copy(),)

    return from_op(out, (x,), bwd, "sum_over")


def mean_over(x: Tensor, axes=None) -> Tensor:
    axes = tuple(range(x.data.ndim)) if axes is None else _norm_axes(axes, x.data.ndim)
    count = int(np.prod([x.data.shape[a] for a in axes])) if axes else 1
    out = x.data.mean(axis=axes)

    def bwd(g):
        return (np.broadcast_to(np.expand_dims(g, axes), x.data.shape).copy() / count,)

    return from_op(out, (x,), bwd, "mean_over")


def max_over(x: Tensor, axes) -> Tensor:
    """Max reduction; backward routes to the first argmax in row-major scan."""
    axes = _norm_axes(axes, x.data.ndim)
    keep = tuple(a for a in range(x.data.ndim) if a not in axes)
    perm = keep + axes
    moved = x.data.transpose(perm)
    lead = moved.shape[: len(keep)]
    flat = moved.reshape(lead + (-1,))
    idx = flat.argmax(axis=-1)  # first occurrence on ties
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def bwd(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, idx[..., None], g[..., None], axis=-1)
        gx = gflat.reshape(moved.shape).transpose(np.argsort(perm))
        return (gx,)

    return from_op(out, (x,), bwd, "max_over")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = axis % x.data.ndim
    if x.data.shape[axis] == 0:
        raise ShapeError("softmax over an empty axis")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return from_op(out, (x,), bwd, "softmax")


def permute_axes(x: Tensor, perm: Sequence[int]) -> Tensor:
    perm = tuple(perm)
    if sorted(perm) != list(range(x.data.ndim)):
        raise ShapeError(f"invalid permutation {perm} for ndim {x.data.ndim}")
    out = np.ascontiguousarray(x.data.transpose(perm))
    inv = tuple(np.argsort(perm))

    def bwd(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return from_op(out, (x,), bwd, "permute_axes")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != x.data.size:
        raise ShapeError(f"reshape {x.shape} -> {shape} changes element count")
    out = x.data.reshape(shape)

    def bwd(g):
        return (g.reshape(x.data.shape),)

    return from_op(out, (x,), bwd, "reshape")


def expand(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit broadcast of size-1 axes; backward sums over them."""
    shape = tuple(shape)
    if len(shape) != x.data.ndim:
        raise ShapeError(f"expand: rank mismatch {x.shape} -> {shape}")
    for got, want in zip(x.data.shape, shape):
        if got != want and got != 1:
            raise ShapeError(f"expand: cannot expand {x.shape} to {shape}")
    out = np.broadcast_to(x.data, shape).copy()
    summed = tuple(i for i, (got, want) in enumerate(zip(x.data.shape, shape)) if got != want)

    def bwd(g):
        return (g.sum(axis=summed, keepdims=True) if summed else g,)

    return from_op(out, (x,), bwd, "expand")


# ---------------------------------------------------------------------------
# Convolution and pooling
# ---------------------------------------------------------------------------

def _conv_out_dim(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def conv3d(
    x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0
) -> Tensor:
    """Direct 3-D cross-correlation plus bias.

    x: [C_in, D, H, W]; weight: [C_out, C_in, k, k, k]; bias: [C_out].
    Internally im2col + BLAS matmul; matches the nested-loop definition
    to float64 rounding.
    """
    if x.data.ndim != 4 or weight.data.ndim != 5:
        raise ShapeError(f"conv3d: expected 4-D input and 5-D weight, got {x.shape}, {weight.shape}")
    c_in, d, h, w = x.shape
    c_out, wc_in, k, k2, k3 = weight.shape
    if not (k == k2 == k3):
        raise ShapeError(f"conv3d: non-cubic kernel {weight.shape}")
    if wc_in != c_in:
        raise ShapeError(f"conv3d: weight expects {wc_in} input channels, input has {c_in}")
    if bias.shape != (c_out,):
        raise ShapeError(f"conv3d: bias shape {bias.shape} != ({c_out},)")
    for n, name in ((d, "D"), (h, "H"), (w, "W")):
        if n + 2 * padding < k:
            raise ShapeError(f"conv3d: axis {name}={n} with padding {padding} smaller than kernel {k}")

    p = padding
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p), (p, p))) if p else x.data
    do = _conv_out_dim(d, k, stride, p)
    ho = _conv_out_dim(h, k, stride, p)
    wo = _conv_out_dim(w, k, stride, p)
    win = sliding_window_view(xp, (k, k, k), axis=(1, 2, 3))[:, ::stride, ::stride, ::stride]
    # [D',H',W', C_in*k^3]
    cols = np.ascontiguousarray(win.transpose(1, 2, 3, 0, 4, 5, 6)).reshape(do * ho * wo, -1)
    wmat = weight.data.reshape(c_out, -1)
    out = (cols @ wmat.T + bias.data).reshape(do, ho, wo, c_out).transpose(3, 0, 1, 2)
    out = np.ascontiguousarray(out)

    def bwd(g):
        # dW is recomputed from the window view rather than the im2col matrix
        # so the tape holds only an input-sized buffer between fwd and bwd.
        gb = g.sum(axis=(1, 2, 3))
        gw = np.empty_like(weight.data)
        gxp = np.zeros((c_in, d + 2 * p, h + 2 * p, w + 2 * p))
        for a in range(k):
            for b in range(k):
                for c in range(k):
                    gw[:, :, a, b, c] = np.tensordot(
                        g, win[:, :, :, :, a, b, c], axes=([1, 2, 3], [1, 2, 3])
                    )
                    # [C_in, D',H',W'] contribution of kernel offset (a,b,c)
                    contrib = np.tensordot(weight.data[:, :, a, b, c], g, axes=(0, 0))
                    gxp[
                        :,
                        a : a + stride * do : stride,
                        b : b + stride * ho : stride,
                        c : c + stride * wo : stride,
                    ] += contrib
        gx = gxp[:, p : p + d, p : p + h, p : p + w] if p else gxp
        return np.ascontiguousarray(gx), gw, gb

    return from_op(out, (x, weight, bias), bwd, "conv3d")


def maxpool3d(x: Tensor, k: int = 2, stride: int = 2) -> Tensor:
    """Max pooling; gradient routes to the first argmax in row-major scan."""
    if x.data.ndim != 4:
        raise ShapeError(f"maxpool3d expects [C,D,H,W], got {x.shape}")
    c, d, h, w = x.shape
    if min(d, h, w) < k:
        raise ShapeError(f"maxpool3d: spatial dims {(d, h, w)} smaller than kernel {k}")
    do = (d - k) // stride + 1
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    win = sliding_window_view(x.data, (k, k, k), axis=(1, 2, 3))[:, ::stride, ::stride, ::stride]
    flat = np.ascontiguousarray(win).reshape(c, do, ho, wo, k * k * k)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def bwd(g):
        ka, kb, kc = np.unravel_index(idx, (k, k, k))
        ci, di, hi, wi = np.indices(idx.shape, sparse=False)
        src_d = di * stride + ka
        src_h = hi * stride + kb
        src_w = wi * stride + kc
        gx = np.zeros_like(x.data)
        np.add.at(gx, (ci, src_d, src_h, src_w), g)
        return (gx,)

    return from_op(out, (x,), bwd, "maxpool3d")
