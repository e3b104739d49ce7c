"""Dense tensors with reverse-mode automatic differentiation on a recorded tape.

Every differentiable operation used by the network is defined here as a
primitive with an explicit backward rule. An operation records a node onto the
active tape whenever at least one operand requires gradients; ``backward``
replays the tape in reverse recording order, which is a valid topological
order by construction, so every node is visited exactly once.

Conventions:
  * float64 storage throughout; tensors have 1 to 4 dimensions and scalars are
    represented as shape ``(1,)``.
  * elementwise binaries broadcast by the trailing-dimension rule; the gradient
    of a broadcast operand is the full gradient summed over the broadcast axes.
  * gradients accumulate additively into ``Tensor.grad`` and must be zeroed
    explicitly between optimization steps; calling backward twice doubles them.
  * ``reshape`` copies its input, so no view aliasing exists across the tape.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ShapeError

__all__ = [
    "Tensor",
    "Parameter",
    "Tape",
    "no_grad",
    "Rng",
    "tensor",
    "backward",
    "grad_check",
    "GradCheckReport",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "pow_",
    "sqrt",
    "exp",
    "log",
    "abs_",
    "clip",
    "tanh",
    "sigmoid",
    "relu",
    "softplus",
    "softmax",
    "matmul",
    "tsum",
    "tmean",
    "tmax",
    "reshape",
    "transpose",
    "concat",
    "slice_axis",
    "conv2d",
    "max_pool2d",
    "avg_pool2d",
    "reset_default_tape",
]

MAX_NDIM = 4


# ---------------------------------------------------------------------------
# tape machinery


class Tape:
    """Ordered record of operations; also a context manager scoping recording.

    Entering a tape makes it the active recording target; leaving restores the
    previous one. A module-level default tape is always active at the bottom of
    the stack so casual use works without ceremony, but anything that builds
    large graphs repeatedly (training steps, gradient checks) should run under
    its own tape so the recorded arrays can be reclaimed when it is dropped.
    """

    def __init__(self) -> None:
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> bool:
        _TAPE_STACK.pop()
        return False

    def __len__(self) -> int:
        return len(self.nodes)


class no_grad:
    """Context manager that disables recording entirely within its scope."""

    def __enter__(self) -> None:
        _TAPE_STACK.append(None)

    def __exit__(self, *exc) -> bool:
        _TAPE_STACK.pop()
        return False


_TAPE_STACK: list[Optional[Tape]] = [Tape()]


def _active_tape() -> Optional[Tape]:
    return _TAPE_STACK[-1]


def reset_default_tape() -> None:
    """Drop every node recorded on the module-level default tape."""
    _TAPE_STACK[0] = Tape()


class _Node:
    __slots__ = ("inputs", "out", "backward_fn")

    def __init__(self, inputs, out, backward_fn):
        self.inputs = inputs
        self.out = out
        self.backward_fn = backward_fn


# ---------------------------------------------------------------------------
# tensors


class Tensor:
    """A dense float64 array plus an additive gradient buffer."""

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.ndim > MAX_NDIM:
            raise ShapeError(f"tensors support at most {MAX_NDIM} dims, got {arr.ndim}")
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.tape: Optional[Tape] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self.tape if self.tape is not None else Tape(), self)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    # operator sugar; every method delegates to a module-level primitive
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow_(self, p)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


class Parameter(Tensor):
    """A trainable tensor; modules collect these for optimization."""

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(inputs: Sequence[Tensor], out_data: np.ndarray, backward_fn) -> Tensor:
    """Wrap ``out_data`` in a Tensor, recording a tape node when required."""
    tape = _active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        tape.nodes.append(_Node(tuple(inputs), out, backward_fn))
        out.tape = tape
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate dLoss/dT into ``t.grad`` for every requires_grad tensor
    reachable from ``loss`` through the given tape.

    The tape is replayed in reverse recording order. Because recording order is
    topological, every consumer of a tensor runs before its producer, so each
    node sees its output's fully accumulated upstream gradient exactly once.
    Tensors not reachable from the loss are untouched.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not require grad; nothing was recorded for it")
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        upstream = pending.get(id(node.out))
        if upstream is None:
            continue
        grads = node.backward_fn(upstream)
        for t, g in zip(node.inputs, grads):
            if g is None or not t.requires_grad:
                continue
            key = id(t)
            if key in pending:
                pending[key] = pending[key] + g
            else:
                pending[key] = g
                holders[key] = t
    for key, t in holders.items():
        g = pending[key]
        t.grad = g.copy() if t.grad is None else t.grad + g


# ---------------------------------------------------------------------------
# broadcasting helpers


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape`` by summing the axes the
    forward broadcast expanded."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(a: np.ndarray, b: np.ndarray) -> None:
    for da, db in zip(a.shape[::-1], b.shape[::-1]):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"shapes {a.shape} and {b.shape} are not broadcastable")


# ---------------------------------------------------------------------------
# elementwise binaries


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.data, b.data)
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record((a, b), out, bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.data, b.data)
    out = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record((a, b), out, bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.data, b.data)
    out = a.data * b.data
    ad, bd = a.data, b.data

    def bwd(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return _record((a, b), out, bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.data, b.data)
    out = a.data / b.data
    ad, bd = a.data, b.data

    def bwd(g):
        return _unbroadcast(g / bd, a.shape), _unbroadcast(-g * ad / (bd * bd), b.shape)

    return _record((a, b), out, bwd)


# ---------------------------------------------------------------------------
# elementwise unaries


def neg(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    return _record((a,), -a.data, lambda g: (-g,))


def pow_(a: Tensor, p: float) -> Tensor:
    """Elementwise power with a constant real exponent."""
    a = _as_tensor(a)
    p = float(p)
    out = a.data**p
    ad = a.data

    def bwd(g):
        return (g * p * ad ** (p - 1.0),)

    return _record((a,), out, bwd)


def sqrt(a: Tensor) -> Tensor:
    return pow_(a, 0.5)


def exp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _record((a,), out, lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = np.log(a.data)
    ad = a.data
    return _record((a,), out, lambda g: (g / ad,))


def abs_(a: Tensor) -> Tensor:
    """Elementwise absolute value; the subgradient at 0 is 0."""
    a = _as_tensor(a)
    out = np.abs(a.data)
    s = np.sign(a.data)
    return _record((a,), out, lambda g: (g * s,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp into [lo, hi]; gradient passes through inside the interval
    (boundary inclusive) and is zero where the input was clipped."""
    a = _as_tensor(a)
    out = np.clip(a.data, lo, hi)
    mask = ((a.data >= lo) & (a.data <= hi)).astype(np.float64)
    return _record((a,), out, lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)
    return _record((a,), out, lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    # evaluate on the stable side of 0 to avoid overflow in exp
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _record((a,), out, lambda g: (g * out * (1.0 - out),))


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = np.maximum(a.data, 0.0)
    mask = (a.data > 0).astype(np.float64)
    return _record((a,), out, lambda g: (g * mask,))


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), linearized above 30 where the identity is exact to
    double precision."""
    a = _as_tensor(a)
    x = a.data
    out = np.where(x > 30.0, x, np.log1p(np.exp(np.minimum(x, 30.0))))
    sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _record((a,), out, lambda g: (g * sig,))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Shift-stabilized softmax along ``axis``; rows sum to 1."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _record((a,), out, bwd)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product ``(m,k)x(k,n)``; batched when both operands carry equal
    leading dimensions."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-dim operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} vs {b.shape}")
    if a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul leading dims differ: {a.shape} vs {b.shape}")
    out = a.data @ b.data
    ad, bd = a.data, b.data

    def bwd(g):
        return g @ bd.swapaxes(-1, -2), ad.swapaxes(-1, -2) @ g

    return _record((a, b), out, bwd)


# ---------------------------------------------------------------------------
# reductions


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Sum over ``axis``; a full reduction (axis=None) yields shape (1,)."""
    a = _as_tensor(a)
    if axis is None:
        out = a.data.sum().reshape(1)
        shape = a.shape

        def bwd(g):
            return (np.broadcast_to(g.reshape(()), shape).copy(),)

        return _record((a,), out, bwd)

    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)
    if out.ndim == 0:
        out = out.reshape(1)
    shape = a.shape
    kept = tuple(1 if i in axes else n for i, n in enumerate(shape))

    def bwd(g):
        return (np.broadcast_to(g.reshape(kept), shape).copy(),)

    return _record((a,), out, bwd)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = _norm_axes(axis, a.ndim)
        n = 1
        for i in axes:
            n *= a.shape[i]
    return mul(tsum(a, axis=axis, keepdims=keepdims), Tensor(np.float64(1.0 / n)))


def tmax(a: Tensor, axis, keepdims: bool = False) -> Tensor:
    """Max over ``axis``; the gradient routes to the first argmax of each
    reduced slice so ties never double-count."""
    a = _as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    kept_axes = tuple(i for i in range(a.ndim) if i not in axes)
    perm = kept_axes + axes
    moved = a.data.transpose(perm)
    kept_shape = moved.shape[: len(kept_axes)]
    flat = moved.reshape(kept_shape + (-1,))
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    if keepdims:
        out_arr = out.reshape(tuple(1 if i in axes else n for i, n in enumerate(a.shape)))
    else:
        out_arr = out if out.ndim > 0 else out.reshape(1)
    inv_perm = np.argsort(perm)
    moved_shape = moved.shape

    def bwd(g):
        gk = g.reshape(kept_shape)
        scat = np.zeros_like(flat)
        np.put_along_axis(scat, idx[..., None], gk[..., None], axis=-1)
        return (scat.reshape(moved_shape).transpose(inv_perm),)

    return _record((a,), out_arr, bwd)


# ---------------------------------------------------------------------------
# shape ops


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}")
    if len(shape) == 0 or len(shape) > MAX_NDIM:
        raise ShapeError(f"reshape target must have 1 to {MAX_NDIM} dims, got {shape}")
    out = a.data.reshape(shape).copy()
    src = a.shape
    return _record((a,), out, lambda g: (g.reshape(src).copy(),))


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(int(x) for x in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"invalid axes {axes} for ndim {a.ndim}")
    out = np.ascontiguousarray(a.data.transpose(axes))
    inv = tuple(np.argsort(axes))
    return _record((a,), out, lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def concat(parts: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat of an empty sequence")
    ndim = parts[0].ndim
    axis = axis % ndim
    for p in parts[1:]:
        if p.ndim != ndim:
            raise ShapeError("concat operands must share ndim")
        for i in range(ndim):
            if i != axis and p.shape[i] != parts[0].shape[i]:
                raise ShapeError(f"concat shapes differ off-axis: {p.shape} vs {parts[0].shape}")
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        slicer = [slice(None)] * ndim
        grads = []
        for i in range(len(sizes)):
            slicer[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
            grads.append(np.ascontiguousarray(g[tuple(slicer)]))
        return tuple(grads)

    return _record(tuple(parts), out, bwd)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice along one axis; the backward scatters into zeros."""
    a = _as_tensor(a)
    axis = axis % a.ndim
    if not (0 <= start < stop <= a.shape[axis]):
        raise ShapeError(f"slice [{start}:{stop}] out of range for axis {axis} of {a.shape}")
    slicer = [slice(None)] * a.ndim
    slicer[axis] = slice(start, stop)
    out = np.ascontiguousarray(a.data[tuple(slicer)])
    shape = a.shape

    def bwd(g):
        full = np.zeros(shape, dtype=np.float64)
        full[tuple(slicer)] = g
        return (full,)

    return _record((a,), out, bwd)


# ---------------------------------------------------------------------------
# convolution and pooling


def _corr2d(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Stride-1 'same'-padded cross-correlation of (b,ci,h,wd) with (co,ci,k,k)."""
    co, ci, k, _ = w.shape
    if k == 1:
        out = np.tensordot(w[:, :, 0, 0], x, axes=([1], [1]))
        return np.ascontiguousarray(out.transpose(1, 0, 2, 3))
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    b, _, ho, wo = x.shape[0], ci, x.shape[2], x.shape[3]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b * ho * wo, ci * k * k)
    out = cols @ w.reshape(co, ci * k * k).T
    return np.ascontiguousarray(out.reshape(b, ho, wo, co).transpose(0, 3, 1, 2))


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """2-d convolution (cross-correlation), stride 1, odd kernel, 'same'
    padding, so spatial dims are preserved."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d needs (b,ci,h,w) and (co,ci,k,k), got {x.shape} and {weight.shape}")
    co, ci, k, k2 = weight.shape
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"conv2d kernel must be square with odd side, got {k}x{k2}")
    if x.shape[1] != ci:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape[1]} vs weight {ci}")
    out = _corr2d(x.data, weight.data)
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (co,):
            raise ShapeError(f"conv2d bias must be ({co},), got {bias.shape}")
        out = out + bias.data[None, :, None, None]
    xd, wd = x.data, weight.data

    def bwd(g):
        w_rot = np.ascontiguousarray(wd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        dx = _corr2d(g, w_rot)
        if k == 1:
            dw = np.tensordot(g, xd, axes=([0, 2, 3], [0, 2, 3]))[:, :, None, None]
        else:
            p = k // 2
            xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p)))
            win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
            b, _, ho, wo = xd.shape
            cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b * ho * wo, ci * k * k)
            up = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(b * ho * wo, co)
            dw = (up.T @ cols).reshape(co, ci, k, k)
        db = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return (dx, np.ascontiguousarray(dw), db)

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    if bias is None:
        return _record(inputs, out, lambda g: bwd(g)[:2])
    return _record(inputs, out, bwd)


def _pool_prepare(x: Tensor, window, stride):
    if x.ndim != 4:
        raise ShapeError(f"pooling needs (b,c,h,w), got {x.shape}")
    wh, ww = (window, window) if isinstance(window, int) else tuple(window)
    if stride is None:
        sh, sw = wh, ww
    else:
        sh, sw = (stride, stride) if isinstance(stride, int) else tuple(stride)
    b, c, h, w = x.shape
    if wh > h or ww > w:
        raise ShapeError(f"pool window ({wh},{ww}) exceeds input ({h},{w})")
    ho = (h - wh) // sh + 1
    wo = (w - ww) // sw + 1
    return wh, ww, sh, sw, ho, wo


def max_pool2d(x: Tensor, window, stride=None) -> Tensor:
    """Windowed max pooling; gradient routes to each window's first argmax."""
    x = _as_tensor(x)
    wh, ww, sh, sw, ho, wo = _pool_prepare(x, window, stride)
    b, c, h, w = x.shape
    win = np.lib.stride_tricks.sliding_window_view(x.data, (wh, ww), axis=(2, 3))[:, :, ::sh, ::sw]
    flat = win.reshape(b, c, ho, wo, wh * ww)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    shape = x.shape

    def bwd(g):
        dx = np.zeros(shape, dtype=np.float64)
        oi, oj = np.meshgrid(np.arange(ho), np.arange(wo), indexing="ij")
        ii = oi[None, None] * sh + idx // ww
        jj = oj[None, None] * sw + idx % ww
        bb = np.arange(b)[:, None, None, None]
        cc = np.arange(c)[None, :, None, None]
        np.add.at(dx, (np.broadcast_to(bb, idx.shape), np.broadcast_to(cc, idx.shape), ii, jj), g)
        return (dx,)

    return _record((x,), out, bwd)


def avg_pool2d(x: Tensor, window, stride=None) -> Tensor:
    """Windowed average pooling; gradient spreads uniformly over each window."""
    x = _as_tensor(x)
    wh, ww, sh, sw, ho, wo = _pool_prepare(x, window, stride)
    b, c, h, w = x.shape
    win = np.lib.stride_tricks.sliding_window_view(x.data, (wh, ww), axis=(2, 3))[:, :, ::sh, ::sw]
    out = win.mean(axis=(-2, -1))
    shape = x.shape

    def bwd(g):
        dx = np.zeros(shape, dtype=np.float64)
        gshare = g / (wh * ww)
        for di in range(wh):
            for dj in range(ww):
                dx[:, :, di : di + sh * (ho - 1) + 1 : sh, dj : dj + sw * (wo - 1) + 1 : sw] += gshare
        return (dx,)

    return _record((x,), out, bwd)


# ---------------------------------------------------------------------------
# random streams


class Rng:
    """Seeded random stream; the same seed always yields the same samples."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.default_rng(self.seed)

    def uniform(self, low: float, high: float, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def normal(self, loc: float, scale: float, size=None) -> np.ndarray:
        return self._gen.normal(loc, scale, size)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def shuffle(self, arr) -> None:
        self._gen.shuffle(arr)


# ---------------------------------------------------------------------------
# gradient checking


class GradCheckReport:
    def __init__(self, max_rel_err: float, n_checked: int, tol: float):
        self.max_rel_err = max_rel_err
        self.n_checked = n_checked
        self.tol = tol
        self.passed = max_rel_err <= tol

    def __repr__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return f"GradCheckReport({status}, max_rel_err={self.max_rel_err:.3e}, n={self.n_checked}, tol={self.tol:g})"


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    step: float = 1e-5,
    tol: float = 1e-4,
    max_entries: Optional[int] = None,
    sample_seed: int = 0,
) -> GradCheckReport:
    """Compare the taped gradient of scalar-valued ``f`` at ``x`` against
    central finite differences.

    ``f`` is called with ``x`` itself and must read ``x.data`` (it may close
    over other state, e.g. a model whose parameter ``x`` is). The relative
    error per entry is |a - n| / max(|a| + |n|, 1e-3); the floor keeps roundoff
    on near-zero gradients from registering as failures while true relative
    disagreement on O(1) gradients still does. ``max_entries`` limits the sweep
    to a seeded random subset of coordinates, for large parameter tensors.

    Raises ValueError when two evaluations at the same point differ, since
    finite differences are meaningless for a non-deterministic function.
    """
    with no_grad():
        y1 = f(x)
        y2 = f(x)
    if y1.data.size != 1:
        raise ShapeError(f"grad_check needs a scalar-valued f, got shape {y1.shape}")
    if not np.array_equal(y1.data, y2.data):
        raise ValueError("f is not deterministic: two evaluations at the same point differ")

    x.zero_grad()
    with Tape() as tape:
        y = f(x)
        if y.requires_grad:
            backward(tape, y)
    analytic = x.grad.copy() if x.grad is not None else np.zeros_like(x.data)
    x.zero_grad()

    flat = x.data.reshape(-1)
    n = flat.size
    if max_entries is not None and max_entries < n:
        picks = np.random.default_rng(sample_seed).choice(n, size=max_entries, replace=False)
    else:
        picks = np.arange(n)

    a_flat = analytic.reshape(-1)
    max_rel = 0.0
    with no_grad():
        for i in picks:
            orig = flat[i]
            flat[i] = orig + step
            fp = f(x).item()
            flat[i] = orig - step
            fm = f(x).item()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * step)
            denom = max(abs(a_flat[i]) + abs(numeric), 1e-3)
            rel = abs(a_flat[i] - numeric) / denom
            if rel > max_rel:
                max_rel = rel
    return GradCheckReport(max_rel, len(picks), tol)
