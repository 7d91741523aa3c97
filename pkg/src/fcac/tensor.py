"""
Minimal dense tensor with reverse-mode differentiation.

Each differentiable op computes its forward value with numpy and records a
closure mapping the output gradient to one gradient per parent. ``backward``
walks the recorded graph in reverse topological order. Gradients accumulate
into ``.grad``; callers zero them explicitly between steps.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import InvalidInputError, ShapeError

_DEFAULT_DTYPE = np.float64
_GRAD_ENABLED = True

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]


def set_default_dtype(dtype) -> None:
    """Switch the dtype used for newly created tensors (float64 or float32)."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise InvalidInputError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype or _DEFAULT_DTYPE, copy=True)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self._op = ""

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        out._op = op
        return out

    # -- properties ----------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    @property
    def mT(self) -> "Tensor":
        return swap_last(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{rg}, op={self._op or 'leaf'})"

    # -- autodiff --------------------------------------------------------
    def backward(self) -> None:
        """Populate ``.grad`` on every requires-grad tensor reachable from this scalar."""
        if self.data.size != 1 or self.data.ndim > 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return
        order = _topo_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    raise ShapeError(f"{node._op}: grad shape {pg.shape} != input shape {parent.shape}")
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operators -------------------------------------------------------
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return mul(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)
    def __pow__(self, p: float): return power(self, p)
    def __getitem__(self, idx): return index(self, idx)

    def sum(self, axis=None, keepdims=False): return tsum(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)


def _topo_order(root: Tensor):
    """Reverse topological order (root first), iterative to avoid recursion limits."""
    visited = set()
    post = []
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            post.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return list(reversed(post))


def as_tensor(x: ArrayLike) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(a.data + b.data, (a, b), bw, "add")


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._from_op(a.data - b.data, (a, b), bw, "sub")


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._from_op(a.data * b.data, (a, b), bw, "mul")


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return Tensor._from_op(out, (a, b), bw, "div")


def power(a: Tensor, p: float) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        return (g * p * a.data ** (p - 1),)

    return Tensor._from_op(a.data ** p, (a,), bw, "pow")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return Tensor._from_op(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor._from_op(np.where(mask, a.data, 0.0).astype(a.data.dtype), (a,), lambda g: (g * mask,), "relu")


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._from_op(np.asarray(out), (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    return Tensor._from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    a = as_tensor(a)
    inv = None if axes is None else np.argsort(axes)
    return Tensor._from_op(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def swap_last(a: Tensor) -> Tensor:
    """Swap the last two axes (batched matrix transpose)."""
    return Tensor._from_op(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),), "swap_last")


def broadcast_to(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    return Tensor._from_op(np.broadcast_to(a.data, shape).copy(), (a,), lambda g: (_unbroadcast(g, a.shape),), "broadcast")


def index(a: Tensor, idx) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor._from_op(np.asarray(a.data[idx]), (a,), bw, "index")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return Tensor._from_op(np.stack([t.data for t in tensors], axis=axis), tensors, bw, "stack")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs ≥2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._from_op(np.matmul(a.data, b.data), (a, b), bw, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T (+ bias)`` with weight stored as (out_features, in_features)."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input dim {x.shape[-1]} != weight in-dim {weight.shape[1]}")
    y = matmul(x, swap_last(weight))
    return y if bias is None else y + bias


# ---------------------------------------------------------------------------
# normalisation / probabilities
# ---------------------------------------------------------------------------

def softmax_rows(m: Tensor) -> Tensor:
    """Softmax along the last axis, stabilised by subtracting the row max."""
    m = as_tensor(m)
    z = m.data - m.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return Tensor._from_op(out, (m,), bw, "softmax")


def log_softmax_rows(m: Tensor) -> Tensor:
    m = as_tensor(m)
    z = m.data - m.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    sm = np.exp(out)

    def bw(g):
        return (g - sm * g.sum(axis=-1, keepdims=True),)

    return Tensor._from_op(out, (m,), bw, "log_softmax")


LAYER_NORM_EPS = 1e-5


def layer_norm(x: Tensor, eps: float = LAYER_NORM_EPS, weight: Optional[Tensor] = None,
               bias: Optional[Tensor] = None) -> Tensor:
    """Normalise each vector along the last axis to zero mean and unit (population) variance.

    ``weight``/``bias`` are an optional learnable affine; the PAN runs without it.
    """
    x = as_tensor(x)
    d = x.shape[-1]
    if d < 2:
        raise InvalidInputError(f"layer_norm needs at least 2 features, got {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv

    def bw(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - y * gy),)

    out = Tensor._from_op(y, (x,), bw, "layer_norm")
    if weight is not None:
        out = out * weight
    if bias is not None:
        out = out + bias
    return out


def l2_normalize(x: Tensor, axis: int = -1, floor: float = 1e-12) -> Tensor:
    """Divide each vector by its Euclidean norm (norm floored to avoid 0/0)."""
    x = as_tensor(x)
    n = np.maximum(np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True)), floor)
    y = x.data / n

    def bw(g):
        return ((g - y * (g * y).sum(axis=axis, keepdims=True)) / n,)

    return Tensor._from_op(y, (x,), bw, "l2_normalize")


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise cosine between rows: a (..., m, D), b (..., n, D) -> (..., m, n)."""
    return matmul(l2_normalize(a), swap_last(l2_normalize(b)))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of ``-log softmax(logits)[label]``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs {labels.shape[0]} labels")
    c = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise InvalidInputError(f"labels must lie in [0, {c}), got range [{labels.min()}, {labels.max()}]")
    b = labels.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(b)
    loss = np.asarray((lse - z[rows, labels]).mean())

    def bw(g):
        sm = np.exp(z - lse[:, None])
        sm[rows, labels] -= 1.0
        return (sm * (g / b),)

    return Tensor._from_op(loss, (logits,), bw, "cross_entropy")


# ---------------------------------------------------------------------------
# convolution / pooling
# ---------------------------------------------------------------------------

def same_padding(kernel: int) -> int:
    """Zero-padding that keeps spatial size at stride 1 for an odd kernel."""
    return (kernel - 1) // 2


def conv2d(x: Tensor, k: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation with explicit zero padding.

    x: (C_in, H, W) or (B, C_in, H, W); k: (C_out, C_in, kh, kw).
    """
    x, k = as_tensor(x), as_tensor(k)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or k.ndim != 4:
        raise ShapeError(f"conv2d: bad ranks x{x.shape} k{k.shape}")
    bsz, cin, h, w = xd.shape
    cout, kcin, kh, kw = k.shape
    if kcin != cin:
        raise ShapeError(f"conv2d: input has {cin} channels, kernel expects {kcin}")
    if stride < 1 or pad < 0:
        raise InvalidInputError("conv2d: stride must be ≥1 and pad ≥0")
    hp, wp = h + 2 * pad, w + 2 * pad
    if hp < kh or wp < kw:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :ho, :wo]  # (B, C, Ho, Wo, kh, kw)
    out = np.tensordot(win, k.data, axes=([1, 4, 5], [1, 2, 3]))  # (B, Ho, Wo, Cout)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def bw(g):
        g4 = g[None] if squeeze else g
        gk = np.tensordot(g4, win, axes=([0, 2, 3], [0, 2, 3]))  # (Cout, C, kh, kw)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                contrib = np.tensordot(g4, k.data[:, :, i, j], axes=([1], [0]))  # (B, Ho, Wo, C)
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += contrib.transpose(0, 3, 1, 2)
        gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
        if squeeze:
            gx = gx[0]
        return gx, gk

    return Tensor._from_op(out[0] if squeeze else out, (x, k), bw, "conv2d")


def avg_pool(x: Tensor, window: Union[int, Tuple[int, int]]) -> Tensor:
    """Non-overlapping average pooling over the last two axes; ragged edges are dropped."""
    x = as_tensor(x)
    wh, ww = (window, window) if isinstance(window, int) else window
    h, w = x.shape[-2], x.shape[-1]
    ho, wo = h // wh, w // ww
    if ho == 0 or wo == 0:
        raise ShapeError(f"avg_pool window {wh}x{ww} larger than input {h}x{w}")
    lead = x.shape[:-2]
    crop = x.data[..., :ho * wh, :wo * ww]
    out = crop.reshape(*lead, ho, wh, wo, ww).mean(axis=(-3, -1))

    def bw(g):
        gfull = np.zeros_like(x.data)
        spread = np.repeat(np.repeat(g, wh, axis=-2), ww, axis=-1) / (wh * ww)
        gfull[..., :ho * wh, :wo * ww] = spread
        return (gfull,)

    return Tensor._from_op(out, (x,), bw, "avg_pool")


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the last two (spatial) axes."""
    return mean(x, axis=(-2, -1))
