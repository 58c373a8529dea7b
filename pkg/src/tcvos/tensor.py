"""Dense tensor engine with reverse-mode differentiation.

Values are numpy arrays in single or double precision, row-major and
contiguous; slices copy. Operations recorded on an active `Tape` can be
differentiated with `backward`. Without an active tape every op is a pure
numpy computation, so inference carries no bookkeeping cost.

Gradient rules are hand-written per primitive (vector-Jacobian products);
composite layers are built from these primitives elsewhere.
"""

from __future__ import annotations

import functools
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .errors import ContractError, DimensionError

Array = np.ndarray

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


# ---------------------------------------------------------------------------
# Tape machinery
# ---------------------------------------------------------------------------

_ACTIVE_TAPES: list["Tape"] = []


class _Node:
    """One differentiation record: inputs, and how to push a gradient back."""

    __slots__ = ("inputs", "vjp", "tensor", "tape")

    def __init__(self, tape, inputs, vjp, tensor=None):
        self.tape = tape
        self.inputs = inputs          # tuple of _Node or None per op input
        self.vjp = vjp                # grad -> tuple of grads aligned with inputs
        self.tensor = tensor          # set for leaves only


class Tape:
    """Append-only, topologically ordered record of one forward pass.

    Single-writer: exactly one forward/backward pass owns a tape. Entering
    the context makes it the recording target for ops executed inside.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._leaves: dict[int, _Node] = {}

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _ACTIVE_TAPES.pop()
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    def _leaf_for(self, t: "Tensor") -> _Node:
        node = self._leaves.get(id(t))
        if node is None:
            node = _Node(self, (), None, tensor=t)
            self._leaves[id(t)] = node
            self._nodes.append(node)
        return node

    def _record(self, inputs: tuple, vjp: Callable) -> _Node:
        node = _Node(self, inputs, vjp)
        self._nodes.append(node)
        return node


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


class Tensor:
    """Dense N-d array plus an optional link to a differentiation record."""

    __slots__ = ("data", "node", "requires_grad")

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = np.ascontiguousarray(arr)
        self.node: Optional[_Node] = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name})"

    # operator sugar; scalars are allowed on either side
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow_scalar(self, p)


def parameter(data, dtype=None) -> Tensor:
    return Tensor(data, dtype=dtype, requires_grad=True)


def _as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _tracked_node(tape: Optional[Tape], t: Tensor) -> Optional[_Node]:
    if tape is None:
        return None
    if t.node is not None and t.node.tape is tape:
        return t.node
    if t.requires_grad:
        return tape._leaf_for(t)
    return None


def _make_result(data: Array, inputs: Sequence[Tensor], vjp_builder) -> Tensor:
    """Wrap `data`; record a node when a tape is active and any input is live.

    `vjp_builder` is deferred so untaped execution never pays for closure
    construction.
    """
    out = Tensor(data)
    tape = active_tape()
    if tape is None:
        return out
    nodes = tuple(_tracked_node(tape, t) for t in inputs)
    if all(n is None for n in nodes):
        return out
    out.node = tape._record(nodes, vjp_builder())
    return out


def _unbroadcast(grad: Array, shape: tuple) -> Array:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_same_dtype(a: Tensor, b: Tensor, op: str) -> None:
    if a.dtype != b.dtype:
        raise ContractError(f"{op}: mixed precisions {a.dtype} and {b.dtype}")


# ---------------------------------------------------------------------------
# Elementwise family
# ---------------------------------------------------------------------------

def _binary(op_name: str, a, b, fwd, vjp_a, vjp_b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    _check_same_dtype(a, b, op_name)
    try:
        data = fwd(a.data, b.data)
    except ValueError as e:
        raise DimensionError(f"{op_name}: shapes {a.shape} and {b.shape} do not broadcast") from e

    def build():
        ad, bd = a.data, b.data
        ash, bsh = a.shape, b.shape

        def vjp(g):
            return (_unbroadcast(vjp_a(g, ad, bd), ash),
                    _unbroadcast(vjp_b(g, ad, bd), bsh))

        return vjp

    return _make_result(data, (a, b), build)


def add(a, b) -> Tensor:
    return _binary("add", a, b, lambda x, y: x + y,
                   lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary("sub", a, b, lambda x, y: x - y,
                   lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary("mul", a, b, lambda x, y: x * y,
                   lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b) -> Tensor:
    return _binary("div", a, b, lambda x, y: x / y,
                   lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y))


def _unary(a: Tensor, data: Array, dfn: Callable[[Array], Array]) -> Tensor:
    def build():
        def vjp(g):
            return (dfn(g),)
        return vjp

    return _make_result(data, (a,), build)


def neg(a: Tensor) -> Tensor:
    return _unary(a, -a.data, lambda g: -g)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _unary(a, np.where(mask, a.data, 0), lambda g: g * mask)


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid_np(a.data)
    return _unary(a, s, lambda g: g * s * (1 - s))


def _sigmoid_np(x: Array) -> Array:
    # stable on both tails
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def gelu(a: Tensor) -> Tensor:
    x = a.data
    phi = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = x * phi
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI

    def build():
        def vjp(g):
            return (g * (phi + x * pdf),)
        return vjp

    return _make_result(out.astype(a.dtype, copy=False), (a,), build)


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    return _unary(a, e, lambda g: g * e)


def log(a: Tensor) -> Tensor:
    x = a.data
    return _unary(a, np.log(x), lambda g: g / x)


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)) without overflowing on large positives."""
    x = a.data
    out = np.logaddexp(0.0, x).astype(a.dtype, copy=False)
    return _unary(a, out, lambda g: g * _sigmoid_np(x))


def pow_scalar(a: Tensor, p) -> Tensor:
    if isinstance(p, Tensor):
        raise ContractError("pow: exponent must be a python scalar")
    p = float(p)
    x = a.data
    out = x ** p
    return _unary(a, out, lambda g: g * p * x ** (p - 1.0))


def abs_(a: Tensor) -> Tensor:
    s = np.sign(a.data)
    return _unary(a, np.abs(a.data), lambda g: g * s)


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------

def _norm_axis(axis, ndim) -> Optional[tuple]:
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    axis = tuple(a % ndim for a in axis)
    if len(set(axis)) != len(axis) or any(a >= ndim for a in axis):
        raise DimensionError(f"invalid reduction axis {axis} for ndim {ndim}")
    return axis


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axis = _norm_axis(axis, a.data.ndim)
    data = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.shape

    def build():
        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)
        return vjp

    return _make_result(np.asarray(data, dtype=a.dtype), (a,), build)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    naxis = _norm_axis(axis, a.data.ndim)
    data = a.data.mean(axis=naxis, keepdims=keepdims)
    shape = a.shape
    count = a.data.size if naxis is None else int(np.prod([shape[i] for i in naxis]))

    def build():
        def vjp(g):
            if naxis is not None and not keepdims:
                g = np.expand_dims(g, naxis)
            return (np.broadcast_to(g / count, shape).copy(),)
        return vjp

    return _make_result(np.asarray(data, dtype=a.dtype), (a,), build)


def reduce_max(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    naxis = _norm_axis(axis, a.data.ndim)
    data = a.data.max(axis=naxis, keepdims=keepdims)

    def build():
        full = a.data.max(axis=naxis, keepdims=True)
        mask = (a.data == full)
        counts = mask.sum(axis=naxis, keepdims=True)

        def vjp(g):
            if naxis is not None and not keepdims:
                g = np.expand_dims(g, naxis)
            return (mask * (g / counts),)
        return vjp

    return _make_result(np.asarray(data, dtype=a.dtype), (a,), build)


# ---------------------------------------------------------------------------
# Shape ops (copies, never strided views)
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    data = a.data.reshape(shape).copy()
    orig = a.shape

    def build():
        def vjp(g):
            return (g.reshape(orig),)
        return vjp

    return _make_result(data, (a,), build)


def permute(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    data = np.ascontiguousarray(a.data.transpose(axes))
    inv = tuple(np.argsort(axes))

    def build():
        def vjp(g):
            return (np.ascontiguousarray(g.transpose(inv)),)
        return vjp

    return _make_result(data, (a,), build)


def transpose2d(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose2d expects a matrix, got {a.shape}")
    return permute(a, (1, 0))


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along axis 1; `a` occupies the leading channels."""
    _check_same_dtype(a, b, "concat_channels")
    if a.data.ndim != b.data.ndim:
        raise DimensionError(f"concat_channels: rank mismatch {a.shape} vs {b.shape}")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise DimensionError(f"concat_channels: non-channel extents differ {a.shape} vs {b.shape}")
    data = np.concatenate([a.data, b.data], axis=1)
    ca = a.shape[1]

    def build():
        def vjp(g):
            return (np.ascontiguousarray(g[:, :ca]), np.ascontiguousarray(g[:, ca:]))
        return vjp

    return _make_result(data, (a, b), build)


def slice_channels(a: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start <= stop <= a.shape[1]):
        raise DimensionError(f"slice_channels [{start},{stop}) out of range for {a.shape}")
    data = np.ascontiguousarray(a.data[:, start:stop])
    shape = a.shape

    def build():
        def vjp(g):
            full = np.zeros(shape, dtype=g.dtype)
            full[:, start:stop] = g
            return (full,)
        return vjp

    return _make_result(data, (a,), build)


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b, "matmul")
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError(f"matmul expects stacked matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner extents differ, {a.shape} x {b.shape}")
    data = a.data @ b.data

    def build():
        ad, bd = a.data, b.data
        ash, bsh = a.shape, b.shape

        def vjp(g):
            ga = _unbroadcast(g @ bd.swapaxes(-1, -2), ash)
            gb = _unbroadcast(ad.swapaxes(-1, -2) @ g, bsh)
            return (ga, gb)
        return vjp

    return _make_result(data, (a, b), build)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Normalized exponentials along `axis`, stabilized by max subtraction."""
    x = a.data
    ax = axis % x.ndim
    shifted = x - x.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=ax, keepdims=True)

    def build():
        def vjp(g):
            dot = (g * y).sum(axis=ax, keepdims=True)
            return (y * (g - dot),)
        return vjp

    return _make_result(y.astype(a.dtype, copy=False), (a,), build)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layernorm: affine shape {gamma.shape}/{beta.shape} vs feature {d}")
    _check_same_dtype(x, gamma, "layernorm")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def build():
        gd = gamma.data

        def vjp(g):
            gx = g * gd
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            dx = (gx - m1 - xhat * m2) * inv
            axes = tuple(range(g.ndim - 1))
            dgamma = (g * xhat).sum(axis=axes)
            dbeta = g.sum(axis=axes)
            return (dx.astype(out.dtype, copy=False), dgamma, dbeta)
        return vjp

    return _make_result(out.astype(x.dtype, copy=False), (x, gamma, beta), build)


def cosine_channel(a: Tensor, b: Tensor, eps: float = 1e-6) -> Tensor:
    """Per-pixel cosine of the channel vectors of two [B,C,H,W] maps."""
    _check_same_dtype(a, b, "cosine_channel")
    if a.shape != b.shape or a.data.ndim != 4:
        raise DimensionError(f"cosine_channel: shapes {a.shape} vs {b.shape}")
    if eps <= 0:
        raise ContractError("cosine_channel: eps must be positive")
    ad, bd = a.data, b.data
    dot = (ad * bd).sum(axis=1, keepdims=True)
    na = np.sqrt((ad * ad).sum(axis=1, keepdims=True))
    nb = np.sqrt((bd * bd).sum(axis=1, keepdims=True))
    denom = na * nb + eps
    cos = dot / denom

    def build():
        # guard the norm derivative at exactly-zero vectors
        na_s = np.maximum(na, 1e-30)
        nb_s = np.maximum(nb, 1e-30)

        def vjp(g):
            gd = g / denom
            ga = gd * bd - (gd * cos) * (nb * (ad / na_s))
            gb = gd * ad - (gd * cos) * (na * (bd / nb_s))
            return (ga.astype(ad.dtype, copy=False), gb.astype(bd.dtype, copy=False))
        return vjp

    return _make_result(cos.astype(a.dtype, copy=False), (a, b), build)


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=256)
def _conv_indices(c: int, hp: int, wp: int, kh: int, kw: int, stride: int):
    """Flat gather indices [N, C*kh*kw] into a padded [C,Hp,Wp] image."""
    base = np.arange(c * hp * wp, dtype=np.int64).reshape(c, hp, wp)
    win = sliding_window_view(base, (kh, kw), axis=(1, 2))       # [C,Ho',Wo',kh,kw]
    win = win[:, ::stride, ::stride]                              # [C,Ho,Wo,kh,kw]
    cidx = win.transpose(1, 2, 0, 3, 4).reshape(-1, c * kh * kw)  # [N, C*kh*kw]
    return np.ascontiguousarray(cidx), cidx.reshape(-1)


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """Cross-correlation of [B,C,H,W] with [K,C/groups,kh,kw] kernels."""
    _check_same_dtype(x, w, "conv2d")
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise DimensionError(f"conv2d: expected 4-d input/kernel, got {x.shape} and {w.shape}")
    b_, c, h, wd = x.shape
    k, cg, kh, kw = w.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"conv2d: kernel extents must be odd, got {kh}x{kw}")
    if c % groups or k % groups or cg != c // groups:
        raise DimensionError(
            f"conv2d: channel mismatch, input {x.shape} vs kernel {w.shape} with groups={groups}")
    hp, wp = h + 2 * padding, wd + 2 * padding
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")

    if padding:
        xp = np.zeros((b_, c, hp, wp), dtype=x.dtype)
        xp[:, :, padding:-padding, padding:-padding] = x.data
    else:
        xp = x.data
    idx, idx_flat = _conv_indices(c, hp, wp, kh, kw, stride)
    cols = xp.reshape(b_, -1)[:, idx]                             # [B, N, C*kh*kw]
    n = ho * wo
    g_ = groups
    kg = k // g_

    # dense and depthwise cases go through BLAS-friendly shapes; the generic
    # grouped case falls back to einsum
    if g_ == 1:
        w2d = w.data.reshape(k, c * kh * kw)
        out2 = (cols.reshape(b_ * n, -1) @ w2d.T).reshape(b_, n, k)
    elif kg == 1 and cg == 1:
        cols_g = cols.reshape(b_, n, c, kh * kw)
        wdw = w.data.reshape(c, kh * kw)
        out2 = (cols_g * wdw).sum(axis=-1)                        # [B, N, C]
    else:
        cols_g = cols.reshape(b_, n, g_, cg * kh * kw)
        wm = w.data.reshape(g_, kg, cg * kh * kw)
        out2 = np.einsum("bngi,gki->bngk", cols_g, wm).reshape(b_, n, k)
    out = np.ascontiguousarray(out2.transpose(0, 2, 1).reshape(b_, k, ho, wo))

    def build():
        xdt = x.dtype

        def vjp(g):
            gm = np.ascontiguousarray(g.reshape(b_, k, n).transpose(0, 2, 1))  # [B,N,K]
            if g_ == 1:
                w2d_ = w.data.reshape(k, c * kh * kw)
                gw = np.tensordot(gm, cols, axes=([0, 1], [0, 1])).reshape(k, cg, kh, kw)
                gcols = (gm.reshape(b_ * n, k) @ w2d_).reshape(b_, n, -1)
            elif kg == 1 and cg == 1:
                cols_g_ = cols.reshape(b_, n, c, kh * kw)
                wdw_ = w.data.reshape(c, kh * kw)
                gw = (gm[..., None] * cols_g_).sum(axis=(0, 1)).reshape(k, cg, kh, kw)
                gcols = (gm[..., None] * wdw_).reshape(b_, n, c * kh * kw)
            else:
                gm4 = gm.reshape(b_, n, g_, kg)
                cols_g_ = cols.reshape(b_, n, g_, cg * kh * kw)
                wm_ = w.data.reshape(g_, kg, cg * kh * kw)
                gw = np.einsum("bngk,bngi->gki", gm4, cols_g_).reshape(k, cg, kh, kw)
                gcols = np.einsum("bngk,gki->bngi", gm4, wm_).reshape(b_, n, c * kh * kw)
            gcols = gcols.reshape(b_, n * c * kh * kw)
            size = c * hp * wp
            gxp = np.empty((b_, size), dtype=np.float64)
            for bi in range(b_):
                gxp[bi] = np.bincount(idx_flat, weights=gcols[bi], minlength=size)
            gxp = gxp.reshape(b_, c, hp, wp)
            if padding:
                gxp = gxp[:, :, padding:-padding, padding:-padding]
            return (np.ascontiguousarray(gxp).astype(xdt, copy=False),
                    gw.astype(xdt, copy=False))
        return vjp

    return _make_result(out, (x, w), build)


# ---------------------------------------------------------------------------
# Bilinear resize
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=256)
def _resize_axis(n_in: int, n_out: int):
    """Neighbor indices and fractional weights, align-corners=false."""
    if n_in == 1:
        i0 = np.zeros(n_out, dtype=np.int64)
        return i0, i0.copy(), np.zeros(n_out)
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


@functools.lru_cache(maxsize=256)
def _resize_matrix(n_in: int, n_out: int):
    i0, i1, w = _resize_axis(n_in, n_out)
    m = np.zeros((n_out, n_in), dtype=np.float64)
    np.add.at(m, (np.arange(n_out), i0), 1.0 - w)
    np.add.at(m, (np.arange(n_out), i1), w)
    return m


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resample of [B,C,H,W]; exact on constant fields."""
    if x.data.ndim != 4:
        raise DimensionError(f"resize_bilinear expects [B,C,H,W], got {x.shape}")
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"resize_bilinear: target {out_h}x{out_w} invalid")
    b_, c, h, wd = x.shape
    r0, r1, wh = _resize_axis(h, out_h)
    c0, c1, ww = _resize_axis(wd, out_w)
    d = x.data
    # lerp form keeps constants bit-exact: y = p00 + ww*(p01-p00) + ...
    p00 = d[:, :, r0[:, None], c0[None, :]]
    p01 = d[:, :, r0[:, None], c1[None, :]]
    p10 = d[:, :, r1[:, None], c0[None, :]]
    p11 = d[:, :, r1[:, None], c1[None, :]]
    whb = wh[:, None].astype(x.dtype)
    wwb = ww[None, :].astype(x.dtype)
    top = p00 + wwb * (p01 - p00)
    bot = p10 + wwb * (p11 - p10)
    out = top + whb * (bot - top)

    def build():
        mh_t = _resize_matrix(h, out_h).T.copy()
        mw = _resize_matrix(wd, out_w)

        def vjp(g):
            gx = mh_t @ g.astype(np.float64) @ mw
            return (np.ascontiguousarray(gx).astype(x.dtype, copy=False),)
        return vjp

    return _make_result(np.ascontiguousarray(out), (x,), build)


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------

def backward(tape: Tape, loss: Tensor, params: Optional[Iterable[Tensor]] = None) -> dict:
    """Reverse sweep over `tape` from scalar `loss`.

    Returns a map from parameter tensor to its gradient array. When `params`
    is given, every listed tensor is present in the result, with zeros for
    parameters the loss does not reach.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss.node is None or loss.node.tape is not tape:
        raise ContractError("backward: loss was not recorded on this tape")

    grads: dict[int, Array] = {id(loss.node): np.ones_like(loss.data)}
    result: dict[Tensor, Array] = {}
    for node in reversed(tape._nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.vjp is None:
            result[node.tensor] = g.astype(node.tensor.dtype, copy=False)
            continue
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if inp is None:
                continue
            acc = grads.get(id(inp))
            grads[id(inp)] = gi if acc is None else acc + gi

    if params is not None:
        for p in params:
            if p not in result:
                result[p] = np.zeros_like(p.data)
    return result
