"""Differentiable operators over :class:`Tensor`.

Every function here computes its forward value with numpy and records a
closure that maps the output gradient to input gradients.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor, get_default_dtype, make_result

CONV_ALGOS = ("direct", "gemm")
_conv_algo = "direct"


def set_conv_algo(name: str) -> None:
    """Select the conv2d forward kernel.

    ``direct`` accumulates over (input channel, kernel row, kernel col) in a
    fixed order and matches a scalar loop bit for bit; ``gemm`` lowers to a
    matrix product and is several times faster.
    """
    global _conv_algo
    if name not in CONV_ALGOS:
        raise ValueError(f"unknown conv algo {name!r}; choose from {CONV_ALGOS}")
    _conv_algo = name


def get_conv_algo() -> str:
    return _conv_algo


@contextlib.contextmanager
def conv_algo(name: str):
    previous = _conv_algo
    set_conv_algo(name)
    try:
        yield
    finally:
        set_conv_algo(previous)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- elementwise arithmetic --------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    return make_result(
        "add", a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    return make_result(
        "sub", a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    return make_result(
        "mul", a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    out = a.data / b.data

    def backward(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return make_result("div", out, (a, b), backward)


def neg(a) -> Tensor:
    a = _t(a)
    return make_result("neg", -a.data, (a,), lambda g: (-g,))


def power(a, p: float) -> Tensor:
    a = _t(a)
    p = float(p)
    out = a.data ** p
    return make_result("power", out, (a,), lambda g: (g * p * a.data ** (p - 1),))


def square(a) -> Tensor:
    a = _t(a)
    return make_result("square", a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def exp(a) -> Tensor:
    a = _t(a)
    out = np.exp(a.data)
    return make_result("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _t(a)
    return make_result("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = _t(a)
    out = np.sqrt(a.data)
    return make_result("sqrt", out, (a,), lambda g: (g * 0.5 / out,))


def abs(a) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = _t(a)
    return make_result("abs", np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _t(a)
    out = _sigmoid(a.data)
    return make_result("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def silu(a) -> Tensor:
    a = _t(a)
    s = _sigmoid(a.data)
    out = a.data * s
    return make_result("silu", out, (a,), lambda g: (g * (s + a.data * s * (1.0 - s)),))


def relu(a) -> Tensor:
    a = _t(a)
    mask = a.data > 0
    return make_result("relu", a.data * mask, (a,), lambda g: (g * mask,))


def tanh(a) -> Tensor:
    a = _t(a)
    out = np.tanh(a.data)
    return make_result("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def arctan(a) -> Tensor:
    a = _t(a)
    return make_result("arctan", np.arctan(a.data), (a,), lambda g: (g / (1.0 + a.data * a.data),))


def atan2(y, x) -> Tensor:
    y, x = _t(y), _t(x)
    out = np.arctan2(y.data, x.data)

    def backward(g):
        r2 = x.data * x.data + y.data * y.data
        r2 = np.where(r2 == 0, 1.0, r2)  # undefined at the origin; report zero slope
        return _unbroadcast(g * x.data / r2, y.shape), _unbroadcast(-g * y.data / r2, x.shape)

    return make_result("atan2", out, (y, x), backward)


def minimum(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    pick_a = a.data <= b.data
    out = np.where(pick_a, a.data, b.data)
    return make_result(
        "minimum", out, (a, b),
        lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)),
    )


def maximum(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    pick_a = a.data >= b.data
    out = np.where(pick_a, a.data, b.data)
    return make_result(
        "maximum", out, (a, b),
        lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)),
    )


def clamp(a, lo: float | None = None, hi: float | None = None) -> Tensor:
    a = _t(a)
    out = np.clip(a.data, lo, hi)
    inside = np.ones(a.shape, dtype=bool)
    if lo is not None:
        inside &= a.data > lo
    if hi is not None:
        inside &= a.data < hi
    return make_result("clamp", out, (a,), lambda g: (g * inside,))


def where(cond, a, b) -> Tensor:
    """Select ``a`` where ``cond`` holds, else ``b``. ``cond`` is a constant."""
    cond = np.asarray(cond.data if isinstance(cond, Tensor) else cond, dtype=bool)
    a, b = _t(a), _t(b)
    out = np.where(cond, a.data, b.data)
    return make_result(
        "where", out, (a, b),
        lambda g: (_unbroadcast(g * cond, a.shape), _unbroadcast(g * ~cond, b.shape)),
    )


# -- reductions and shape ------------------------------------------------------

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = _t(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_result("sum", np.asarray(out), (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _t(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = _t(a)
    return make_result("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes) -> Tensor:
    a = _t(a)
    inv = np.argsort(axes)
    return make_result("transpose", np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a, idx) -> Tensor:
    a = _t(a)
    if isinstance(idx, Tensor):
        idx = idx.data

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return make_result("getitem", np.array(a.data[idx]), (a,), backward)


def concat(xs, axis: int = 1) -> Tensor:
    xs = [_t(x) for x in xs]
    if len(xs) == 1:
        return xs[0]
    out = np.concatenate([x.data for x in xs], axis=axis)
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return make_result("concat", out, tuple(xs), lambda g: tuple(np.split(g, bounds, axis=axis)))


def concat_channels(xs) -> Tensor:
    """Concatenate rank-4 tensors along the channel axis."""
    xs = [_t(x) for x in xs]
    if not xs:
        raise ValueError("concat_channels needs at least one input")
    ref = xs[0].shape
    for x in xs:
        if x.ndim != 4 or x.shape[0] != ref[0] or x.shape[2:] != ref[2:]:
            raise ValueError(f"spatial/batch mismatch: {x.shape} vs {ref}")
    return concat(xs, axis=1)


def stack(xs, axis: int = 0) -> Tensor:
    xs = [_t(x) for x in xs]
    out = np.stack([x.data for x in xs], axis=axis)
    n = len(xs)
    return make_result(
        "stack", out, tuple(xs),
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)),
    )


def matmul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul supports 2-D operands only")
    return make_result("matmul", a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


# -- convolution -------------------------------------------------------------

@dataclass(frozen=True)
class PadSpec:
    left: int = 0
    right: int = 0
    top: int = 0
    bottom: int = 0

    def __post_init__(self):
        for k in ("left", "right", "top", "bottom"):
            if int(getattr(self, k)) < 0:
                raise ValueError(f"pad {k} must be >= 0")

    @classmethod
    def of(cls, pad) -> "PadSpec":
        if isinstance(pad, PadSpec):
            return pad
        if isinstance(pad, int):
            return cls(pad, pad, pad, pad)
        return cls(*pad)

    def as_tuple(self):
        return (self.left, self.right, self.top, self.bottom)


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    groups: int = 1
    pad: PadSpec = PadSpec()
    bias: bool = False

    def __post_init__(self):
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ValueError("channels must be divisible by groups")
        if self.kernel_h < 1 or self.kernel_w < 1 or self.stride < 1:
            raise ValueError("kernel dims and stride must be >= 1")

    @property
    def weight_shape(self):
        return (self.out_channels, self.in_channels // self.groups, self.kernel_h, self.kernel_w)

    def output_hw(self, h: int, w: int):
        return conv_output_hw(h, w, self.kernel_h, self.kernel_w, self.stride, self.pad)


def conv_output_hw(h, w, kh, kw, stride, pad) -> tuple[int, int]:
    pad = PadSpec.of(pad)
    return (
        (h + pad.top + pad.bottom - kh) // stride + 1,
        (w + pad.left + pad.right - kw) // stride + 1,
    )


def pad2d(a, pad) -> Tensor:
    a = _t(a)
    p = PadSpec.of(pad)
    out = np.pad(a.data, ((0, 0), (0, 0), (p.top, p.bottom), (p.left, p.right)))
    h, w = a.shape[2:]
    return make_result(
        "pad2d", out, (a,),
        lambda g: (g[:, :, p.top:p.top + h, p.left:p.left + w],),
    )


def _windows(xp, kh, kw, stride, ho, wo):
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]


def _conv_direct(xp, w, stride, groups, ho, wo):
    n = xp.shape[0]
    c2, cg, kh, kw = w.shape
    og = c2 // groups
    out = np.zeros((n, c2, ho, wo), dtype=np.result_type(xp, w))
    for g in range(groups):
        osl = slice(g * og, (g + 1) * og)
        acc = out[:, osl]
        for c in range(cg):
            ci = g * cg + c
            for i in range(kh):
                for j in range(kw):
                    patch = xp[:, ci, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride]
                    acc += w[osl, c, i, j][None, :, None, None] * patch[:, None]
    return out


def _cols(xp, groups, g, cg, kh, kw, stride, ho, wo):
    win = _windows(xp[:, g * cg : (g + 1) * cg], kh, kw, stride, ho, wo)
    n = xp.shape[0]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cg * kh * kw)


def conv2d(x, weight, stride: int = 1, pad=0, groups: int = 1, bias=None) -> Tensor:
    """2-D cross-correlation with explicit per-side zero padding.

    ``weight`` has shape (c2, c1/groups, kh, kw). ``pad`` is a PadSpec, an int
    or a (left, right, top, bottom) tuple.
    """
    x, weight = _t(x), _t(weight)
    p = PadSpec.of(pad)
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError("conv2d expects rank-4 input and weight")
    n, c1, h, w = x.shape
    c2, cg, kh, kw = weight.shape
    if c1 % groups or c2 % groups:
        raise ValueError(f"channels {c1}->{c2} not divisible by groups={groups}")
    if cg * groups != c1:
        raise ValueError(f"weight expects {cg * groups} input channels, got {c1}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    ho, wo = conv_output_hw(h, w, kh, kw, stride, p)
    if ho <= 0 or wo <= 0:
        raise ValueError(f"non-positive conv output size {(ho, wo)} for input {(h, w)}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (p.top, p.bottom), (p.left, p.right)))
    og = c2 // groups
    if _conv_algo == "direct":
        out = _conv_direct(xp, weight.data, stride, groups, ho, wo)
    else:
        out = np.empty((n, c2, ho, wo), dtype=np.result_type(xp, weight.data))
        for g in range(groups):
            cols = _cols(xp, groups, g, cg, kh, kw, stride, ho, wo)
            wm = weight.data[g * og : (g + 1) * og].reshape(og, -1)
            out[:, g * og : (g + 1) * og] = (cols @ wm.T).reshape(n, ho, wo, og).transpose(0, 3, 1, 2)
    inputs = (x, weight)
    if bias is not None:
        bias = _t(bias)
        out = out + bias.data.reshape(1, -1, 1, 1)
        inputs = (x, weight, bias)

    def backward(gout):
        gx = np.zeros_like(xp) if x.requires_grad else None
        gw = np.zeros_like(weight.data) if weight.requires_grad else None
        for g in range(groups):
            gm = gout[:, g * og : (g + 1) * og].transpose(0, 2, 3, 1).reshape(n * ho * wo, og)
            if gw is not None:
                cols = _cols(xp, groups, g, cg, kh, kw, stride, ho, wo)
                gw[g * og : (g + 1) * og] = (gm.T @ cols).reshape(og, cg, kh, kw)
            if gx is not None:
                wm = weight.data[g * og : (g + 1) * og].reshape(og, -1)
                dcols = (gm @ wm).reshape(n, ho, wo, cg, kh, kw)
                tgt = gx[:, g * cg : (g + 1) * cg]
                for i in range(kh):
                    for j in range(kw):
                        tgt[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += (
                            dcols[..., i, j].transpose(0, 3, 1, 2)
                        )
        if gx is not None:
            gx = gx[:, :, p.top : p.top + h, p.left : p.left + w]
        grads = [gx, gw]
        if bias is not None:
            grads.append(gout.sum(axis=(0, 2, 3)))
        return grads

    return make_result("conv2d", out, inputs, backward)


# -- normalization, pooling, resampling --------------------------------------

def batch_norm(x, gamma, beta, running_mean: np.ndarray | None = None, running_var: np.ndarray | None = None,
               training: bool = True, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (n, h, w).

    In training mode batch statistics are used and ``running_mean`` /
    ``running_var`` (numpy buffers) are updated in place. In eval mode the
    running statistics are used.
    """
    x, gamma, beta = _t(x), _t(gamma), _t(beta)
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"gamma/beta must have shape ({c},)")
    shp = (1, c, 1, 1)
    if training:
        m = x.size // c
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        if running_mean is not None:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu
        if running_var is not None:
            unbiased = var * m / max(m - 1, 1)
            running_var *= 1.0 - momentum
            running_var += momentum * unbiased
    else:
        if running_mean is None or running_var is None:
            raise ValueError("eval-mode batch_norm needs running statistics")
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(shp)) * inv.reshape(shp)
    out = xhat * gamma.data.reshape(shp) + beta.data.reshape(shp)

    def backward(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dxhat = g * gamma.data.reshape(shp)
        if training:
            m = x.size // c
            dx = (inv.reshape(shp) / m) * (
                m * dxhat
                - dxhat.sum(axis=(0, 2, 3), keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            )
        else:
            dx = dxhat * inv.reshape(shp)
        return dx, dgamma, dbeta

    return make_result("batch_norm", out.astype(x.dtype, copy=False), (x, gamma, beta), backward)


def max_pool2d(x, k: int = 2) -> Tensor:
    x = _t(x)
    n, c, h, w = x.shape
    ho, wo = h // k, w // k
    xc = x.data[:, :, : ho * k, : wo * k]
    blocks = xc.reshape(n, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, k * k)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * k, wo * k)
        full = np.zeros_like(x.data)
        full[:, :, : ho * k, : wo * k] = gb
        return (full,)

    return make_result("max_pool2d", out, (x,), backward)


def upsample_nearest2d(x, factor: int = 2) -> Tensor:
    x = _t(x)
    n, c, h, w = x.shape
    out = x.data.repeat(factor, axis=2).repeat(factor, axis=3)
    return make_result(
        "upsample_nearest2d", out, (x,),
        lambda g: (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),),
    )


def softmax(x, axis=-1) -> Tensor:
    x = _t(x)
    shift = np.max(x.data, axis=axis, keepdims=True)
    e = exp(sub(x, shift))
    return div(e, sum(e, axis=axis, keepdims=True))


def detach(x) -> Tensor:
    return _t(x).detach()


def zeros(shape, requires_grad=False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=get_default_dtype()), requires_grad=requires_grad)


__all__ = [
    "PadSpec", "ConvSpec", "conv_output_hw", "set_conv_algo", "get_conv_algo", "as_tensor",
    "add", "sub", "mul", "div", "neg", "power", "square", "exp", "log", "sqrt", "abs", "sigmoid", "silu",
    "relu", "tanh", "arctan", "atan2", "minimum", "maximum", "clamp", "where", "sum", "mean", "reshape",
    "transpose", "getitem", "concat", "concat_channels", "stack", "matmul", "pad2d", "conv2d",
    "batch_norm", "max_pool2d", "upsample_nearest2d", "softmax", "detach", "zeros",
]
