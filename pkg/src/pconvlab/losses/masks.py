"""Mask losses on probability maps: soft IoU, Dice, scale/location pair, SDM.

Predictions are probability tensors shaped (N, 1, H, W), (N, H, W) or (H, W);
ground truth is a binary array of the same shape. Every function returns one
value per image (a 0-d tensor for a single (H, W) mask).

Coordinates for the location term have their origin at the centre of the
top-left pixel: x is the column index, y the row index.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..autograd import ops
from ..autograd.tensor import Tensor
from .boxes import LossReport, ScaleContext, dynamic_beta

EPS = 1e-6
EMPTY_PREDICTION_PENALTY = 5.0  # 1 + (4/pi^2) * pi^2
_ANGLE_SCALE = 4.0 / math.pi ** 2


@dataclass(frozen=True)
class PolarSummary:
    d: float
    theta: float


def _batch(p, g):
    p = p if isinstance(p, Tensor) else Tensor(np.asarray(p))
    g = np.asarray(g.data if isinstance(g, Tensor) else g)
    if p.shape != g.shape:
        raise ValueError(f"prediction {p.shape} and ground truth {g.shape} differ in shape")
    single = p.ndim == 2
    h, w = p.shape[-2:]
    n = 1 if single else int(np.prod(p.shape[:-2]))
    return p.reshape(n, h, w), g.reshape(n, h, w).astype(p.dtype), single


def _finish(x: Tensor, single: bool) -> Tensor:
    return x.reshape(()) if single else x


def _sums(p: Tensor, g: np.ndarray):
    sp = p.sum(axis=(1, 2))
    sg = Tensor(g.sum(axis=(1, 2)), dtype=p.dtype)
    spg = (p * g).sum(axis=(1, 2))
    return sp, sg, spg


def soft_iou(p, g, eps: float = EPS) -> Tensor:
    p, g, single = _batch(p, g)
    sp, sg, spg = _sums(p, g)
    return _finish(spg / (sp + sg - spg + eps), single)


def soft_iou_loss(p, g, eps: float = EPS) -> Tensor:
    return 1.0 - soft_iou(p, g, eps)


def dice_loss(p, g, eps: float = EPS) -> Tensor:
    p, g, single = _batch(p, g)
    sp, sg, spg = _sums(p, g)
    return _finish(1.0 - 2.0 * spg / (sp + sg + eps), single)


def _omega(sp: Tensor, sg: Tensor, mode: str, eps: float) -> Tensor:
    if mode == "area_ratio":
        return ops.minimum(sp, sg) / (ops.maximum(sp, sg) + eps)
    if mode == "one":
        return Tensor(np.ones(sp.shape), dtype=sp.dtype)
    raise ValueError(f"unknown omega mode {mode!r}")


def loss_ms(p, g, omega: str = "area_ratio", eps: float = EPS) -> Tensor:
    """``1 - omega * softIoU`` with omega the soft-area ratio min/max."""
    p, g, single = _batch(p, g)
    sp, sg, spg = _sums(p, g)
    iou_ = spg / (sp + sg - spg + eps)
    return _finish(1.0 - _omega(sp, sg, omega, eps) * iou_, single)


def polar_summary(mask) -> PolarSummary | None:
    """Polar coordinates of the (probability-weighted) mean pixel; None if empty."""
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=np.float64)
    m = m.reshape(m.shape[-2:])
    total = m.sum()
    if total <= EPS:
        return None
    ys, xs = np.indices(m.shape)
    cx = (m * xs).sum() / total
    cy = (m * ys).sum() / total
    return PolarSummary(math.hypot(cx, cy), math.atan2(cy, cx))


def _polar(p: Tensor, mass: Tensor, tiny: float):
    h, w = p.shape[-2:]
    ys, xs = np.indices((h, w)).astype(p.dtype)
    cx = (p * xs).sum(axis=(1, 2)) / mass
    cy = (p * ys).sum(axis=(1, 2)) / mass
    d = ops.sqrt(cx * cx + cy * cy + tiny)
    theta = ops.atan2(cy, cx)
    return d, theta


def _location_terms(p: Tensor, g: np.ndarray, eps: float) -> Tensor:
    sp = p.sum(axis=(1, 2))
    sg = g.sum(axis=(1, 2))
    empty_p = sp.data <= eps
    # keep empty images finite; their value is replaced below
    sp_safe = sp + empty_p.astype(p.dtype)
    sg_safe = np.where(sg <= eps, 1.0, sg).astype(p.dtype)
    tiny = 1e-12
    d_p, th_p = _polar(p, sp_safe, tiny)
    d_g, th_g = _polar(Tensor(g, dtype=p.dtype), Tensor(sg_safe, dtype=p.dtype), tiny)
    hi = ops.maximum(d_p, d_g)
    both_at_origin = hi.data <= 1e-5
    hi = hi + both_at_origin.astype(p.dtype)
    ratio = ops.where(both_at_origin, Tensor(np.ones(hi.shape), dtype=p.dtype), ops.minimum(d_p, d_g) / hi)
    diff = th_p - th_g
    # wrap into (-pi, pi]; the shift is piecewise constant
    wrap = -2.0 * math.pi * np.ceil((diff.data - math.pi) / (2.0 * math.pi))
    diff = diff + wrap.astype(p.dtype)
    val = 1.0 - ratio + _ANGLE_SCALE * diff * diff
    return ops.where(empty_p, Tensor(np.full(val.shape, EMPTY_PREDICTION_PENALTY), dtype=p.dtype), val)


def loss_ml(p, g, eps: float = EPS) -> Tensor:
    """Location loss from polar summaries of the soft and true centroids.

    An effectively empty prediction scores the constant maximum penalty 5.
    """
    p, g, single = _batch(p, g)
    if np.any(g.sum(axis=(1, 2)) <= 0):
        raise ValueError("loss_ml is undefined for an empty ground-truth mask")
    return _finish(_location_terms(p, g, eps), single)


def beta_m(g, ctx: ScaleContext):
    g = np.asarray(g.data if isinstance(g, Tensor) else g, dtype=np.float64)
    area = g.sum() if g.ndim == 2 else g.reshape(-1, *g.shape[-2:]).sum(axis=(1, 2))
    return dynamic_beta(area, ctx)


def sdm_coefficients(g, ctx: ScaleContext):
    b = np.asarray(beta_m(g, ctx), dtype=np.float64)
    return 1.0 + b, 1.0 - b


def _pair_report(p, g, ctx, bs_fn, omega: str, eps: float) -> LossReport:
    pb, gb, single = _batch(p, g)
    n, h, w = gb.shape
    has_target = gb.sum(axis=(1, 2)) > 0
    sp, sg, spg = _sums(pb, gb)
    iou_ = spg / (sp + sg - spg + eps)
    ms = 1.0 - _omega(sp, sg, omega, eps) * iou_
    ml = _location_terms(pb, gb, eps)
    false_pos = sp * (1.0 / (h * w))
    scale = ops.where(has_target, ms, false_pos)
    loc = ops.where(has_target, ml, Tensor(np.zeros(n), dtype=pb.dtype))
    bs, bl = bs_fn(gb)
    per = scale * Tensor(bs, dtype=pb.dtype) + loc * Tensor(bl, dtype=pb.dtype)
    total = per.reshape(()) if single else per.mean()
    if single:
        return LossReport(total, scale.data.reshape(()), loc.data.reshape(()), bs.reshape(()), bl.reshape(()))
    return LossReport(total, scale.data.copy(), loc.data.copy(), bs, bl)


def sdm_loss(p, g, ctx: ScaleContext | None = None, omega: str = "area_ratio", eps: float = EPS) -> LossReport:
    """Scale-based dynamic mask loss, coefficients computed per image.

    Images without targets contribute the mean predicted probability (a
    false-positive suppression term) in place of the scale/location pair.
    """
    ctx = ctx or ScaleContext()
    return _pair_report(
        p, g, ctx,
        lambda gb: tuple(np.atleast_1d(c) for c in sdm_coefficients(gb, ctx)),
        omega, eps,
    )


def sls_loss(p, g, omega: str = "area_ratio", eps: float = EPS) -> LossReport:
    """Fixed-weight scale + location pair (both coefficients 1)."""
    return _pair_report(
        p, g, None,
        lambda gb: (np.ones(gb.shape[0]), np.ones(gb.shape[0])),
        omega, eps,
    )


def _overlap_report(fn):
    def loss(p, g, eps: float = EPS) -> LossReport:
        pb, gb, single = _batch(p, g)
        n, h, w = gb.shape
        has_target = gb.sum(axis=(1, 2)) > 0
        val = fn(pb, gb, eps)
        scale = ops.where(has_target, val, pb.sum(axis=(1, 2)) * (1.0 / (h * w)))
        total = scale.reshape(()) if single else scale.mean()
        ones = np.ones(n)
        return LossReport(total, scale.data.copy(), np.zeros(n), ones, ones.copy())

    return loss


soft_iou_report = _overlap_report(soft_iou_loss)
dice_report = _overlap_report(dice_loss)
