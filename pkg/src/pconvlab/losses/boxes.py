"""Bounding-box regression losses: IoU family and the scale-based dynamic loss.

All losses take corner-format boxes ``(x1, y1, x2, y2)`` as :class:`Box`,
arrays or tensors of shape ``(..., 4)`` and return one value per box.
Gradients flow into the prediction; the ground truth is treated as data.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from ..autograd import ops
from ..autograd.tensor import Tensor

EPS = 1e-7
B_GT_MAX = 81.0
_V_SCALE = 4.0 / math.pi ** 2


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise ValueError(f"invalid box {self}")

    @property
    def w(self) -> float:
        return self.x2 - self.x1

    @property
    def h(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x1 + self.x2) / 2, (self.y1 + self.y2) / 2)

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=np.float64)

    @classmethod
    def from_center(cls, cx, cy, w, h) -> "Box":
        return cls(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


@dataclass(frozen=True)
class ScaleContext:
    r_oc: float = 1.0
    delta: float = 0.5
    b_gtmax: float = B_GT_MAX

    def __post_init__(self):
        if not self.r_oc > 0:
            raise ValueError(f"r_oc must be > 0, got {self.r_oc}")
        if not 0 < self.delta <= 1:
            raise ValueError(f"delta must lie in (0, 1], got {self.delta}")
        if self.b_gtmax != B_GT_MAX:
            raise ValueError("the small-target area cap is fixed at 81 pixels")
        if self.delta == 1:
            warnings.warn("delta=1 removes the scale term entirely for the tiniest targets", stacklevel=2)


@dataclass
class LossReport:
    """A loss value with its scale/location decomposition.

    For a batch the parts and coefficients are per-sample arrays and ``total``
    is the mean of ``beta_scale*scale_part + beta_location*location_part``.
    """

    total: Tensor
    scale_part: np.ndarray
    location_part: np.ndarray
    beta_scale: np.ndarray
    beta_location: np.ndarray

    def recombined(self) -> np.ndarray:
        return self.beta_scale * self.scale_part + self.beta_location * self.location_part

    def as_dict(self) -> dict:
        return {
            "total": float(self.total.item()),
            "scale_part": float(np.mean(self.scale_part)),
            "location_part": float(np.mean(self.location_part)),
            "beta_scale": float(np.mean(self.beta_scale)),
            "beta_location": float(np.mean(self.beta_location)),
        }


def _boxes(b) -> Tensor:
    if isinstance(b, Box):
        return Tensor(b.as_array())
    if isinstance(b, Tensor):
        return b
    return Tensor(np.asarray(b))


def _cols(b: Tensor):
    return b[..., 0], b[..., 1], b[..., 2], b[..., 3]


def _geometry(pred, gt, eps=EPS):
    p, g = _boxes(pred), _boxes(gt)
    px1, py1, px2, py2 = _cols(p)
    gx1, gy1, gx2, gy2 = _cols(g)
    pw, ph = px2 - px1, py2 - py1
    gw, gh = gx2 - gx1, gy2 - gy1
    iw = ops.clamp(ops.minimum(px2, gx2) - ops.maximum(px1, gx1), lo=0.0)
    ih = ops.clamp(ops.minimum(py2, gy2) - ops.maximum(py1, gy1), lo=0.0)
    inter = iw * ih
    union = pw * ph + gw * gh - inter + eps
    cw = ops.maximum(px2, gx2) - ops.minimum(px1, gx1)
    ch = ops.maximum(py2, gy2) - ops.minimum(py1, gy1)
    return dict(pw=pw, ph=ph, gw=gw, gh=gh, inter=inter, union=union, cw=cw, ch=ch,
                p=(px1, py1, px2, py2), g=(gx1, gy1, gx2, gy2))


def iou(a, b, eps: float = EPS) -> Tensor:
    geo = _geometry(a, b, eps)
    return geo["inter"] / geo["union"]


def _aspect_terms(geo, eps):
    iou_ = geo["inter"] / geo["union"]
    dv = ops.arctan(geo["gw"] / (geo["gh"] + eps)) - ops.arctan(geo["pw"] / (geo["ph"] + eps))
    return iou_, _V_SCALE * dv * dv


def aspect_weight(pred, gt, eps: float = EPS) -> np.ndarray:
    """The stop-gradient weight ``alpha = v / ((1 - IoU) + v)`` as plain data."""
    iou_, v = _aspect_terms(_geometry(pred, gt, eps), eps)
    return (v / ((1.0 - iou_) + v + eps)).data.copy()


def loss_bs(pred, gt, eps: float = EPS, alpha=None) -> Tensor:
    """Scale loss ``1 - IoU + alpha*v`` with alpha held constant.

    Passing ``alpha`` pins the weight to given values, which makes the loss
    an ordinary function of ``pred`` for finite-difference checks.
    """
    geo = _geometry(pred, gt, eps)
    iou_, v = _aspect_terms(geo, eps)
    if alpha is None:
        alpha = (v / ((1.0 - iou_) + v + eps)).detach()
    else:
        alpha = Tensor(np.asarray(alpha), dtype=v.dtype)
    return 1.0 - iou_ + alpha * v


def loss_bl(pred, gt, eps: float = EPS) -> Tensor:
    """Location loss: squared centre distance over squared enclosing diagonal."""
    geo = _geometry(pred, gt, eps)
    px1, py1, px2, py2 = geo["p"]
    gx1, gy1, gx2, gy2 = geo["g"]
    dx = (px1 + px2 - gx1 - gx2) * 0.5
    dy = (py1 + py2 - gy1 - gy2) * 0.5
    c2 = geo["cw"] * geo["cw"] + geo["ch"] * geo["ch"]
    return (dx * dx + dy * dy) / (c2 + eps)


def iou_loss(pred, gt, eps: float = EPS) -> Tensor:
    return 1.0 - iou(pred, gt, eps)


def giou_loss(pred, gt, eps: float = EPS) -> Tensor:
    geo = _geometry(pred, gt, eps)
    enclose = geo["cw"] * geo["ch"] + eps
    return 1.0 - geo["inter"] / geo["union"] + (enclose - geo["union"]) / enclose


def diou_loss(pred, gt, eps: float = EPS) -> Tensor:
    return 1.0 - iou(pred, gt, eps) + loss_bl(pred, gt, eps)


def ciou_loss(pred, gt, eps: float = EPS, alpha=None) -> Tensor:
    return loss_bs(pred, gt, eps, alpha) + loss_bl(pred, gt, eps)


def r_oc(orig, current) -> float:
    """Area ratio of the original image to the current feature map; sizes are (w, h)."""
    wo, ho = orig
    wc, hc = current
    if min(wo, ho, wc, hc) <= 0:
        raise ValueError(f"image sizes must be positive, got {orig} and {current}")
    return (wo * ho) / (wc * hc)


def _gt_area(gt) -> np.ndarray:
    if isinstance(gt, Box):
        return np.float64(gt.area)
    g = np.asarray(gt.data if isinstance(gt, Tensor) else gt, dtype=np.float64)
    return (g[..., 2] - g[..., 0]) * (g[..., 3] - g[..., 1])


def dynamic_beta(area, ctx: ScaleContext):
    """``min(area / 81 * R_OC * delta, delta)``, float64, elementwise."""
    area = np.asarray(area, dtype=np.float64)
    raw = area / ctx.b_gtmax * ctx.r_oc * ctx.delta
    out = np.where(area * ctx.r_oc >= ctx.b_gtmax, ctx.delta, np.minimum(raw, ctx.delta))
    return out if out.ndim else float(out)


def beta_b(gt, ctx: ScaleContext):
    return dynamic_beta(_gt_area(gt), ctx)


def sdb_coefficients(gt, ctx: ScaleContext):
    """(beta_scale, beta_location) = (1 - delta + beta_B, 1 + delta - beta_B)."""
    slack = ctx.delta - np.asarray(beta_b(gt, ctx), dtype=np.float64)
    # 1 -/+ slack keeps the pair summing to exactly 2 in floating point
    return 1.0 - slack, 1.0 + slack


def sdb_loss(pred, gt, ctx: ScaleContext | None = None, eps: float = EPS, alpha=None) -> LossReport:
    ctx = ctx or ScaleContext()
    ls = loss_bs(pred, gt, eps, alpha)
    ll = loss_bl(pred, gt, eps)
    bs, bl = sdb_coefficients(gt, ctx)
    per = ls * Tensor(bs, dtype=ls.dtype) + ll * Tensor(bl, dtype=ll.dtype)
    total = per.mean() if per.ndim else per
    return LossReport(total, ls.data.copy(), ll.data.copy(), np.asarray(bs), np.asarray(bl))


BOX_LOSSES = {
    "iou": iou_loss,
    "giou": giou_loss,
    "diou": diou_loss,
    "ciou": ciou_loss,
}
