"""Central finite-difference checks for every differentiable op and loss.

Each registered case draws random small inputs that stay clear of kinks
(ties in min/max, clamp bounds, zero for abs/relu, touching box edges), so
a correct backward must agree with finite differences to high precision.
Checks run in float64 with step 1e-3.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autograd import ops
from .autograd.tensor import Tape, Tensor, precision
from .losses import boxes as bl
from .losses import masks as ml
from .pconv import PConv, PConvSpec

STEP = 1e-3
TOLERANCE = 1e-4


@dataclass(frozen=True)
class GradCase:
    name: str
    kind: str  # "op" or "loss"
    build: Callable  # rng -> (fn, inputs)


@dataclass
class CheckResult:
    name: str
    kind: str
    instances: int
    max_rel_err: float
    worst_instance: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def check_gradient(fn, inputs, rng: np.random.Generator, h: float = STEP) -> float:
    """Max relative error over all inputs of a random projection of ``fn``'s output."""
    with precision(np.float64):
        xs = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in inputs]
        with Tape() as tape:
            out = fn(*xs)
            proj = rng.standard_normal(out.shape)
            loss = (out * Tensor(proj)).sum()
            grads = tape.backward(loss, xs)

        def value(arrays):
            return float(np.sum(fn(*[Tensor(a) for a in arrays]).data * proj))

        worst = 0.0
        base = [np.array(a, dtype=np.float64) for a in inputs]
        for k, a in enumerate(base):
            numeric = np.zeros_like(a)
            for idx in np.ndindex(a.shape):
                orig = a[idx]
                a[idx] = orig + h
                up = value(base)
                a[idx] = orig - h
                down = value(base)
                a[idx] = orig
                numeric[idx] = (up - down) / (2 * h)
            worst = max(worst, rel_err(grads[k], numeric))
    return worst


# -- input generators ---------------------------------------------------------

def _u(rng, shape, lo=-1.0, hi=1.0):
    return rng.uniform(lo, hi, size=shape)


def _away_from(rng, shape, points, margin, lo=-1.0, hi=1.0):
    x = _u(rng, shape, lo, hi)
    for p in points:
        near = np.abs(x - p) < margin
        x[near] = p + np.where(x[near] >= p, margin, -margin) * 1.5
    return x


def _shape(rng, rank=None):
    rank = rank or int(rng.integers(1, 4))
    return tuple(int(d) for d in rng.integers(1, 4, size=rank))


def _unary(fn, lo=-1.0, hi=1.0, kinks=()):
    def build(rng):
        shape = _shape(rng)
        x = _away_from(rng, shape, kinks, 0.1, lo, hi) if kinks else _u(rng, shape, lo, hi)
        return fn, [x]

    return build


def _binary(fn, b_lo=-1.0, b_hi=1.0, b_sign=False):
    def build(rng):
        shape = _shape(rng, 2)
        b_shape = shape if rng.uniform() < 0.5 else shape[1:]
        b = _u(rng, b_shape, b_lo, b_hi)
        if b_sign:
            b = b * rng.choice([-1.0, 1.0], size=b_shape)
        return fn, [_u(rng, shape), b]

    return build


def _separated_pair(rng, shape, gap=0.1):
    a = _u(rng, shape)
    d = rng.uniform(gap, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return a, a + d


def _atan2(rng):
    shape = _shape(rng)
    while True:
        r = rng.uniform(0.3, 1.0, size=shape)
        t = rng.uniform(-np.pi, np.pi, size=shape)
        y, x = r * np.sin(t), r * np.cos(t)
        if not np.any((x < 0) & (np.abs(y) < 0.1)):
            return ops.atan2, [y, x]


def _power(rng):
    p = float(rng.choice([2.0, 3.0, 0.5, -1.0, 1.5]))
    return (lambda a: ops.power(a, p)), [_u(rng, _shape(rng), 0.5, 1.5)]


def _minmax(f):
    def build(rng):
        a, b = _separated_pair(rng, _shape(rng, 2))
        return f, [a, b]

    return build


def _clamp(rng):
    x = _away_from(rng, _shape(rng), (-0.5, 0.5), 0.05)
    return (lambda a: ops.clamp(a, -0.5, 0.5)), [x]


def _where(rng):
    shape = _shape(rng, 2)
    cond = rng.uniform(size=shape) < 0.5
    return (lambda a, b: ops.where(cond, a, b)), [_u(rng, shape), _u(rng, shape)]


def _reduce(f):
    def build(rng):
        shape = _shape(rng, 3)
        choice = int(rng.integers(0, 4))
        axis = [None, 0, (1, 2), -1][choice]
        keep = bool(rng.uniform() < 0.5)
        return (lambda a: f(a, axis=axis, keepdims=keep)), [_u(rng, shape)]

    return build


def _reshape(rng):
    shape = _shape(rng, 3)
    return (lambda a: ops.reshape(a, (-1,) + shape[2:])), [_u(rng, shape)]


def _transpose(rng):
    shape = _shape(rng, 3)
    axes = tuple(int(i) for i in rng.permutation(3))
    return (lambda a: ops.transpose(a, axes)), [_u(rng, shape)]


def _getitem(rng):
    shape = (int(rng.integers(3, 5)), int(rng.integers(2, 4)))
    rows = rng.integers(0, shape[0], size=4)  # repeats exercise accumulation
    idx = (rows, slice(0, shape[1] - 1))
    return (lambda a: a[idx]), [_u(rng, shape)]


def _concat(rng):
    axis = int(rng.integers(0, 3))
    shapes = []
    base = list(_shape(rng, 3))
    for _ in range(int(rng.integers(1, 4))):
        s = list(base)
        s[axis] = int(rng.integers(1, 4))
        shapes.append(tuple(s))
    return (lambda *xs: ops.concat(list(xs), axis=axis)), [_u(rng, s) for s in shapes]


def _concat_channels(rng):
    n, h, w = 1, int(rng.integers(1, 4)), int(rng.integers(1, 4))
    shapes = [(n, int(rng.integers(1, 3)), h, w) for _ in range(4)]
    return (lambda *xs: ops.concat_channels(list(xs))), [_u(rng, s) for s in shapes]


def _stack(rng):
    shape = _shape(rng, 2)
    axis = int(rng.integers(0, 3))
    return (lambda *xs: ops.stack(list(xs), axis=axis)), [_u(rng, shape) for _ in range(3)]


def _matmul(rng):
    m, k, n = (int(v) for v in rng.integers(1, 5, size=3))
    return ops.matmul, [_u(rng, (m, k)), _u(rng, (k, n))]


def _conv2d(rng):
    groups = int(rng.choice([1, 2]))
    c1 = groups * int(rng.integers(1, 3))
    c2 = groups * int(rng.integers(1, 3))
    kh, kw = (int(v) for v in rng.integers(1, 4, size=2))
    pad = tuple(int(v) for v in rng.integers(0, 3, size=4))
    stride = int(rng.choice([1, 2]))
    h = max(kh, 3) + int(rng.integers(0, 3))
    w = max(kw, 3) + int(rng.integers(0, 3))
    x = _u(rng, (int(rng.integers(1, 3)), c1, h, w))
    wt = _u(rng, (c2, c1 // groups, kh, kw))
    if rng.uniform() < 0.5:
        return (lambda a, b, c: ops.conv2d(a, b, stride, pad, groups, bias=c)), [x, wt, _u(rng, (c2,))]
    return (lambda a, b: ops.conv2d(a, b, stride, pad, groups)), [x, wt]


def _batch_norm(training):
    def build(rng):
        c = int(rng.integers(1, 4))
        x = _u(rng, (2, c, 3, 3))
        mean = _u(rng, (c,), -0.2, 0.2)
        var = _u(rng, (c,), 0.5, 1.5)

        def fn(a, g, b):
            return ops.batch_norm(a, g, b, mean.copy(), var.copy(), training=training)

        return fn, [x, _u(rng, (c,), 0.5, 1.5), _u(rng, (c,))]

    return build


def _max_pool(rng):
    n, c, h, w = 1, int(rng.integers(1, 3)), 2 * int(rng.integers(1, 3)), 2 * int(rng.integers(1, 3))
    size = n * c * h * w
    # distinct values spaced well above the FD step, so the argmax never flips
    x = rng.permutation(np.linspace(-1, 1, size)).reshape(n, c, h, w)
    return (lambda a: ops.max_pool2d(a, 2)), [x]


def _upsample(rng):
    return (lambda a: ops.upsample_nearest2d(a, 2)), [_u(rng, (1, int(rng.integers(1, 3)), 2, 3))]


def _softmax(rng):
    shape = _shape(rng, 2)
    axis = int(rng.integers(0, 2))
    return (lambda a: ops.softmax(a, axis=axis)), [_u(rng, shape)]


def _pconv(rng):
    k = int(rng.choice([2, 3, 4]))
    s = int(rng.choice([1, 2]))
    layer = PConv(PConvSpec(2, 4, k, s), rng)
    x = _u(rng, (2, 2, 4, 4))
    convs = [b.conv for b in layer.branches] + [layer.fuse.conv]

    def fn(a, *weights):
        for conv, wt in zip(convs, weights):
            conv.weight = wt
        return layer(a)

    return fn, [x] + [c.weight.data.astype(np.float64) for c in convs]


# -- losses -------------------------------------------------------------------

def _interval_pair(rng, disjoint: bool):
    """Two intervals whose four endpoints are pairwise separated."""
    while True:
        a0 = rng.uniform(0, 4)
        a1 = a0 + rng.uniform(2, 6)
        if disjoint:
            b0 = a1 + rng.uniform(0.2, 2)
        else:
            b0 = rng.uniform(a0 - 3, a1 - 0.5)
        b1 = b0 + rng.uniform(2, 6)
        pts = np.array([a0, a1, b0, b1])
        gaps = np.abs(pts[:, None] - pts[None, :])[np.triu_indices(4, 1)]
        if gaps.min() > 0.1 and (disjoint or min(a1, b1) - max(a0, b0) > 0.2):
            return (a0, a1), (b0, b1)


def _box_pairs(rng, n=3):
    pred, gt = [], []
    for _ in range(n):
        disjoint = rng.uniform() < 0.25
        (px, gx), (py, gy) = (_interval_pair(rng, disjoint), _interval_pair(rng, False))
        if rng.uniform() < 0.5:
            px, gx = gx, px
        pred.append([px[0], py[0], px[1], py[1]])
        gt.append([gx[0], gy[0], gx[1], gy[1]])
    return np.array(pred), np.array(gt)


def _box_loss(f, frozen_alpha=False):
    def build(rng):
        pred, gt = _box_pairs(rng)
        if frozen_alpha:
            alpha = bl.aspect_weight(pred, gt)
            return (lambda p: f(p, gt, alpha=alpha)), [pred]
        return (lambda p: f(p, gt)), [pred]

    return build


def _sdb(rng):
    pred, gt = _box_pairs(rng)
    # scale some gt boxes into and out of the small regime
    ctx = bl.ScaleContext(r_oc=float(rng.choice([1.0, 4.0])), delta=float(rng.uniform(0.1, 0.9)))
    alpha = bl.aspect_weight(pred, gt)
    return (lambda p: bl.sdb_loss(p, gt, ctx, alpha=alpha).total), [pred]


def _blob_masks(rng, n, h=6, w=6, empty_last=False):
    g = np.zeros((n, 1, h, w))
    for i in range(n):
        if empty_last and i == n - 1:
            continue
        r, c = int(rng.integers(1, h - 2)), int(rng.integers(1, w - 2))
        g[i, 0, r:r + int(rng.integers(1, 3)), c:c + int(rng.integers(1, 3))] = 1
    return g


def _prob_maps(rng, g):
    logits = rng.normal(-1.0, 1.0, size=g.shape) + 2.5 * g
    return 1.0 / (1.0 + np.exp(-logits))


def _polar_d(m):
    ys, xs = np.indices(m.shape[-2:])
    s = m.sum(axis=(-2, -1))
    return np.hypot((m * xs).sum(axis=(-2, -1)) / s, (m * ys).sum(axis=(-2, -1)) / s)


def _mask_case(f, empty_last=False, need_area_gap=False, need_radius_gap=False):
    def build(rng):
        while True:
            g = _blob_masks(rng, 2, empty_last=empty_last)
            p = _prob_maps(rng, g)
            has = g.sum(axis=(1, 2, 3)) > 0
            if need_area_gap and np.any(np.abs(p.sum(axis=(1, 2, 3)) - g.sum(axis=(1, 2, 3)))[has] < 0.1):
                continue
            if need_radius_gap and np.any(np.abs(_polar_d(p[has]) - _polar_d(g[has])) < 0.05):
                continue
            return (lambda a: f(a, g)), [p]

    return build


def _sdm(rng):
    ctx = bl.ScaleContext(delta=float(rng.uniform(0.1, 0.9)))
    return _mask_case(lambda a, g: ml.sdm_loss(a, g, ctx).total, empty_last=bool(rng.uniform() < 0.5),
                      need_area_gap=True, need_radius_gap=True)(rng)


REGISTRY: list[GradCase] = [
    GradCase("add", "op", _binary(ops.add)),
    GradCase("sub", "op", _binary(ops.sub)),
    GradCase("mul", "op", _binary(ops.mul)),
    GradCase("div", "op", _binary(ops.div, 0.5, 1.5, b_sign=True)),
    GradCase("neg", "op", _unary(ops.neg)),
    GradCase("power", "op", _power),
    GradCase("square", "op", _unary(ops.square)),
    GradCase("exp", "op", _unary(ops.exp)),
    GradCase("log", "op", _unary(ops.log, 0.5, 1.5)),
    GradCase("sqrt", "op", _unary(ops.sqrt, 0.5, 1.5)),
    GradCase("abs", "op", _unary(ops.abs, kinks=(0.0,))),
    GradCase("sigmoid", "op", _unary(ops.sigmoid)),
    GradCase("silu", "op", _unary(ops.silu)),
    GradCase("relu", "op", _unary(ops.relu, kinks=(0.0,))),
    GradCase("tanh", "op", _unary(ops.tanh)),
    GradCase("arctan", "op", _unary(ops.arctan)),
    GradCase("atan2", "op", _atan2),
    GradCase("minimum", "op", _minmax(ops.minimum)),
    GradCase("maximum", "op", _minmax(ops.maximum)),
    GradCase("clamp", "op", _clamp),
    GradCase("where", "op", _where),
    GradCase("sum", "op", _reduce(ops.sum)),
    GradCase("mean", "op", _reduce(ops.mean)),
    GradCase("reshape", "op", _reshape),
    GradCase("transpose", "op", _transpose),
    GradCase("getitem", "op", _getitem),
    GradCase("concat", "op", _concat),
    GradCase("concat_channels", "op", _concat_channels),
    GradCase("stack", "op", _stack),
    GradCase("matmul", "op", _matmul),
    GradCase("conv2d", "op", _conv2d),
    GradCase("batch_norm_train", "op", _batch_norm(True)),
    GradCase("batch_norm_eval", "op", _batch_norm(False)),
    GradCase("max_pool2d", "op", _max_pool),
    GradCase("upsample_nearest2d", "op", _upsample),
    GradCase("softmax", "op", _softmax),
    GradCase("pconv", "op", _pconv),
    GradCase("iou_loss", "loss", _box_loss(bl.iou_loss)),
    GradCase("giou_loss", "loss", _box_loss(bl.giou_loss)),
    GradCase("diou_loss", "loss", _box_loss(bl.diou_loss)),
    GradCase("ciou_loss", "loss", _box_loss(bl.ciou_loss, frozen_alpha=True)),
    GradCase("loss_bs", "loss", _box_loss(bl.loss_bs, frozen_alpha=True)),
    GradCase("loss_bl", "loss", _box_loss(bl.loss_bl)),
    GradCase("sdb_loss", "loss", _sdb),
    GradCase("soft_iou_loss", "loss", _mask_case(ml.soft_iou_loss)),
    GradCase("dice_loss", "loss", _mask_case(ml.dice_loss)),
    GradCase("loss_ms", "loss", _mask_case(ml.loss_ms, need_area_gap=True)),
    GradCase("loss_ml", "loss", _mask_case(ml.loss_ml, need_radius_gap=True)),
    GradCase("sdm_loss", "loss", _sdm),
    GradCase("sls_loss", "loss", _mask_case(lambda a, g: ml.sls_loss(a, g).total, empty_last=True,
                                             need_area_gap=True, need_radius_gap=True)),
    GradCase("soft_iou_report", "loss", _mask_case(lambda a, g: ml.soft_iou_report(a, g).total, empty_last=True)),
    GradCase("dice_report", "loss", _mask_case(lambda a, g: ml.dice_report(a, g).total, empty_last=True)),
]


def select(which: str = "all") -> list[GradCase]:
    if which == "all":
        return list(REGISTRY)
    if which in ("ops", "losses"):
        kind = "op" if which == "ops" else "loss"
        return [c for c in REGISTRY if c.kind == kind]
    names = [n.strip() for n in which.split(",") if n.strip()]
    known = {c.name: c for c in REGISTRY}
    missing = [n for n in names if n not in known]
    if missing:
        raise KeyError(f"unknown gradcheck cases {missing}; known: {sorted(known)}")
    return [known[n] for n in names]


def run_case(case: GradCase, instances: int = 20, seed: int = 0, tol: float = TOLERANCE,
             h: float = STEP) -> CheckResult:
    worst, worst_i = 0.0, -1
    tag = zlib.crc32(case.name.encode())
    for i in range(instances):
        rng = np.random.default_rng([seed, tag, i])
        with precision(np.float64):
            fn, inputs = case.build(rng)
        err = check_gradient(fn, inputs, rng, h)
        if err > worst or worst_i < 0:
            worst, worst_i = err, i
    return CheckResult(case.name, case.kind, instances, worst, worst_i, tol)


def run_gradcheck(which: str = "all", tol: float = TOLERANCE, instances: int = 20, seed: int = 0,
                  h: float = STEP) -> list[CheckResult]:
    return [run_case(c, instances, seed, tol, h) for c in select(which)]
