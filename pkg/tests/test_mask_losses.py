import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pconvlab.autograd import Tape, Tensor, precision
from pconvlab.losses import (
    ScaleContext,
    beta_m,
    dice_loss,
    loss_ml,
    loss_ms,
    polar_summary,
    sdm_coefficients,
    sdm_loss,
    sls_loss,
    soft_iou,
)
from pconvlab.losses.masks import EMPTY_PREDICTION_PENALTY, EPS


def blob(shape, r0, c0, r1, c1):
    m = np.zeros(shape)
    m[r0:r1, c0:c1] = 1
    return m


def value(fn, *a, **kw):
    with precision(np.float64):
        out = fn(*a, **kw)
        return float((out.total if hasattr(out, "total") else out).item())


def test_soft_iou_examples():
    g = blob((8, 8), 2, 2, 6, 6)
    assert value(soft_iou, g, g) == pytest.approx(1.0, abs=1e-6)
    assert value(soft_iou, np.zeros_like(g), g) == 0.0
    half = blob((8, 8), 0, 0, 8, 4)
    p = np.full((8, 8), 0.5)
    # summation oracle: sum(pg) = 16, sum p = 32, sum g = 32
    assert value(soft_iou, p, half) == pytest.approx(16 / (32 + 32 - 16), abs=1e-6)


def test_dice_examples():
    rng = np.random.default_rng(0)
    g = blob((8, 8), 1, 1, 4, 5)
    assert value(dice_loss, g, g) == pytest.approx(0.0, abs=1e-6)
    assert value(dice_loss, np.zeros_like(g), g) == pytest.approx(1.0, abs=1e-6)
    p = rng.uniform(size=(8, 8))
    oracle = 1 - 2 * (p * g).sum() / (p.sum() + g.sum())
    assert value(dice_loss, p, g) == pytest.approx(oracle, abs=1e-6)


def test_loss_ms_examples():
    g = blob((8, 8), 2, 2, 6, 6)
    assert value(loss_ms, g, g) == pytest.approx(0.0, abs=1e-6)
    # equal soft area, partial overlap: omega = 1 and the loss is plain soft-IoU loss
    shifted = blob((8, 8), 2, 3, 6, 7)
    assert value(loss_ms, shifted, g) == pytest.approx(1 - value(soft_iou, shifted, g), abs=1e-6)
    # half of g's pixels at probability one
    half = blob((8, 8), 2, 2, 6, 4)
    assert value(loss_ms, half, g) == pytest.approx(0.75, abs=1e-6)


def test_polar_summary_examples():
    m = np.zeros((8, 8))
    m[4, 3] = 1  # row 4, column 3 -> (x, y) = (3, 4)
    s = polar_summary(m)
    assert s.d == pytest.approx(5.0, abs=1e-12)
    assert s.theta == pytest.approx(math.atan2(4, 3), abs=1e-12)
    sym = blob((9, 9), 2, 2, 7, 7)
    c = polar_summary(sym)
    assert c.d == pytest.approx(math.hypot(4, 4), abs=1e-12)
    p = np.random.default_rng(1).uniform(0, 0.5, (6, 6))
    a, b = polar_summary(p), polar_summary(2 * p)
    assert (a.d, a.theta) == pytest.approx((b.d, b.theta), abs=1e-12)
    assert polar_summary(np.zeros((4, 4))) is None


def _point(shape, x, y):
    m = np.zeros(shape)
    m[y, x] = 1
    return m


def test_loss_ml_examples():
    g = blob((10, 10), 3, 3, 6, 7)
    assert value(loss_ml, g, g) == pytest.approx(0.0, abs=1e-9)
    # same angle, radii 3 and 6 along the x axis
    assert value(loss_ml, _point((8, 8), 3, 0), _point((8, 8), 6, 0)) == pytest.approx(0.5, abs=1e-9)
    # equal radius, angles 0 and pi/2
    assert value(loss_ml, _point((8, 8), 5, 0), _point((8, 8), 0, 5)) == pytest.approx(1.0, abs=1e-9)


def test_loss_ml_empty_cases():
    g = blob((6, 6), 1, 1, 3, 3)
    assert value(loss_ml, np.zeros((6, 6)), g) == EMPTY_PREDICTION_PENALTY == 1 + (4 / math.pi ** 2) * math.pi ** 2
    with pytest.raises(ValueError):
        loss_ml(np.full((6, 6), 0.5), np.zeros((6, 6)))


def test_beta_m_examples():
    ctx = ScaleContext(delta=0.5)
    assert beta_m(blob((12, 12), 0, 0, 9, 9), ctx) == 0.5
    assert beta_m(blob((12, 12), 0, 0, 3, 9), ctx) == pytest.approx(1 / 6, abs=1e-15)
    assert beta_m(np.zeros((12, 12)), ctx) == 0.0
    assert beta_m(blob((12, 12), 0, 0, 3, 9), ScaleContext(r_oc=4, delta=0.5)) == 0.5


def test_sdm_examples():
    g27 = blob((12, 12), 0, 0, 3, 9)
    bs, bl = sdm_coefficients(g27, ScaleContext(delta=0.5))
    assert (bs, bl) == pytest.approx((7 / 6, 5 / 6), abs=1e-15)
    assert bs + bl == 2.0
    assert sdm_coefficients(blob((12, 12), 0, 0, 10, 10), ScaleContext(delta=0.5)) == (1.5, 0.5)
    for delta in (0.1, 0.5, 0.9):
        assert value(sdm_loss, g27, g27, ScaleContext(delta=delta)) == pytest.approx(0.0, abs=1e-6)


def test_sdm_batch_uses_per_image_coefficients():
    small = blob((12, 12), 0, 0, 3, 3)
    large = blob((12, 12), 0, 0, 10, 10)
    g = np.stack([small, large])[:, None]
    p = np.clip(g * 0.7 + 0.1, 0, 1)
    ctx = ScaleContext(delta=0.5)
    with precision(np.float64):
        batch = sdm_loss(p, g, ctx)
        one = sdm_loss(p[0, 0], g[0, 0], ctx).total.item()
        two = sdm_loss(p[1, 0], g[1, 0], ctx).total.item()
    assert batch.total.item() == pytest.approx((one + two) / 2, abs=1e-12)
    np.testing.assert_allclose(batch.beta_scale, [1 + 0.5 * 9 / 81, 1.5])


def test_empty_ground_truth_gives_false_positive_term():
    p = np.full((1, 1, 4, 4), 0.25)
    g = np.zeros((1, 1, 4, 4))
    assert value(sdm_loss, p, g) == pytest.approx(0.25, abs=1e-9)
    assert value(sls_loss, np.zeros_like(p), g) == 0.0


def test_gradient_flows_to_prediction_only_through_losses():
    rng = np.random.default_rng(3)
    g = blob((8, 8), 2, 2, 5, 6)
    with precision(np.float64):
        p = Tensor(rng.uniform(0.05, 0.95, (8, 8)), requires_grad=True)
        with Tape() as tape:
            total = sdm_loss(p, g, ScaleContext(delta=0.5)).total
        tape.backward(total)
    assert np.isfinite(p.grad).all() and np.abs(p.grad).sum() > 0


area = st.integers(0, 200)


@settings(max_examples=200, deadline=None)
@given(a=area, b=area, r=st.sampled_from([0.25, 1.0, 4.0]), delta=st.floats(0.01, 1.0, exclude_max=True))
def test_sdm_schedule(a, b, r, delta):
    ctx = ScaleContext(r_oc=r, delta=delta)
    lo, hi = sorted((a, b))
    m_lo = np.zeros(200)
    m_lo[:lo] = 1
    m_hi = np.zeros(200)
    m_hi[:hi] = 1
    s_lo, l_lo = sdm_coefficients(m_lo.reshape(10, 20), ctx)
    s_hi, _ = sdm_coefficients(m_hi.reshape(10, 20), ctx)
    assert s_lo + l_lo == 2.0
    assert s_lo <= s_hi <= 1 + delta
    if lo * r >= 81:
        assert s_lo == s_hi == 1 + delta


masks = arrays(np.float64, (6, 6), elements=st.sampled_from([0.0, 1.0])).filter(lambda m: m.sum() > 0)


@settings(max_examples=100, deadline=None)
@given(g=masks, delta=st.floats(0.05, 1.0, exclude_max=True))
def test_zero_at_identity(g, delta):
    # the additive 1e-6 guard leaves at most ~2e-6 on a one-pixel mask
    tol = 5 * EPS
    assert value(loss_ms, g, g) == pytest.approx(0.0, abs=tol)
    assert value(loss_ml, g, g) == pytest.approx(0.0, abs=1e-9)
    assert value(sdm_loss, g, g, ScaleContext(delta=delta)) == pytest.approx(0.0, abs=(1 + delta) * tol)


half_plane = arrays(np.float64, (4, 9), elements=st.floats(0.0, 0.4))


@settings(max_examples=100, deadline=None)
@given(q=half_plane, r=half_plane, g=masks)
def test_loss_ml_ignores_mass_symmetric_about_the_centroid(q, r, g):
    # point-symmetric maps on a 9x9 grid all have their centroid at (4, 4)
    base = np.zeros((9, 9))
    base[:4] = q
    base = base + np.rot90(base, 2)
    base[4, 4] = 0.5
    extra = np.zeros((9, 9))
    extra[:4] = r
    extra = extra + np.rot90(extra, 2)
    gt = np.zeros((9, 9))
    gt[1:7, 2:8] = g
    assert value(loss_ml, base + extra, gt) == pytest.approx(value(loss_ml, base, gt), abs=1e-9)
