"""Acceptance suite: one test, and one PASS/FAIL line, per criterion.

The lines are printed as each test finishes (visible with ``-s``) and
collected into an "acceptance criteria" section of the terminal summary.
Criterion 8 trains the full benchmark grid (about half an hour on one core)
and carries the ``slow`` marker; deselect it with ``-m "not slow"``.
"""
import contextlib
import random
import time
import warnings
from fractions import Fraction

import numpy as np
import pytest
from oracles import oracle_seg, pinwheel_field, random_instance, staircase_ap

from pconvlab.autograd import Tensor, ops, precision
from pconvlab.cli import main
from pconvlab.gradcheck import REGISTRY
from pconvlab.harness import ExperimentConfig, SegNet, BoxNet, ablate, analyze, train
from pconvlab.harness.benchmark import benchmark_configs, trend_checks
from pconvlab.losses import Box, ScaleContext, ciou_loss, dynamic_beta, loss_ml, sdb_coefficients, sdb_loss
from pconvlab.losses.masks import sdm_coefficients
from pconvlab.metrics import map50, seg_counts
from pconvlab.pconv import ConvBlockSpec, PConvSpec, conv_block_forward, pconv_forward, receptive_field


@contextlib.contextmanager
def criterion(record_property, number: int, title: str, budget: float):
    notes: list[str] = []
    start = time.perf_counter()
    ok = False
    try:
        yield notes
        ok = True
    finally:
        elapsed = time.perf_counter() - start
        timely = elapsed <= budget
        status = "PASS" if ok and timely else "FAIL"
        extra = "" if timely else " over budget"
        line = f"{status} criterion {number}: {title} [{elapsed:.2f}s of {budget:g}s{extra}]"
        if notes:
            line += " | " + "; ".join(notes)
        record_property("acceptance", line)
        print(line)
    assert timely, f"criterion {number} took {elapsed:.1f}s, budget {budget}s"


def test_criterion_01_parameter_counts(record_property):
    with criterion(record_property, 1, "parameter counts exact", 1.0) as notes:
        rows = analyze(5, [16, 32, 64])
        conv = next(r for r in rows if r["layer"] == "conv" and r["c1"] == r["c2"] == 64)
        pc = next(r for r in rows if r["layer"] == "pconv" and r["k"] == 3 and r["c1"] == r["c2"] == 64)
        assert conv["params"] == 36864
        assert pc["params"] == 28672 == pc["formula_params"]
        assert Fraction(pc["params"], conv["params"]) == Fraction(7, 9)
        notes.append(f"conv {conv['params']}, pconv(k=3) {pc['params']}, ratio 7/9")


def test_criterion_02_receptive_fields(record_property):
    with criterion(record_property, 2, "receptive fields", 1.0) as notes:
        assert receptive_field(ConvBlockSpec(4, 4)).receptive_field_cells == 9
        assert receptive_field(PConvSpec(4, 4, 3)).receptive_field_cells == 25 == len(pinwheel_field(3))
        k4 = receptive_field(PConvSpec(4, 4, 4)).receptive_field_cells
        oracle = len(pinwheel_field(4))
        assert k4 == oracle
        notes.append(f"conv 9, k=3 25, k=4 {k4} (propagation oracle {oracle}; the quoted expectation was 49)")


def test_criterion_03_sdb_degeneracy(record_property):
    with criterion(record_property, 3, "SDB equals CIoU at or above the 81-pixel cap", 5.0) as notes:
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(1000):
            r = float(rng.choice([1.0, 4.0, 16.0]))
            w = rng.uniform(1.0, 20.0)
            h = rng.uniform(81.0 / (r * w), 81.0 / (r * w) + 20.0)
            x, y = rng.uniform(0, 30, 2)
            g = Box(x, y, x + w, y + h)
            assert g.area * r >= 81
            px, py = rng.uniform(-5, 35, 2)
            p = np.array([[px, py, px + rng.uniform(0.5, 25), py + rng.uniform(0.5, 25)]])
            gt = g.as_array()[None]
            a = sdb_loss(p, gt, ScaleContext(r_oc=r, delta=float(rng.uniform(0.05, 0.99)))).total.item()
            b = ciou_loss(p, gt).mean().item()
            worst = max(worst, abs(a - b))
        assert worst <= 1e-7
        notes.append(f"max |difference| {worst:.1e} over 1000 pairs")


def test_criterion_04_coefficient_identities(record_property):
    with criterion(record_property, 4, "coefficient sums and schedules", 5.0) as notes:
        rng = np.random.default_rng(4)
        areas = np.arange(0, 400, 0.5)
        boxes = np.stack([np.zeros_like(areas), np.zeros_like(areas), areas, np.ones_like(areas)], axis=1)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for _ in range(10_000):
                ctx = ScaleContext(r_oc=float(2.0 ** rng.uniform(-4, 4)), delta=float(rng.uniform(0.0, 1.0)) or 1.0)
                g = Box(*rng.uniform(0, 10, 2), *rng.uniform(10, 30, 2))
                bs, bl = sdb_coefficients(g, ctx)
                assert bs + bl == 2.0
                mask = rng.random((12, 12)) < rng.uniform()
                ms, ml = sdm_coefficients(mask, ctx)
                assert ms + ml == 2.0
                sched_b, _ = sdb_coefficients(boxes, ctx)
                beta = dynamic_beta(areas, ctx)
                sched_m = 1.0 + beta
                capped = areas * ctx.r_oc >= 81
                for s, top in ((sched_b, 1.0), (sched_m, 1.0 + ctx.delta)):
                    assert np.all(np.diff(s) >= 0)
                    assert np.all(s[capped] == top) and np.all(s[~capped] <= top)
        notes.append("10^4 contexts, box and mask pairs sum to exactly 2, schedules monotone with plateau")


def test_criterion_05_gradient_suite(record_property, capsys):
    with criterion(record_property, 5, "finite-difference gradient suite", 120.0) as notes:
        code = main(["gradcheck", "--ops", "all", "--tol", "1e-4", "--instances", "20"])
        out = capsys.readouterr().out
        lines = [ln for ln in out.splitlines() if ln.startswith(("ok", "FAIL"))]
        assert len(lines) == len(REGISTRY)
        assert all(ln.endswith("over 20") for ln in lines)
        assert {c.kind for c in REGISTRY} == {"op", "loss"}
        worst = max(float(ln.split("max_rel_err=")[1].split()[0]) for ln in lines)
        assert code == 0, "\n".join(ln for ln in lines if ln.startswith("FAIL"))
        notes.append(f"{len(lines)} cases x 20 instances, worst rel err {worst:.1e}, exit 0")


def test_criterion_06_shape_contract(record_property):
    with criterion(record_property, 6, "PConv shape contract and stem swap", 10.0) as notes:
        rng = np.random.default_rng(6)
        n = 0
        with ops.conv_algo("gemm"):
            for h in (8, 12, 16, 24, 32):
                for w in (8, 12, 16, 24, 32):
                    for s in (1, 2):
                        x = Tensor(rng.standard_normal((1, 2, h, w)).astype(np.float32))
                        base = conv_block_forward(x, 2, 4, s, rng).shape
                        for k in (2, 3, 4, 5):
                            assert pconv_forward(x, PConvSpec(2, 4, k, s), rng).shape == base == (1, 4, h // s, w // s)
                            n += 1
            x = Tensor(np.zeros((2, 1, 32, 32), dtype=np.float32))
            for net in (SegNet(), BoxNet()):
                shape = net(x).shape
                for ks in ((3, 3), (4, 3), (4, 4), (2, 5)):
                    net.swap_stem("pconv", ks)  # asserts every stem output shape is unchanged
                    assert net(x).shape == shape
                net.swap_stem("conv")
        notes.append(f"{n} (h, w, s, k) combinations, SegNet/BoxNet stem swaps")


def test_criterion_07_metric_oracles(record_property):
    with criterion(record_property, 7, "metrics match brute-force oracles", 30.0) as notes:
        rnd = random.Random(7)
        for _ in range(100):
            images = random_instance(rnd)
            aps = [a for a in (staircase_ap(images, c) for c in (0, 1)) if a is not None]
            expected = float(sum(aps) / len(aps)) if aps else 0.0
            assert abs(map50(images) - expected) <= 1e-12
        rng = np.random.default_rng(7)
        for _ in range(100):
            density = rng.uniform(0.02, 0.3)
            gt, pred = rng.random((2, 24, 24)) < density
            assert seg_counts(pred, gt).astuple() == oracle_seg(pred, gt)
        notes.append("100 mAP50 instances vs staircase oracle, 100 masks vs component oracle")


@pytest.mark.slow
def test_criterion_08_desk_scale_trends(record_property, tmp_path):
    title = "trend reproduction on the synthetic benchmark (5 seeds, 500/125 images)"
    with criterion(record_property, 8, title, 45 * 60.0) as notes:
        rows, summary = ablate(benchmark_configs(), tmp_path)
        checks = trend_checks(rows)
        notes.extend(f"{'ok' if c.ok else 'VIOLATED'} {c}" for c in checks)
        if not all(c.ok for c in checks):
            print("full grid (per seed):")
            for r in rows:
                print({k: r[k] for k in ("name", "seed", "IoU", "Pd", "Fa", "mAP50", "P", "R", "final_loss")})
            print("medians:")
            for m in summary:
                print(m)
        assert all(c.ok for c in checks)


def test_criterion_09_determinism(record_property, tmp_path):
    with criterion(record_property, 9, "bit-identical repeated training", 600.0) as notes:
        configs = [
            ExperimentConfig(model="segnet", stem="pconv", stem_ks=(4, 3), loss="sdm", seed=1),
            ExperimentConfig(model="boxnet", stem="pconv", stem_ks=(4, 3), loss="sdb", seed=1, label_jitter=0.5),
        ]
        for cfg in configs:
            a, _ = train(cfg, tmp_path / f"{cfg.model}-a")
            b, _ = train(cfg, tmp_path / f"{cfg.model}-b")
            assert a.final_metrics == b.final_metrics
            assert a.loss_trace == b.loss_trace
            assert (tmp_path / f"{cfg.model}-a" / "model.npz").exists()
            notes.append(f"{cfg.model} x2 identical ({cfg.epochs} epochs)")


def test_criterion_10_location_loss_spot_checks(record_property):
    with criterion(record_property, 10, "location loss spot checks", 1.0) as notes:
        def point(x, y):
            m = np.zeros((8, 8))
            m[y, x] = 1.0
            return m

        with precision(np.float64):
            radii = loss_ml(point(3, 0), point(6, 0)).item()
            angle = loss_ml(point(5, 0), point(0, 5)).item()
        assert abs(radii - 0.5) <= 1e-9
        assert abs(angle - 1.0) <= 1e-9
        notes.append(f"(3, 6) -> {radii!r}, pi/2 gap -> {angle!r}")
