import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pconvlab.metrics import box_iou, components
from pconvlab.synth import (
    SMALL_TARGET_MAX_AREA,
    DatasetError,
    SceneSpec,
    dataset_hash,
    disk_area,
    generate,
    label_jitter,
    load_dataset,
    mask_radius,
    rle_decode,
    rle_encode,
    save_dataset,
)


def test_determinism_by_hash():
    spec = SceneSpec(seed=11)
    assert dataset_hash(generate(spec, 12)) == dataset_hash(generate(spec, 12))
    assert dataset_hash(generate(SceneSpec(seed=12), 12)) != dataset_hash(generate(spec, 12))
    # sample i depends only on (spec, i)
    assert dataset_hash(generate(spec, 12)[:5]) == dataset_hash(generate(spec, 5))


def _brute_area(sigma, fraction, cx, cy, size=41):
    ys, xs = np.mgrid[0:size, 0:size]
    v = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sigma ** 2))
    v[(xs - cx) ** 2 + (ys - cy) ** 2 > (3 * sigma) ** 2] = 0
    return int(np.count_nonzero(v > fraction))


def test_sigma_one_mask_area_is_small():
    worst = max(_brute_area(1.0, 0.25, 20 + ox, 20 + oy)
                for ox in np.linspace(0, 1, 11) for oy in np.linspace(0, 1, 11))
    assert worst <= SMALL_TARGET_MAX_AREA
    assert disk_area(1.0, 0.25) >= _brute_area(1.0, 0.25, 20, 20)
    ds = generate(SceneSpec(sigma=(1.0, 1.0), amplitude=(0.5, 0.5), seed=2), 20)
    assert all(t.area <= SMALL_TARGET_MAX_AREA for s in ds for t in s.targets)


def test_generated_areas_respect_small_regime():
    ds = generate(SceneSpec(seed=5), 60)
    for s in ds:
        for t, b in zip(s.targets, s.boxes):
            assert 0 < t.area <= SMALL_TARGET_MAX_AREA
            assert b.box.area <= (2 * mask_radius(t.sigma, 0.25) + 3) ** 2


def test_oversized_sigma_rejected():
    with pytest.raises(ValueError):
        SceneSpec(sigma=(1.0, 4.0))
    with pytest.raises(ValueError):
        SceneSpec(amplitude=(0.5, 0.2))


def test_zero_targets():
    ds = generate(SceneSpec(targets=(0, 0), seed=1), 4)
    for s in ds:
        assert s.boxes == [] and not s.mask.any() and s.targets == []
        assert s.image.std() > 0 and s.image.min() >= 0 and s.image.max() <= 1


def test_every_component_in_exactly_one_box_with_margin():
    ds = generate(SceneSpec(seed=7, bird_fraction=0.0), 80)
    for s in ds:
        comps = components(s.mask)
        assert len(comps) == len(s.boxes)
        for comp in comps:
            r0, c0 = comp.min(axis=0)
            r1, c1 = comp.max(axis=0) + 1
            inside = [b for b in s.boxes
                      if b.box.x1 <= c0 and b.box.y1 <= r0 and b.box.x2 >= c1 and b.box.y2 >= r1]
            assert len(inside) == 1
            b = inside[0].box
            h, w = s.mask.shape
            assert (b.x1, b.y1, b.x2, b.y2) == (max(c0 - 1, 0), max(r0 - 1, 0), min(c1 + 1, w), min(r1 + 1, h))


def test_bird_masks_can_be_omitted():
    ds = generate(SceneSpec(seed=3, bird_fraction=1.0, omit_bird_masks=True), 10)
    assert all(s.boxes and not s.mask.any() for s in ds)
    birds = generate(SceneSpec(seed=3, bird_fraction=1.0), 10)
    assert all(t.amplitude <= 0.55 * 0.6 + 1e-12 for s in birds for t in s.targets)


def test_mean_local_contrast_matches_amplitude():
    ds = generate(SceneSpec(seed=3), 300)
    measured, nominal = [], []
    for s in ds:
        h, w = s.image.shape
        ys, xs = np.mgrid[0:h, 0:w]
        for t in s.targets:
            cx, cy = t.center
            r = np.hypot(xs - cx, ys - cy)
            ring = (r >= 3 * t.sigma + 0.5) & (r < 3 * t.sigma + 2.5)
            measured.append(s.image[int(cy), int(cx)] - np.median(s.image[ring]))
            nominal.append(t.amplitude)
    assert len(measured) >= 500
    lo, hi = SceneSpec().amplitude
    assert all(lo * 0.6 <= a <= hi for a in nominal)
    assert abs(np.mean(measured) / np.mean(nominal) - 1) < 0.05


def test_jitter_zero_is_identity():
    ds = generate(SceneSpec(seed=4), 6)
    assert dataset_hash(label_jitter(ds, 0.0)) == dataset_hash(ds)
    with pytest.raises(ValueError):
        label_jitter(ds, 1.0)


def test_jitter_on_an_81_pixel_box():
    from pconvlab.losses import Box
    from pconvlab.synth import BoxLabel, Dataset, SceneSample

    sample = SceneSample(np.zeros((32, 32)), [BoxLabel(Box(10, 10, 19, 19), 0)], np.zeros((32, 32), np.uint8), [])
    for seed in range(50):
        out = label_jitter(Dataset([sample], None, 0), 0.5, seed=seed)[0].boxes[0].box
        assert box_iou(out, Box(10, 10, 19, 19)) >= 0.5
        assert math.dist(out.center, (14.5, 14.5)) < 1.0


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10 ** 6), drop=st.floats(0.05, 0.9))
def test_jitter_bounds(seed, drop):
    ds = generate(SceneSpec(seed=seed % 1000), 4)
    jit = label_jitter(ds, drop, seed=seed)
    for clean, noisy in zip(ds, jit):
        for a, b in zip(clean.boxes, noisy.boxes):
            assert box_iou(a.box, b.box) >= 1 - drop - 1e-12
            assert math.dist(a.box.center, b.box.center) < 1.0
        cc, nc = components(clean.mask), components(noisy.mask)
        assert len(cc) == len(nc)
        for comp in cc:
            cset = {tuple(p) for p in comp.tolist()}
            # the jittered component is the one overlapping the clean one
            match = [n for n in nc if cset & {tuple(p) for p in n.tolist()}]
            assert len(match) == 1
            nset = {tuple(p) for p in match[0].tolist()}
            assert len(cset & nset) / len(cset | nset) >= 1 - drop
            assert np.linalg.norm(comp.mean(axis=0) - match[0].mean(axis=0)) < 1.0


@settings(max_examples=100, deadline=None)
@given(bits=st.lists(st.booleans(), min_size=1, max_size=60))
def test_rle_round_trip(bits):
    m = np.array(bits, dtype=np.uint8).reshape(1, -1)
    assert np.array_equal(rle_decode(rle_encode(m), m.shape), m)


def test_save_load_save_is_byte_identical(tmp_path):
    ds = generate(SceneSpec(seed=9), 7)
    a, b = tmp_path / "a", tmp_path / "b"
    save_dataset(ds, a)
    loaded = load_dataset(a)
    assert len(loaded) == 7
    save_dataset(loaded, b)
    for rel in ["manifest.json"] + [f"{d}/{i:06d}.{e}" for i in range(7) for d, e in (("images", "png"), ("labels", "json"))]:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel
    for s, t in zip(ds, loaded):
        assert np.abs(s.image - t.image).max() <= 0.5 / 65535 + 1e-12
        assert np.array_equal(s.mask, t.mask)
        assert [x.box for x in s.boxes] == [x.box for x in t.boxes]
    assert json.loads((a / "manifest.json").read_text())["count"] == 7


def test_truncated_files_raise_structured_errors(tmp_path):
    save_dataset(generate(SceneSpec(seed=1), 3), tmp_path)
    img = tmp_path / "images" / "000001.png"
    img.write_bytes(img.read_bytes()[:40])
    with pytest.raises(DatasetError) as e:
        load_dataset(tmp_path)
    assert e.value.path == str(img) and "unreadable" in e.value.reason
    save_dataset(generate(SceneSpec(seed=1), 3), tmp_path)
    lab = tmp_path / "labels" / "000002.json"
    lab.write_text(lab.read_text()[:30])
    with pytest.raises(DatasetError) as e:
        load_dataset(tmp_path)
    assert e.value.path == str(lab)
    (tmp_path / "manifest.json").write_text("{")
    with pytest.raises(DatasetError):
        load_dataset(tmp_path)
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "nowhere")


def test_split_and_arrays():
    ds = generate(SceneSpec(seed=0), 10)
    train, val = ds.split(0.8)
    assert len(train) == 8 and len(val) == 2
    assert ds.images().shape == (10, 1, 32, 32)
    assert ds.masks().shape == (10, 1, 32, 32)
