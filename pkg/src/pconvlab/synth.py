"""Seeded synthetic infrared small-target scenes.

Each frame is a smooth background gradient plus broad clutter blobs and pixel
noise, with a few isotropic Gaussian targets on top. A target's mask is the
set of pixels where its own contribution exceeds ``mask_fraction`` of its
amplitude; its box is the tight bound of that mask plus a fixed margin.

On disk a dataset is ``images/NNNNNN.png`` (16-bit grey), ``labels/NNNNNN.json``
(boxes, run-length mask, target metadata) and ``manifest.json``.
"""
from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .losses.boxes import Box
from .metrics import box_iou

CLASSES = ("uav", "bird")
SMALL_TARGET_MAX_AREA = 81
_EIGHT = np.ones((3, 3), dtype=int)


class DatasetError(ValueError):
    def __init__(self, path, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = str(path)
        self.reason = reason


@dataclass(frozen=True)
class SceneSpec:
    height: int = 32
    width: int = 32
    targets: tuple[int, int] = (1, 3)
    amplitude: tuple[float, float] = (0.25, 0.55)
    sigma: tuple[float, float] = (0.6, 1.6)
    clutter_density: float = 2.0
    clutter_amplitude: tuple[float, float] = (0.03, 0.15)
    clutter_sigma: tuple[float, float] = (2.0, 5.0)
    background_level: tuple[float, float] = (0.15, 0.3)
    gradient_strength: float = 0.1
    noise_std: float = 0.02
    bird_fraction: float = 0.3
    bird_amplitude_scale: float = 0.6
    omit_bird_masks: bool = False
    mask_fraction: float = 0.25
    box_margin: int = 1
    large_fraction: float = 0.0
    large_sigma: tuple[float, float] = (3.0, 4.0)
    max_retries: int = 50
    seed: int = 0

    def __post_init__(self):
        for name in ("targets", "amplitude", "sigma", "clutter_amplitude", "clutter_sigma",
                     "background_level", "large_sigma"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} range is empty: {(lo, hi)}")
        if self.targets[0] < 0:
            raise ValueError("target count must be >= 0")
        if self.height < 8 or self.width < 8:
            raise ValueError("image must be at least 8x8")
        if not 0 < self.mask_fraction < 1:
            raise ValueError("mask_fraction must lie in (0, 1)")
        if not 0 <= self.large_fraction <= 1 or not 0 <= self.bird_fraction <= 1:
            raise ValueError("fractions must lie in [0, 1]")
        if self.sigma[0] <= 0:
            raise ValueError("sigma must be positive")
        if disk_area(self.sigma[1], self.mask_fraction) > SMALL_TARGET_MAX_AREA:
            raise ValueError(f"sigma up to {self.sigma[1]} can exceed the {SMALL_TARGET_MAX_AREA}-pixel small regime")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        for k, v in d.items():
            if isinstance(v, list):
                d[k] = tuple(v)
        return cls(**d)


def mask_radius(sigma: float, fraction: float) -> float:
    # exp(-r^2 / 2 sigma^2) > fraction
    return sigma * math.sqrt(2.0 * math.log(1.0 / fraction))


def disk_area(sigma: float, fraction: float) -> int:
    """Worst-case pixel count of a thresholded target over sub-pixel centre offsets."""
    r = mask_radius(sigma, fraction)
    worst = 0
    span = int(math.ceil(r)) + 2
    ys, xs = np.mgrid[-span:span + 1, -span:span + 1]
    for oy in np.linspace(0, 0.5, 6):
        for ox in np.linspace(0, 0.5, 6):
            worst = max(worst, int(np.count_nonzero((ys - oy) ** 2 + (xs - ox) ** 2 < r * r)))
    return worst


@dataclass
class TargetMeta:
    center: tuple[float, float]  # (x, y) in pixel-index coordinates
    amplitude: float
    sigma: float
    area: int
    class_id: int


@dataclass
class BoxLabel:
    box: Box
    class_id: int


@dataclass
class SceneSample:
    image: np.ndarray
    boxes: list[BoxLabel]
    mask: np.ndarray
    targets: list[TargetMeta] = field(default_factory=list)


@dataclass
class Dataset:
    samples: list[SceneSample]
    spec: SceneSpec | None = None
    seed: int | None = None

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return Dataset(self.samples[i], self.spec, self.seed)
        return self.samples[i]

    def __iter__(self):
        return iter(self.samples)

    def images(self) -> np.ndarray:
        return np.stack([s.image for s in self.samples])[:, None]

    def masks(self) -> np.ndarray:
        return np.stack([s.mask for s in self.samples])[:, None]

    def split(self, ratio: float = 0.8) -> tuple["Dataset", "Dataset"]:
        cut = int(round(len(self.samples) * ratio))
        return self[:cut], self[cut:]


def _gaussian(h, w, cx, cy, sigma, clip_sigmas=3.0):
    ys, xs = np.mgrid[0:h, 0:w]
    r2 = (xs - cx) ** 2 + (ys - cy) ** 2
    out = np.exp(-r2 / (2.0 * sigma * sigma))
    out[r2 > (clip_sigmas * sigma) ** 2] = 0.0
    return out


def _background(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    h, w = spec.height, spec.width
    ys, xs = np.mgrid[0:h, 0:w]
    level = rng.uniform(*spec.background_level)
    ang = rng.uniform(0, 2 * math.pi)
    grad = spec.gradient_strength * (math.cos(ang) * (xs / w - 0.5) + math.sin(ang) * (ys / h - 0.5))
    bg = level + grad
    for _ in range(rng.poisson(spec.clutter_density)):
        bg = bg + rng.uniform(*spec.clutter_amplitude) * _gaussian(
            h, w, rng.uniform(0, w), rng.uniform(0, h), rng.uniform(*spec.clutter_sigma), clip_sigmas=np.inf
        )
    return bg


def _place(spec: SceneSpec, rng: np.random.Generator):
    h, w = spec.height, spec.width
    n = int(rng.integers(spec.targets[0], spec.targets[1] + 1))
    placed = []
    for _ in range(n):
        large = rng.uniform() < spec.large_fraction
        sigma = rng.uniform(*(spec.large_sigma if large else spec.sigma))
        r = mask_radius(sigma, spec.mask_fraction)
        edge = r + spec.box_margin + 1
        if 2 * edge >= min(h, w):
            return None
        for _ in range(spec.max_retries):
            cx = float(rng.integers(int(math.ceil(edge)), int(w - math.ceil(edge))))
            cy = float(rng.integers(int(math.ceil(edge)), int(h - math.ceil(edge))))
            ok = all(math.hypot(cx - px, cy - py) > r + pr + 2 * spec.box_margin + 2 for px, py, _, pr in placed)
            if ok:
                placed.append((cx, cy, sigma, r))
                break
        else:
            return None
    return placed


def _sample(spec: SceneSpec, index: int) -> SceneSample:
    attempt = 0
    while True:
        rng = np.random.default_rng([spec.seed, index, attempt])
        placed = _place(spec, rng)
        if placed is not None:
            break
        attempt += 1
        if attempt > 100:
            raise RuntimeError(f"could not place targets for sample {index}")
    h, w = spec.height, spec.width
    image = _background(spec, rng)
    mask = np.zeros((h, w), dtype=np.uint8)
    boxes, metas = [], []
    for cx, cy, sigma, _ in placed:
        cls = 1 if rng.uniform() < spec.bird_fraction else 0
        amp = rng.uniform(*spec.amplitude) * (spec.bird_amplitude_scale if cls == 1 else 1.0)
        bump = _gaussian(h, w, cx, cy, sigma)
        image = image + amp * bump
        tmask = bump > spec.mask_fraction
        rows, cols = np.nonzero(tmask)
        m = spec.box_margin
        box = Box(float(max(cols.min() - m, 0)), float(max(rows.min() - m, 0)),
                  float(min(cols.max() + 1 + m, w)), float(min(rows.max() + 1 + m, h)))
        boxes.append(BoxLabel(box, cls))
        if not (cls == 1 and spec.omit_bird_masks):
            mask[tmask] = 1
        metas.append(TargetMeta((cx, cy), float(amp), float(sigma), int(tmask.sum()), cls))
    image = image + rng.normal(0.0, spec.noise_std, size=(h, w))
    image = np.clip(image, 0.0, 1.0)
    return SceneSample(image, boxes, mask, metas)


def generate(spec: SceneSpec, n: int) -> Dataset:
    """Draw ``n`` scenes; sample ``i`` depends only on (spec, i)."""
    return Dataset([_sample(spec, i) for i in range(n)], spec, spec.seed)


# -- label jitter -------------------------------------------------------------

def _jitter_box(box: Box, drop: float, rng, w, h) -> Box:
    cx, cy = box.center
    for attempt in range(40):
        shrink = 0.9 ** attempt  # back off toward the clean label
        r = 0.9 * math.sqrt(rng.uniform()) * shrink
        a = rng.uniform(0, 2 * math.pi)
        sx = math.exp(rng.uniform(math.log(1 - drop), -math.log(1 - drop)) * shrink)
        sy = math.exp(rng.uniform(math.log(1 - drop), -math.log(1 - drop)) * shrink)
        cand = Box.from_center(cx + r * math.cos(a), cy + r * math.sin(a), box.w * sx, box.h * sy)
        if box_iou(cand, box) >= 1 - drop:
            return cand
    return box


def _centroid(pix: np.ndarray) -> np.ndarray:
    return np.argwhere(pix).mean(axis=0)


def _jitter_component(comp: np.ndarray, others: np.ndarray, drop: float, rng) -> np.ndarray:
    base_c = _centroid(comp)
    grown = ndimage.binary_dilation(comp)
    shrunk = ndimage.binary_erosion(comp)
    for attempt in range(20):
        q = rng.uniform(0.2, 1.0) * 0.85 ** attempt
        if rng.uniform() < 0.5:
            ring = grown & ~comp & ~ndimage.binary_dilation(others, structure=_EIGHT)
            cand = comp | (ring & (rng.uniform(size=comp.shape) < q))
        else:
            edge = comp & ~shrunk
            cand = comp & ~(edge & (rng.uniform(size=comp.shape) < q))
        if not cand.any():
            continue
        if ndimage.label(cand, structure=_EIGHT)[1] != 1:
            continue
        inter = np.count_nonzero(cand & comp)
        union = np.count_nonzero(cand | comp)
        if inter / union < 1 - drop:
            continue
        if np.linalg.norm(_centroid(cand) - base_c) >= 1.0:
            continue
        return cand
    return comp


def label_jitter(dataset: Dataset, iou_drop: float, seed: int = 0) -> Dataset:
    """Perturb labels the way a hurried annotator would.

    Every jittered box and mask component keeps IoU >= 1 - iou_drop with its
    clean version and moves its centroid by less than one pixel. The number
    of mask components is preserved.
    """
    if not 0 <= iou_drop < 1:
        raise ValueError("iou_drop must lie in [0, 1)")
    out = []
    for i, s in enumerate(dataset):
        if iou_drop == 0:
            out.append(dataclasses.replace(s, boxes=list(s.boxes), mask=s.mask.copy()))
            continue
        rng = np.random.default_rng([seed, i])
        h, w = s.mask.shape
        boxes = [BoxLabel(_jitter_box(b.box, iou_drop, rng, w, h), b.class_id) for b in s.boxes]
        labels, n = ndimage.label(s.mask, structure=_EIGHT)
        mask = np.zeros_like(s.mask, dtype=bool)
        for k in range(1, n + 1):
            comp = labels == k
            others = (labels > 0) & ~comp | mask
            mask |= _jitter_component(comp, others, iou_drop, rng)
        if ndimage.label(mask, structure=_EIGHT)[1] != n:
            mask = s.mask.astype(bool)
        out.append(dataclasses.replace(s, boxes=boxes, mask=mask.astype(np.uint8)))
    return Dataset(out, dataset.spec, dataset.seed)


# -- persistence --------------------------------------------------------------

def rle_encode(mask: np.ndarray) -> list[int]:
    flat = np.asarray(mask, dtype=bool).reshape(-1)
    change = np.flatnonzero(np.diff(flat.astype(np.int8))) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        runs = [0] + runs
    return runs


def rle_decode(runs: Sequence[int], shape) -> np.ndarray:
    flat = np.zeros(int(np.prod(shape)), dtype=np.uint8)
    pos, val = 0, 0
    for r in runs:
        if r < 0 or pos + r > flat.size:
            raise ValueError("run lengths exceed mask size")
        flat[pos:pos + r] = val
        pos += r
        val ^= 1
    if pos != flat.size:
        raise ValueError(f"run lengths cover {pos} of {flat.size} pixels")
    return flat.reshape(shape)


def _png_bytes(image: np.ndarray) -> bytes:
    q = np.round(np.clip(image, 0.0, 1.0) * 65535.0).astype(np.uint16)
    buf = io.BytesIO()
    Image.fromarray(q).save(buf, format="PNG")
    return buf.getvalue()


def _label_json(s: SceneSample) -> str:
    d = {
        "boxes": [
            {"x1": b.box.x1, "y1": b.box.y1, "x2": b.box.x2, "y2": b.box.y2,
             "class_id": b.class_id, "class": CLASSES[b.class_id]}
            for b in s.boxes
        ],
        "mask": {"shape": list(s.mask.shape), "rle": rle_encode(s.mask)},
        "targets": [
            {"center": list(t.center), "amplitude": t.amplitude, "sigma": t.sigma, "area": t.area,
             "class_id": t.class_id}
            for t in s.targets
        ],
    }
    return json.dumps(d, sort_keys=True, indent=1)


def save_dataset(dataset: Dataset, root) -> Path:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    digest = hashlib.sha256()
    for i, s in enumerate(dataset):
        png = _png_bytes(s.image)
        lab = _label_json(s).encode()
        (root / "images" / f"{i:06d}.png").write_bytes(png)
        (root / "labels" / f"{i:06d}.json").write_bytes(lab)
        digest.update(png)
        digest.update(lab)
    manifest = {
        "spec": dataset.spec.to_dict() if dataset.spec is not None else None,
        "seed": dataset.seed,
        "count": len(dataset),
        "content_hash": digest.hexdigest(),
    }
    (root / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    return root


def _load_sample(img_path: Path, lab_path: Path) -> SceneSample:
    try:
        with Image.open(img_path) as im:
            im.load()
            arr = np.array(im)
    except Exception as e:  # PIL raises a zoo of types for corrupt files
        raise DatasetError(img_path, f"unreadable image ({e})") from e
    if arr.ndim != 2:
        raise DatasetError(img_path, f"expected a single-channel image, got shape {arr.shape}")
    image = arr.astype(np.float64) / 65535.0
    try:
        d = json.loads(lab_path.read_text())
        boxes = [BoxLabel(Box(b["x1"], b["y1"], b["x2"], b["y2"]), int(b["class_id"])) for b in d["boxes"]]
        mask = rle_decode(d["mask"]["rle"], tuple(d["mask"]["shape"]))
        targets = [
            TargetMeta(tuple(t["center"]), t["amplitude"], t["sigma"], t["area"], t["class_id"])
            for t in d.get("targets", [])
        ]
    except FileNotFoundError as e:
        raise DatasetError(lab_path, "missing label file") from e
    except (ValueError, KeyError, TypeError) as e:
        raise DatasetError(lab_path, f"malformed label ({e})") from e
    if mask.shape != image.shape:
        raise DatasetError(lab_path, f"mask shape {mask.shape} != image shape {image.shape}")
    return SceneSample(image, boxes, mask, targets)


def load_dataset(root) -> Dataset:
    """Read a dataset directory (also accepts externally converted real data)."""
    root = Path(root)
    mpath = root / "manifest.json"
    try:
        manifest = json.loads(mpath.read_text())
        count = int(manifest["count"])
    except FileNotFoundError as e:
        raise DatasetError(mpath, "missing manifest") from e
    except (ValueError, KeyError, TypeError) as e:
        raise DatasetError(mpath, f"malformed manifest ({e})") from e
    samples = []
    for i in range(count):
        img = root / "images" / f"{i:06d}.png"
        if not img.exists():
            raise DatasetError(img, "missing image file")
        samples.append(_load_sample(img, root / "labels" / f"{i:06d}.json"))
    spec = SceneSpec.from_dict(manifest["spec"]) if manifest.get("spec") else None
    return Dataset(samples, spec, manifest.get("seed"))


def dataset_hash(dataset: Dataset) -> str:
    h = hashlib.sha256()
    for s in dataset:
        h.update(_png_bytes(s.image))
        h.update(_label_json(s).encode())
    return h.hexdigest()
