"""Detection (P, R, mAP50) and segmentation (IoU, Pd, Fa) metrics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .losses.boxes import Box

TP_IOU_THRESHOLD = 0.45
AP_IOU_THRESHOLD = 0.5
CENTROID_MATCH_DISTANCE = 3.0
_EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


def _ratio(a: float, b: float) -> float:
    return a / b if b else 0.0


def box_iou(a: Box, b: Box) -> float:
    iw = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    ih = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


@dataclass(frozen=True)
class Detection:
    box: Box
    class_id: int
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    def sort_key(self):
        # descending confidence, ties broken by box coordinates then class
        b = self.box
        return (-self.confidence, b.x1, b.y1, b.x2, b.y2, self.class_id)


@dataclass
class Tallies:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "Tallies") -> "Tallies":
        return Tallies(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


GroundTruth = tuple  # (Box, class_id)


def _greedy_match(preds: Sequence[Detection], gts: Sequence[GroundTruth], threshold: float, strict: bool):
    """Flag each prediction (in confidence order) as TP or FP.

    A prediction claims the unmatched same-class ground truth of highest IoU
    if that IoU clears the threshold.
    """
    used = [False] * len(gts)
    flags = []
    for det in sorted(preds, key=Detection.sort_key):
        best, best_iou = -1, -1.0
        for j, (gbox, gcls) in enumerate(gts):
            if used[j] or gcls != det.class_id:
                continue
            ov = box_iou(det.box, gbox)
            if ov > best_iou:
                best, best_iou = j, ov
        hit = best >= 0 and (best_iou > threshold if strict else best_iou >= threshold)
        if hit:
            used[best] = True
        flags.append((det, hit))
    return flags, used


def match_detections(preds: Sequence[Detection], gts: Sequence[GroundTruth],
                     iou_threshold: float = TP_IOU_THRESHOLD) -> Tallies:
    """TP/FP/FN for one image; TP needs IoU strictly above the threshold."""
    flags, used = _greedy_match(preds, gts, iou_threshold, strict=True)
    tp = int(np.sum([hit for _, hit in flags]))
    return Tallies(tp, len(flags) - tp, len(gts) - tp)


def precision_recall(t: Tallies) -> tuple[float, float]:
    return _ratio(t.tp, t.tp + t.fp), _ratio(t.tp, t.tp + t.fn)


def average_precision(recall: np.ndarray, precision: np.ndarray, method: str = "all_point") -> float:
    recall = np.asarray(recall, dtype=np.float64)
    precision = np.asarray(precision, dtype=np.float64)
    if method == "11point":
        ap = 0.0
        for t in np.linspace(0.0, 1.0, 11):
            p = precision[recall >= t]
            ap += (p.max() if p.size else 0.0) / 11.0
        return float(ap)
    if method != "all_point":
        raise ValueError(f"unknown AP method {method!r}")
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    idx = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def class_ap(images: Sequence[tuple[Sequence[Detection], Sequence[GroundTruth]]], class_id: int,
             iou_threshold: float = AP_IOU_THRESHOLD, method: str = "all_point") -> float | None:
    """AP for one class over all images; None when the class has no ground truth."""
    npos = 0
    scored = []
    for i, (preds, gts) in enumerate(images):
        g = [(b, c) for b, c in gts if c == class_id]
        npos += len(g)
        p = [d for d in preds if d.class_id == class_id]
        flags, _ = _greedy_match(p, g, iou_threshold, strict=False)
        scored.extend((det.sort_key(), i, hit) for det, hit in flags)
    if npos == 0:
        return None
    scored.sort(key=lambda r: (r[0], r[1]))
    hits = np.array([h for _, _, h in scored], dtype=np.float64)
    if hits.size == 0:
        return 0.0
    tp = np.cumsum(hits)
    fp = np.cumsum(1.0 - hits)
    return average_precision(tp / npos, tp / (tp + fp), method)


def map50(images: Sequence[tuple[Sequence[Detection], Sequence[GroundTruth]]], classes: Iterable[int] | None = None,
          iou_threshold: float = AP_IOU_THRESHOLD, method: str = "all_point") -> float:
    """Mean AP over the classes that occur in the ground truth."""
    if classes is None:
        classes = sorted({c for _, gts in images for _, c in gts})
    aps = [class_ap(images, c, iou_threshold, method) for c in classes]
    aps = [a for a in aps if a is not None]
    return float(np.mean(aps)) if aps else 0.0


def detection_metrics(images, iou_threshold: float = TP_IOU_THRESHOLD) -> dict:
    total = Tallies()
    for preds, gts in images:
        total = total + match_detections(preds, gts, iou_threshold)
    p, r = precision_recall(total)
    return {"P": p, "R": r, "mAP50": map50(images), "tp": total.tp, "fp": total.fp, "fn": total.fn}


# -- segmentation -------------------------------------------------------------

@dataclass
class SegPrediction:
    prob: np.ndarray
    threshold: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")

    def binary(self) -> np.ndarray:
        return np.asarray(self.prob) > self.threshold


def components(mask: np.ndarray) -> list[np.ndarray]:
    """8-connected components as arrays of (row, col) coordinates."""
    labels, n = ndimage.label(mask, structure=_EIGHT_CONNECTED)
    return [np.argwhere(labels == i) for i in range(1, n + 1)]


@dataclass
class SegCounts:
    inter: int = 0
    union: int = 0
    t_pred: int = 0
    t_all: int = 0
    p_false: int = 0
    p_all: int = 0

    def __add__(self, o: "SegCounts") -> "SegCounts":
        return SegCounts(*(a + b for a, b in zip(self.astuple(), o.astuple())))

    def astuple(self):
        return (self.inter, self.union, self.t_pred, self.t_all, self.p_false, self.p_all)

    def metrics(self) -> tuple[float, float, float]:
        return _ratio(self.inter, self.union), _ratio(self.t_pred, self.t_all), _ratio(self.p_false, self.p_all)


def seg_counts(pred, gt, match_distance: float = CENTROID_MATCH_DISTANCE) -> SegCounts:
    pb = pred.binary() if isinstance(pred, SegPrediction) else np.asarray(pred).astype(bool)
    gb = np.asarray(gt).astype(bool)
    if pb.shape != gb.shape:
        raise ValueError(f"shape mismatch {pb.shape} vs {gb.shape}")
    pb = pb.reshape(pb.shape[-2:])
    gb = gb.reshape(gb.shape[-2:])
    inter = int(np.count_nonzero(pb & gb))
    union = int(np.count_nonzero(pb | gb))
    gcomp = components(gb)
    pcomp = components(pb)
    pcent = [c.mean(axis=0) for c in pcomp]
    matched = [False] * len(pcomp)
    t_pred = 0
    for gc in gcomp:
        gcen = gc.mean(axis=0)
        best, best_d = -1, np.inf
        for j, pc in enumerate(pcent):
            if matched[j]:
                continue
            d = float(np.linalg.norm(pc - gcen))
            if d < best_d:
                best, best_d = j, d
        if best >= 0 and best_d <= match_distance:
            matched[best] = True
            t_pred += 1
    p_false = int(np.sum([len(c) for c, m in zip(pcomp, matched) if not m]))
    return SegCounts(inter, union, t_pred, len(gcomp), p_false, int(gb.size))


def seg_metrics(pred, gt, match_distance: float = CENTROID_MATCH_DISTANCE) -> tuple[float, float, float]:
    """(IoU, Pd, Fa) for one image or, given sequences, aggregated over a set."""
    if isinstance(pred, (list, tuple)):
        total = SegCounts()
        for p, g in zip(pred, gt):
            total = total + seg_counts(p, g, match_distance)
        return total.metrics()
    return seg_counts(pred, gt, match_distance).metrics()


@dataclass
class SegAccumulator:
    threshold: float = 0.5
    match_distance: float = CENTROID_MATCH_DISTANCE
    counts: SegCounts = field(default_factory=SegCounts)

    def update(self, prob: np.ndarray, gt: np.ndarray) -> None:
        for p, g in zip(np.asarray(prob).reshape(-1, *prob.shape[-2:]), np.asarray(gt).reshape(-1, *gt.shape[-2:])):
            self.counts = self.counts + seg_counts(SegPrediction(p, self.threshold), g, self.match_distance)

    def result(self) -> dict:
        iou, pd, fa = self.counts.metrics()
        return {"IoU": iou, "Pd": pd, "Fa": fa}
