"""Brute-force reference implementations shared by the metric and acceptance tests."""
import random
from collections import deque
from fractions import Fraction

import numpy as np

from pconvlab.losses import Box
from pconvlab.metrics import Detection


def frac_iou(a: Box, b: Box) -> Fraction:
    a = [Fraction(v) for v in (a.x1, a.y1, a.x2, a.y2)]
    b = [Fraction(v) for v in (b.x1, b.y1, b.x2, b.y2)]
    iw = max(Fraction(0), min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(Fraction(0), min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union else Fraction(0)


def staircase_ap(images, cls) -> Fraction | None:
    """Exact AP: walk the ranked list and add recall step times the precision envelope."""
    npos = sum(1 for _, gts in images for _, c in gts if c == cls)
    if npos == 0:
        return None
    ranked = sorted(((d.confidence, i, d) for i, (preds, _) in enumerate(images) for d in preds
                     if d.class_id == cls), key=lambda r: -r[0])
    used = {i: set() for i in range(len(images))}
    points = []
    tp = fp = 0
    for _, i, d in ranked:
        gts = [(j, b) for j, (b, c) in enumerate(images[i][1]) if c == cls]
        cands = [(frac_iou(d.box, b), j) for j, b in gts if j not in used[i]]
        best = max(cands, default=(Fraction(-1), -1), key=lambda t: (t[0], -t[1]))
        if best[0] >= Fraction(1, 2):
            used[i].add(best[1])
            tp += 1
        else:
            fp += 1
        points.append((Fraction(tp, npos), Fraction(tp, tp + fp)))
    ap = Fraction(0)
    prev = Fraction(0)
    for r, _ in points:
        if r > prev:
            ap += (r - prev) * max(p for rr, p in points if rr >= r)
            prev = r
    return ap


def random_instance(rng: random.Random):
    images = []
    conf = rng.sample(range(1, 1000), 24)
    for _ in range(rng.randint(1, 4)):
        gts, preds = [], []
        for _ in range(rng.randint(0, 3)):
            x, y, w, h = rng.randint(0, 20), rng.randint(0, 20), rng.randint(2, 8), rng.randint(2, 8)
            gts.append((Box(x, y, x + w, y + h), rng.randint(0, 1)))
        for _ in range(rng.randint(0, 6 - len(gts))):
            if gts and rng.random() < 0.7:
                b, c = rng.choice(gts)
                dx, dy = rng.randint(-2, 2), rng.randint(-2, 2)
                box = Box(b.x1 + dx, b.y1 + dy, b.x2 + dx + rng.randint(-1, 1), b.y2 + dy)
                if box.x2 <= box.x1:
                    box = b
            else:
                x, y = rng.randint(0, 20), rng.randint(0, 20)
                box, c = Box(x, y, x + 4, y + 4), rng.randint(0, 1)
            preds.append(Detection(box, c, conf.pop() / 1000))
        images.append((preds, gts))
    return images


def bfs_components(mask):
    """8-connected labelling by breadth-first search."""
    mask = np.asarray(mask, dtype=bool)
    seen = np.zeros_like(mask)
    comps = []
    h, w = mask.shape
    for r in range(h):
        for c in range(w):
            if mask[r, c] and not seen[r, c]:
                seen[r, c] = True
                queue, cells = deque([(r, c)]), []
                while queue:
                    y, x = queue.popleft()
                    cells.append((y, x))
                    for dy in (-1, 0, 1):
                        for dx in (-1, 0, 1):
                            yy, xx = y + dy, x + dx
                            if 0 <= yy < h and 0 <= xx < w and mask[yy, xx] and not seen[yy, xx]:
                                seen[yy, xx] = True
                                queue.append((yy, xx))
                comps.append(frozenset(cells))
    return comps


def oracle_seg(pred, gt, dist=3.0):
    p, g = np.asarray(pred, bool), np.asarray(gt, bool)
    pc, gc = bfs_components(p), bfs_components(g)
    centroid = lambda cells: np.array(sorted(cells), float).mean(axis=0)  # noqa: E731
    taken = set()
    hits = 0
    for comp in gc:
        gcen = centroid(comp)
        order = sorted(range(len(pc)), key=lambda j: (np.linalg.norm(centroid(pc[j]) - gcen), j))
        free = [j for j in order if j not in taken]
        if free and np.linalg.norm(centroid(pc[free[0]]) - gcen) <= dist:
            taken.add(free[0])
            hits += 1
    false = sum(len(c) for j, c in enumerate(pc) if j not in taken)
    return int((p & g).sum()), int((p | g).sum()), hits, len(gc), false, g.size


# pad (left, right, top, bottom) and kernel (height, width) of the four branches
PINWHEEL_BRANCHES = [
    ((1, 0, 0, "k"), ("k", 1)),
    ((0, "k", 0, 1), (1, "k")),
    ((0, 1, "k", 0), ("k", 1)),
    (("k", 0, 1, 0), (1, "k")),
]


def pinwheel_field(k: int) -> set[tuple[int, int]]:
    """Input cells feeding output (0, 0) of a stride-1 pinwheel layer, by index propagation.

    Branch output (u, v) reads padded cells (u + p, v + q) for p < kh, q < kw,
    i.e. input (u + p - top, v + q - left); the 2x2 fusion reads branch
    outputs (a, b) for a, b in {0, 1}.
    """
    cells = set()
    for pad, kernel in PINWHEEL_BRANCHES:
        left, _, top, _ = (k if v == "k" else v for v in pad)
        kh, kw = (k if v == "k" else v for v in kernel)
        for a in (0, 1):
            for b in (0, 1):
                for p in range(kh):
                    for q in range(kw):
                        cells.add((a + p - top, b + q - left))
    return cells
