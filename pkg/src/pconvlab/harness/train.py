"""Training loop, evaluation and model persistence."""
from __future__ import annotations

import json
import logging
import time
from pathlib import Path

import numpy as np

from ..autograd import ops
from ..autograd.tensor import NonFiniteError, Tape, Tensor, no_grad, precision
from ..losses import boxes as box_losses
from ..losses import masks as mask_losses
from ..losses.boxes import Box, LossReport, ScaleContext
from ..metrics import Detection, SegAccumulator, detection_metrics
from ..nn import SGD
from ..synth import Dataset, SceneSpec, generate, label_jitter, load_dataset
from .config import EpochLog, ExperimentConfig, RunReport
from .models import build_model

log = logging.getLogger(__name__)

PRIMARY_METRIC = {"segnet": "IoU", "boxnet": "mAP50"}
_DATASET_DEFAULTS = {
    "segnet": {},
    "boxnet": {"targets": (1, 1), "bird_fraction": 0.0},
}


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, step: int, detail: str):
        super().__init__(f"non-finite loss at epoch {epoch}, step {step}: {detail}")
        self.epoch = epoch
        self.step = step


def load_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """Train/validation split (fixed 4:1 by default) with optional label jitter on the train part."""
    if cfg.data_path:
        data = load_dataset(cfg.data_path)
    else:
        spec = SceneSpec.from_dict({**_DATASET_DEFAULTS[cfg.model], **cfg.dataset, "seed": cfg.data_seed})
        data = generate(spec, cfg.n_images)
    train, val = data.split(cfg.train_fraction)
    if cfg.label_jitter > 0:
        train = label_jitter(train, cfg.label_jitter, cfg.jitter_seed)
    return train, val


def box_targets(data: Dataset) -> np.ndarray:
    out = []
    for i, s in enumerate(data):
        if len(s.boxes) != 1:
            raise ValueError(f"sample {i} has {len(s.boxes)} boxes; the box regressor needs exactly one")
        out.append(s.boxes[0].box.as_array())
    return np.array(out)


def _two_part(scale_fn, loc_fn):
    def loss(pred, gt) -> LossReport:
        ls = scale_fn(pred, gt)
        ll = loc_fn(pred, gt)
        ones = np.ones(ls.shape)
        return LossReport((ls + ll).mean(), ls.data.copy(), ll.data.copy(), ones, ones.copy())

    return loss


def _one_part(fn):
    def loss(pred, gt) -> LossReport:
        v = fn(pred, gt)
        ones = np.ones(v.shape)
        return LossReport(v.mean(), v.data.copy(), np.zeros(v.shape), ones, ones.copy())

    return loss


def make_loss(cfg: ExperimentConfig):
    """Map a config to ``fn(prediction, target) -> LossReport``."""
    ctx = ScaleContext(delta=cfg.delta)
    table = {
        "soft_iou": mask_losses.soft_iou_report,
        "dice": mask_losses.dice_report,
        "sls": mask_losses.sls_loss,
        "sdm": lambda p, g: mask_losses.sdm_loss(p, g, ctx),
        "iou": _one_part(box_losses.iou_loss),
        "giou": _one_part(box_losses.giou_loss),
        "diou": _two_part(box_losses.iou_loss, box_losses.loss_bl),
        "ciou": _two_part(box_losses.loss_bs, box_losses.loss_bl),
        "sdb": lambda p, g: box_losses.sdb_loss(p, g, ctx),
    }
    return table[cfg.loss]


def _check_decomposition(rep: LossReport, epoch: int, step: int) -> None:
    total = float(rep.total.item())
    recombined = float(np.mean(rep.recombined()))
    if not np.isclose(total, recombined, rtol=1e-5, atol=1e-6):
        raise AssertionError(f"epoch {epoch} step {step}: total {total} != sum of parts {recombined}")


def predict(model, images: np.ndarray, batch: int = 64):
    """Inference in eval mode; masks as probabilities, boxes as (boxes, confidence)."""
    was_training = model.training
    model.eval()
    outs = []
    try:
        with no_grad():
            for i in range(0, len(images), batch):
                x = Tensor(images[i:i + batch])
                outs.append(model.predict(x) if model.kind == "boxnet" else model(x).data)
    finally:
        model.train(was_training)
    if model.kind == "boxnet":
        return np.concatenate([o[0] for o in outs]), np.concatenate([o[1] for o in outs])
    return np.concatenate(outs)


def evaluate(model, data: Dataset, threshold: float = 0.5) -> dict:
    """Metrics for a model exposing ``kind`` and either ``__call__`` (masks) or ``predict`` (boxes)."""
    images = data.images().astype(np.float32)
    if model.kind == "segnet":
        acc = SegAccumulator(threshold=threshold)
        acc.update(predict(model, images), data.masks())
        return acc.result()
    boxes, conf = predict(model, images)
    pairs = []
    for s, b, c in zip(data, boxes, conf):
        det = Detection(Box(*map(float, b)), 0, float(np.clip(c, 0.0, 1.0)))
        pairs.append(([det], [(g.box, g.class_id) for g in s.boxes]))
    m = detection_metrics(pairs)
    return {k: m[k] for k in ("P", "R", "mAP50")}


def train(cfg: ExperimentConfig, out_dir=None) -> tuple[RunReport, object]:
    """Train one model; returns the report and the best-on-validation model."""
    start = time.perf_counter()
    with precision(np.float32), ops.conv_algo(cfg.conv_algo):
        train_set, val_set = load_data(cfg)
        model = build_model(cfg.model, cfg.stem, cfg.stem_ks, cfg.width, seed=cfg.seed)
        params = model.parameters()
        opt = SGD(params, cfg.learning_rate, cfg.momentum)
        loss_fn = make_loss(cfg)
        order_rng = np.random.default_rng([cfg.seed, 1])
        images = train_set.images().astype(np.float32)
        targets = box_targets(train_set) if cfg.model == "boxnet" else train_set.masks()
        metric_key = PRIMARY_METRIC[cfg.model]
        best_state, best_metric, best_epoch = None, -np.inf, 0
        logs = []
        step = 0
        for epoch in range(1, cfg.epochs + 1):
            model.train()
            order = order_rng.permutation(len(images))
            sums = np.zeros(5)
            count = 0
            for i in range(0, len(order), cfg.batch_size):
                idx = order[i:i + cfg.batch_size]
                step += 1
                try:
                    with Tape() as tape:
                        rep = loss_fn(model(Tensor(images[idx])), targets[idx])
                        if not np.isfinite(rep.total.item()):
                            raise TrainingDiverged(epoch, step, f"loss {rep.total.item()}")
                        tape.backward(rep.total, params)
                except NonFiniteError as e:
                    log.error("diverged at epoch %d step %d: %s", epoch, step, e)
                    raise TrainingDiverged(epoch, step, str(e)) from e
                _check_decomposition(rep, epoch, step)
                opt.step()
                opt.zero_grad()
                n = len(idx)
                d = rep.as_dict()
                sums += n * np.array([d["total"], d["scale_part"], d["location_part"], d["beta_scale"],
                                      d["beta_location"]])
                count += n
            metrics = evaluate(model, val_set, cfg.threshold)
            mean = sums / count
            logs.append(EpochLog(epoch, *map(float, mean), float(metrics[metric_key])))
            log.info("epoch %d loss %.5f val %s %.4f", epoch, mean[0], metric_key, metrics[metric_key])
            if metrics[metric_key] > best_metric:
                best_metric, best_epoch, best_state = metrics[metric_key], epoch, model.state_dict()
        model.load_state_dict(best_state)
        final = evaluate(model, val_set, cfg.threshold)
    report = RunReport(cfg.to_dict(), cfg.seed, logs, {k: float(v) for k, v in final.items()}, best_epoch,
                       time.perf_counter() - start, model.descriptor())
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_model(model, out / "model.npz")
        report.save(out / "report.json")
    return report, model


def save_model(model, path) -> None:
    state = model.state_dict()
    np.savez(path, __descriptor__=np.array(json.dumps(model.descriptor())), **state)


def load_model(path):
    with np.load(path) as z:
        desc = json.loads(str(z["__descriptor__"]))
        state = {k: z[k] for k in z.files if k != "__descriptor__"}
    model = build_model(desc["model"], desc["stem"], desc["stem_ks"], desc["width"])
    model.load_state_dict(state)
    return model
