"""The standard desk-scale trend benchmark.

Three segmentation cells and four box cells, each over the same seeds and
the same seeded dataset (500 train / 125 validation images):

- stem: PConv(4,3) vs Conv, soft-IoU loss
- mask loss: SDM(0.5) vs soft-IoU, Conv stem
- box loss under label noise: SDB(0.5) vs CIoU, trained on clean and on
  jittered (iou_drop 0.5) labels, validated on clean labels
"""
from __future__ import annotations

from dataclasses import dataclass

from .ablate import medians
from .config import ExperimentConfig

SLACK = 0.01
JITTER = 0.5


def benchmark_configs(seeds=range(5), epochs: int = 30, n_images: int = 625, delta: float = 0.5) -> list[ExperimentConfig]:
    seg = {"model": "segnet", "epochs": epochs, "n_images": n_images}
    box = {"model": "boxnet", "epochs": epochs, "n_images": n_images}
    cells = [
        {**seg, "name": "seg-conv-softiou", "loss": "soft_iou"},
        {**seg, "name": "seg-pconv43-softiou", "stem": "pconv", "stem_ks": (4, 3), "loss": "soft_iou"},
        {**seg, "name": "seg-conv-sdm", "loss": "sdm", "delta": delta},
        {**box, "name": "box-ciou-clean", "loss": "ciou"},
        {**box, "name": "box-sdb-clean", "loss": "sdb", "delta": delta},
        {**box, "name": "box-ciou-jitter", "loss": "ciou", "label_jitter": JITTER},
        {**box, "name": "box-sdb-jitter", "loss": "sdb", "delta": delta, "label_jitter": JITTER},
    ]
    return [ExperimentConfig(**c, seed=s, jitter_seed=s) for c in cells for s in seeds]


@dataclass
class TrendCheck:
    label: str
    lhs: float
    rhs: float
    slack: float

    @property
    def ok(self) -> bool:
        return self.lhs >= self.rhs - self.slack

    def __str__(self) -> str:
        return f"{self.label}: {self.lhs:.4f} >= {self.rhs:.4f} - {self.slack}"


def trend_checks(rows: list[dict], slack: float = SLACK) -> list[TrendCheck]:
    def med(name, metric):
        group = [r for r in rows if r["name"] == name]
        if not group:
            raise KeyError(f"benchmark cell {name!r} missing")
        return medians(group)[0][metric]

    deg_sdb = med("box-sdb-clean", "mAP50") - med("box-sdb-jitter", "mAP50")
    deg_ciou = med("box-ciou-clean", "mAP50") - med("box-ciou-jitter", "mAP50")
    return [
        TrendCheck("median IoU, PConv(4,3) stem vs Conv stem", med("seg-pconv43-softiou", "IoU"),
                   med("seg-conv-softiou", "IoU"), slack),
        TrendCheck("median IoU, SDM(0.5) vs soft-IoU", med("seg-conv-sdm", "IoU"), med("seg-conv-softiou", "IoU"), slack),
        # degradation(SDB) <= degradation(CIoU), written as -deg_sdb >= -deg_ciou
        TrendCheck("negated mAP50 drop under jitter, SDB vs CIoU", -deg_sdb, -deg_ciou, slack),
    ]
