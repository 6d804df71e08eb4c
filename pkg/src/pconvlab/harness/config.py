"""Experiment configuration and run reports (JSON round-trippable)."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

SEG_LOSSES = ("soft_iou", "dice", "sls", "sdm")
BOX_LOSSES = ("iou", "giou", "diou", "ciou", "sdb")
DEFAULT_LR = {"segnet": 0.05, "boxnet": 0.01}


@dataclass
class ExperimentConfig:
    model: str = "segnet"
    stem: str = "conv"
    stem_ks: tuple[int, int] = (3, 3)
    loss: str = "soft_iou"
    delta: float = 0.5
    lr: float | None = None
    momentum: float = 0.9
    batch_size: int = 8
    epochs: int = 30
    seed: int = 0
    width: int = 8
    # data: either a directory written by save_dataset or a generator spec
    data_path: str | None = None
    dataset: dict = field(default_factory=dict)
    n_images: int = 250
    data_seed: int = 0
    train_fraction: float = 0.8
    label_jitter: float = 0.0
    jitter_seed: int = 0
    threshold: float = 0.5
    conv_algo: str = "gemm"
    name: str = ""

    def __post_init__(self):
        self.stem_ks = tuple(int(k) for k in self.stem_ks)
        if self.model not in DEFAULT_LR:
            raise ValueError(f"unknown model {self.model!r}")
        allowed = SEG_LOSSES if self.model == "segnet" else BOX_LOSSES
        if self.loss not in allowed:
            raise ValueError(f"loss {self.loss!r} does not fit model {self.model!r}; use one of {allowed}")
        if self.stem not in ("conv", "pconv"):
            raise ValueError(f"stem must be conv or pconv, got {self.stem!r}")
        if not 0 < self.delta <= 1:
            raise ValueError("delta must lie in (0, 1]")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")
        if not 0 <= self.label_jitter < 1:
            raise ValueError("label_jitter must lie in [0, 1)")

    @property
    def learning_rate(self) -> float:
        return self.lr if self.lr is not None else DEFAULT_LR[self.model]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["stem_ks"] = list(self.stem_ks)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def cell(self) -> tuple:
        """Identity of the ablation cell, i.e. everything except the seed."""
        return (self.model, self.stem, self.stem_ks if self.stem == "pconv" else (), self.loss,
                self.delta if self.loss in ("sdb", "sdm") else None, self.label_jitter)


@dataclass
class EpochLog:
    epoch: int
    loss: float
    scale_part: float
    location_part: float
    beta_scale: float
    beta_location: float
    val_metric: float


@dataclass
class RunReport:
    config: dict
    seed: int
    epochs: list[EpochLog]
    final_metrics: dict
    best_epoch: int
    wall_time: float
    model: dict = field(default_factory=dict)

    @property
    def loss_trace(self) -> list[float]:
        return [e.loss for e in self.epochs]

    @property
    def loss_reduction(self) -> float:
        first, last = self.epochs[0].loss, self.epochs[-1].loss
        return 1.0 - last / first if first else 0.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        d = dict(d)
        d["epochs"] = [EpochLog(**e) for e in d["epochs"]]
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "RunReport":
        return cls.from_dict(json.loads(Path(path).read_text()))
