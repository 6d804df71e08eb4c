"""Ablation grids: expand, run every cell, tabulate per-seed rows and medians."""
from __future__ import annotations

import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .tables import write_csv
from .train import train

COLUMNS = [
    "name", "model", "stem", "stem_ks", "loss", "delta", "label_jitter", "seed", "epochs",
    "first_loss", "final_loss", "loss_reduction", "learning_ok",
    "IoU", "Pd", "Fa", "P", "R", "mAP50", "best_epoch", "wall_time",
]
CELL_KEYS = ["model", "stem", "stem_ks", "loss", "delta", "label_jitter"]
METRIC_KEYS = ["IoU", "Pd", "Fa", "P", "R", "mAP50", "final_loss", "loss_reduction"]
LEARNING_THRESHOLD = 0.5
BASELINE_LOSS = {"segnet": "soft_iou", "boxnet": "ciou"}
DYNAMIC_LOSS = {"segnet": "sdm", "boxnet": "sdb"}


def expand_grid(grid) -> list[ExperimentConfig]:
    """Turn a grid description into configs.

    ``grid`` is either a list of config dicts or a dict with optional keys
    ``base`` (shared fields), ``cells`` (list of per-cell overrides),
    ``axes`` (field -> list of values; a value may be a dict of fields) and
    ``seeds``. The result is cells x product(axes) x seeds, in that order.
    """
    if isinstance(grid, list):
        return [ExperimentConfig.from_dict(d) for d in grid]
    base = dict(grid.get("base", {}))
    cells = grid.get("cells") or [{}]
    axes = grid.get("axes", {})
    seeds = grid.get("seeds", [base.get("seed", 0)])
    configs = []
    for cell in cells:
        for combo in itertools.product(*[[(k, v) for v in vals] for k, vals in axes.items()]):
            d = {**base, **cell}
            for k, v in combo:
                d.update(v if isinstance(v, dict) else {k: v})
            for s in seeds:
                configs.append(ExperimentConfig.from_dict({**d, "seed": s}))
    return configs


def design_grid(model: str, base: dict | None = None, seeds=(0, 1, 2), pconv_ks=(4, 3), delta: float = 0.5) -> dict:
    """The 2x2 stem-by-loss design, baseline (conv, plain loss) cell included."""
    return {
        "base": {**(base or {}), "model": model, "delta": delta},
        "axes": {
            "stem": [{"stem": "conv"}, {"stem": "pconv", "stem_ks": list(pconv_ks)}],
            "loss": [BASELINE_LOSS[model], DYNAMIC_LOSS[model]],
        },
        "seeds": list(seeds),
    }


def cell_name(cfg: ExperimentConfig) -> str:
    stem = "conv" if cfg.stem == "conv" else "pconv" + "".join(map(str, cfg.stem_ks))
    name = f"{cfg.model}-{stem}-{cfg.loss}"
    if cfg.loss in DYNAMIC_LOSS.values():
        name += f"-d{cfg.delta:g}"
    if cfg.label_jitter:
        name += f"-j{cfg.label_jitter:g}"
    return name


def _row(cfg: ExperimentConfig, report) -> dict:
    m = report.final_metrics
    return {
        "name": cfg.name or cell_name(cfg),
        "model": cfg.model,
        "stem": cfg.stem,
        "stem_ks": list(cfg.stem_ks) if cfg.stem == "pconv" else None,
        "loss": cfg.loss,
        "delta": cfg.delta if cfg.loss in ("sdb", "sdm") else None,
        "label_jitter": cfg.label_jitter,
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "first_loss": report.epochs[0].loss,
        "final_loss": report.epochs[-1].loss,
        "loss_reduction": report.loss_reduction,
        "learning_ok": report.loss_reduction >= LEARNING_THRESHOLD,
        **{k: m.get(k) for k in ("IoU", "Pd", "Fa", "P", "R", "mAP50")},
        "best_epoch": report.best_epoch,
        "wall_time": report.wall_time,
    }


def _run(args) -> dict:
    cfg, cell_dir = args
    report, _ = train(cfg, cell_dir)
    return _row(cfg, report)


def _key(row) -> tuple:
    return tuple(tuple(row[k]) if isinstance(row[k], list) else row[k] for k in CELL_KEYS)


def medians(rows: list[dict]) -> list[dict]:
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault(_key(r), []).append(r)
    out = []
    for rs in groups.values():
        agg = {k: rs[0][k] for k in CELL_KEYS}
        agg["seeds"] = len(rs)
        for k in METRIC_KEYS:
            vals = [r[k] for r in rs if r[k] is not None]
            agg[k] = float(np.median(vals)) if vals else None
        agg["learning_ok"] = all(r["learning_ok"] for r in rs)
        out.append(agg)
    return out


def ablate(configs: list[ExperimentConfig], out_dir, jobs: int = 1) -> tuple[list[dict], list[dict]]:
    """Run every config (cells in disjoint subdirectories) and write results.csv/json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(cfg, out / "runs" / f"{i:03d}") for i, cfg in enumerate(configs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run, tasks))
    else:
        rows = [_run(t) for t in tasks]
    summary = medians(rows)
    write_csv(out / "results.csv", COLUMNS, rows)
    (out / "results.json").write_text(json.dumps({"columns": COLUMNS, "rows": rows, "medians": summary}, indent=1))
    return rows, summary
