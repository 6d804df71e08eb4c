"""Parameter-count and receptive-field sweep over (k, c1, c2)."""
from __future__ import annotations

from ..pconv import ConvBlockSpec, PConvSpec, count_params, pconv_param_formula, receptive_field

COLUMNS = [
    "layer", "k", "c1", "c2", "params", "formula_params", "conv_params", "param_ratio",
    "rf_cells", "rf_height", "rf_width", "rf_ratio", "center_multiplicity",
]


def analyze(kmax: int = 5, channels=(16, 32, 64)) -> list[dict]:
    """One 3x3 conv row, then PConv rows for k = 2..kmax, per (c1, c2) pair."""
    if kmax < 2:
        raise ValueError("kmax must be at least 2")
    conv_rf = receptive_field(ConvBlockSpec(1, 1)).receptive_field_cells
    rows = []
    for c1 in channels:
        for c2 in channels:
            conv = ConvBlockSpec(c1, c2)
            conv_params = count_params(conv)
            stats = receptive_field(conv)
            rows.append(_row("conv", 3, c1, c2, conv_params, conv_params, conv_params, stats, conv_rf))
            if c2 % 4:
                continue
            for k in range(2, kmax + 1):
                spec = PConvSpec(c1, c2, k)
                stats = receptive_field(spec)
                rows.append(_row("pconv", k, c1, c2, count_params(spec), pconv_param_formula(spec), conv_params,
                                 stats, conv_rf))
    return rows


def _row(layer, k, c1, c2, params, formula, conv_params, stats, conv_rf) -> dict:
    g = stats.multiplicity
    return {
        "layer": layer, "k": k, "c1": c1, "c2": c2,
        "params": params, "formula_params": formula, "conv_params": conv_params,
        "param_ratio": params / conv_params,
        "rf_cells": stats.receptive_field_cells,
        "rf_height": stats.receptive_extent[0], "rf_width": stats.receptive_extent[1],
        "rf_ratio": stats.receptive_field_cells / conv_rf,
        "center_multiplicity": int(g.max()),
    }
