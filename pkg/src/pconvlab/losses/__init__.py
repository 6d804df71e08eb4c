from .boxes import (
    B_GT_MAX,
    BOX_LOSSES,
    Box,
    aspect_weight,
    LossReport,
    ScaleContext,
    beta_b,
    ciou_loss,
    diou_loss,
    dynamic_beta,
    giou_loss,
    iou,
    iou_loss,
    loss_bl,
    loss_bs,
    r_oc,
    sdb_coefficients,
    sdb_loss,
)
from .masks import (
    PolarSummary,
    beta_m,
    dice_loss,
    loss_ml,
    loss_ms,
    polar_summary,
    sdm_coefficients,
    sdm_loss,
    sls_loss,
    soft_iou,
    soft_iou_loss,
)

__all__ = [
    "B_GT_MAX", "BOX_LOSSES", "Box", "aspect_weight", "LossReport", "ScaleContext", "beta_b", "ciou_loss", "diou_loss",
    "dynamic_beta", "giou_loss", "iou", "iou_loss", "loss_bl", "loss_bs", "r_oc", "sdb_coefficients",
    "sdb_loss", "PolarSummary", "beta_m", "dice_loss", "loss_ml", "loss_ms", "polar_summary",
    "sdm_coefficients", "sdm_loss", "sls_loss", "soft_iou", "soft_iou_loss",
]
