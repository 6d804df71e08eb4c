from .ablate import ablate, design_grid, expand_grid, medians
from .analyze import analyze
from .config import ExperimentConfig, RunReport
from .models import BoxNet, SegNet, build_model
from .train import TrainingDiverged, evaluate, load_model, save_model, train

__all__ = [
    "ablate", "design_grid", "expand_grid", "medians", "analyze", "ExperimentConfig", "RunReport", "BoxNet",
    "SegNet", "build_model", "TrainingDiverged", "evaluate", "load_model", "save_model", "train",
]
