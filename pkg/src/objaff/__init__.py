"""Per-point object-object affordance heatmaps learned from simulated interaction trials."""
from .config import DESK, PAPER, PRESETS, TINY, Preset, get_preset
from .model import AffordanceModel, Heatmap, load_model, predict_heatmap, save_model

__version__ = "0.1.0"

__all__ = [
    "DESK",
    "PAPER",
    "PRESETS",
    "TINY",
    "AffordanceModel",
    "Heatmap",
    "Preset",
    "get_preset",
    "load_model",
    "predict_heatmap",
    "save_model",
]
