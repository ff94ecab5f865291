"""Quasi-static task simulator: scenes, rendering and interaction trials."""
from .render import Scan, render_scan
from .scene import TASKS, Camera, GenerationError, Scene, build_scene
from .shapes import ITEM_FAMILIES, TEST_FAMILIES, TRAIN_FAMILIES, ActingObjectSpec
from .tasks import THRESHOLDS, TrialOutcome, applicable_possible_mask, compute_offset, run_trial

__all__ = [
    "TASKS",
    "THRESHOLDS",
    "ITEM_FAMILIES",
    "TRAIN_FAMILIES",
    "TEST_FAMILIES",
    "ActingObjectSpec",
    "Camera",
    "GenerationError",
    "Scan",
    "Scene",
    "TrialOutcome",
    "applicable_possible_mask",
    "build_scene",
    "compute_offset",
    "render_scan",
    "run_trial",
]
