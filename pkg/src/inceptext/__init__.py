"""Oriented scene-text detection built on a small numpy autodiff engine."""
from .detector import DetectorConfig, IncepText, LossBreakdown, compute_loss, ohem_select
from .evaluate import EvalReport, evaluate
from .geometry import merge_similar_masks, min_area_quadrilateral, nms_quads, polygon_area, polygon_iou
from .structures import Detection, RoiBox
from .synth import AnnotatedScene, SceneConfig, generate_scene
from .tensor import Tensor, backward, finite_difference_gradient, no_grad

__version__ = "0.1.0"

__all__ = [
    "AnnotatedScene", "Detection", "DetectorConfig", "EvalReport", "IncepText", "LossBreakdown", "RoiBox",
    "SceneConfig", "Tensor", "backward", "compute_loss", "evaluate", "finite_difference_gradient",
    "generate_scene", "merge_similar_masks", "min_area_quadrilateral", "nms_quads", "no_grad", "ohem_select",
    "polygon_area", "polygon_iou",
]
