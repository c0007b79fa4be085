"""Projective 2D->3D semantic fusion on a fixed triangle mesh, with
recursive Bayesian per-vertex label filtering, connected-component object
extraction, a binary client-server protocol and raycast interaction."""

__version__ = "0.1.0"

from .geometry import (CameraFrame, ClassSet, DEFAULT_CLASSES, SemanticMesh,
                       make_perspective, project_to_pixel, world_to_camera)
from .rasterizer import DepthMap, render_depth, visible_vertices
from .fusion import (FusionState, ScoreMap, argmax_labels, bayes_update,
                     fuse_frame, init_state)
from .components import (LabeledComponent, ThresholdTable, batch_trigger,
                         extract_components, filter_components)
from .metrics import ConfusionMatrix
from .interaction import ActuatorState, GazeRay, handle_selection, raycast
from .segmentation import NoiseModel, OracleSource, oracle_segment

__all__ = [
    "CameraFrame", "ClassSet", "DEFAULT_CLASSES", "SemanticMesh",
    "make_perspective", "project_to_pixel", "world_to_camera",
    "DepthMap", "render_depth", "visible_vertices",
    "FusionState", "ScoreMap", "argmax_labels", "bayes_update",
    "fuse_frame", "init_state",
    "LabeledComponent", "ThresholdTable", "batch_trigger",
    "extract_components", "filter_components",
    "ConfusionMatrix",
    "ActuatorState", "GazeRay", "handle_selection", "raycast",
    "NoiseModel", "OracleSource", "oracle_segment",
]
