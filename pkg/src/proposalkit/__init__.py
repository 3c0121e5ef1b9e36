"""Anchor grids, SimOTA-family label assignment, detection losses, NMS,
crop geometry and class-agnostic AR/AP evaluation for two-stage open-world
instance pipelines."""

from .geometry import Box, BoxDelta, GeometryError, ImageSize, giou, iou
from .postprocess import Detection, nms

__version__ = "0.1.0"

__all__ = ["Box", "BoxDelta", "Detection", "GeometryError", "ImageSize", "giou", "iou", "nms"]
