"""Crop geometry for the box-conditioned segmentation stage.

A box is grown by a fixed margin, clipped to the image and the resulting
patch is resized to a fixed size without preserving aspect ratio.  Only the
coordinate algebra lives here.
"""
from __future__ import annotations

from dataclasses import dataclass

from .geometry import Box, GeometryError, ImageSize, clip


@dataclass(frozen=True)
class CropSpec:
    margin: float = 20.0
    patch_w: int = 512
    patch_h: int = 512

    def __post_init__(self):
        if self.margin < 0:
            raise ValueError("margin must be non-negative")
        if self.patch_w < 1 or self.patch_h < 1:
            raise ValueError("patch dimensions must be positive")


@dataclass(frozen=True)
class CropTransform:
    crop: Box
    sx: float
    sy: float


def expand(box: Box, spec: CropSpec = CropSpec(), img: ImageSize | None = None) -> CropTransform:
    m = spec.margin
    grown = Box(box.x1 - m, box.y1 - m, box.x2 + m, box.y2 + m)
    crop = clip(grown, img) if img is not None else grown
    if crop.width <= 0 or crop.height <= 0:
        raise GeometryError(f"empty crop for box {box.as_tuple()} in image {img}")
    return CropTransform(crop, spec.patch_w / crop.width, spec.patch_h / crop.height)


def to_patch(pt: tuple[float, float], t: CropTransform) -> tuple[float, float]:
    x, y = pt
    return ((x - t.crop.x1) * t.sx, (y - t.crop.y1) * t.sy)


def to_image(pt: tuple[float, float], t: CropTransform) -> tuple[float, float]:
    u, v = pt
    return (u / t.sx + t.crop.x1, v / t.sy + t.crop.y1)


def box_to_image(b: Box, t: CropTransform) -> Box:
    """Map a patch-space box back into image coordinates."""
    x1, y1 = to_image((b.x1, b.y1), t)
    x2, y2 = to_image((b.x2, b.y2), t)
    return Box(x1, y1, x2, y2)
