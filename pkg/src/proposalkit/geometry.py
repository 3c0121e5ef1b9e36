"""Axis-aligned boxes and the pairwise quantities built on them.

Boxes are continuous corner coordinates ``(x1, y1, x2, y2)``; area is
``(x2 - x1) * (y2 - y1)`` with no ``+1`` pixel convention.  Scalar helpers
operate on :class:`Box`, the ``*_array`` / ``pairwise_*`` helpers on
``(N, 4)`` float arrays and evaluate the same expressions in the same order,
so both paths agree bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# max |dw|, |dh| before exponentiation
DEFAULT_DELTA_CLAMP = math.log(1000.0 / 16)


class GeometryError(ValueError):
    """Raised for inputs on which a geometric quantity is undefined."""


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise GeometryError(f"non-finite box coordinates {coords}")
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise GeometryError(f"inverted box {coords}")

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> Box:
        return cls(x, y, x + w, y + h)

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x1 + self.x2) * 0.5, (self.y1 + self.y2) * 0.5)

    def to_xywh(self) -> list[float]:
        return [self.x1, self.y1, self.x2 - self.x1, self.y2 - self.y1]

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class BoxDelta:
    dx: float
    dy: float
    dw: float
    dh: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.dx, self.dy, self.dw, self.dh)):
            raise GeometryError("non-finite box delta")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.dx, self.dy, self.dw, self.dh)


@dataclass(frozen=True)
class ImageSize:
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise GeometryError(f"image size must be positive, got {self.width}x{self.height}")


def _intersection(a: Box, b: Box) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    return iw * ih


def iou(a: Box, b: Box) -> float:
    """Intersection over union; 0 whenever the union is empty."""
    inter = _intersection(a, b)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def giou(a: Box, b: Box) -> float:
    """Generalized IoU, ``iou - (C - U) / C`` with C the enclosing-box area.

    Degenerate (zero-area) boxes are rejected.
    """
    if a.area <= 0.0 or b.area <= 0.0:
        raise GeometryError("giou is undefined for zero-area boxes")
    inter = _intersection(a, b)
    union = a.area + b.area - inter
    cw = max(a.x2, b.x2) - min(a.x1, b.x1)
    ch = max(a.y2, b.y2) - min(a.y1, b.y1)
    enclose = cw * ch
    if enclose <= 0.0:
        raise GeometryError("degenerate enclosing box")
    # C >= U exactly; rounding in U can overshoot C for nested boxes
    return inter / union - max(enclose - union, 0.0) / enclose


def encode_delta(anchor: Box, target: Box) -> BoxDelta:
    if anchor.width <= 0.0 or anchor.height <= 0.0:
        raise GeometryError("anchor must have positive width and height")
    if target.width <= 0.0 or target.height <= 0.0:
        raise GeometryError("cannot encode a zero-size target (log of zero)")
    acx, acy = anchor.center
    tcx, tcy = target.center
    return BoxDelta(
        (tcx - acx) / anchor.width,
        (tcy - acy) / anchor.height,
        math.log(target.width / anchor.width),
        math.log(target.height / anchor.height),
    )


def decode_delta(anchor: Box, delta: BoxDelta, max_ratio: float = DEFAULT_DELTA_CLAMP) -> Box:
    if anchor.width <= 0.0 or anchor.height <= 0.0:
        raise GeometryError("anchor must have positive width and height")
    w, h = anchor.width, anchor.height
    cx, cy = anchor.center
    dw = min(max(delta.dw, -max_ratio), max_ratio)
    dh = min(max(delta.dh, -max_ratio), max_ratio)
    ncx = cx + delta.dx * w
    ncy = cy + delta.dy * h
    nw = w * math.exp(dw)
    nh = h * math.exp(dh)
    return Box(ncx - 0.5 * nw, ncy - 0.5 * nh, ncx + 0.5 * nw, ncy + 0.5 * nh)


def hflip(b: Box, img: ImageSize) -> Box:
    return Box(img.width - b.x2, b.y1, img.width - b.x1, b.y2)


def clip(b: Box, img: ImageSize) -> Box:
    w, h = float(img.width), float(img.height)
    return Box(
        min(max(b.x1, 0.0), w),
        min(max(b.y1, 0.0), h),
        min(max(b.x2, 0.0), w),
        min(max(b.y2, 0.0), h),
    )


# --- array forms -----------------------------------------------------------

def as_array(boxes) -> np.ndarray:
    """Stack ``Box`` objects (or anything array-like) into an ``(N, 4)`` float64 array."""
    if isinstance(boxes, np.ndarray):
        arr = boxes.astype(np.float64, copy=False)
    else:
        boxes = list(boxes)
        if boxes and isinstance(boxes[0], Box):
            arr = np.array([b.as_tuple() for b in boxes], dtype=np.float64)
        else:
            arr = np.asarray(boxes, dtype=np.float64)
    return arr.reshape(-1, 4)


def areas(boxes: np.ndarray) -> np.ndarray:
    return (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])


def pairwise_intersection(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = iw * ih
    inter[(iw <= 0.0) | (ih <= 0.0)] = 0.0
    return inter


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``(N, M)`` IoU matrix between two box arrays."""
    a = as_array(a)
    b = as_array(b)
    inter = pairwise_intersection(a, b)
    union = areas(a)[:, None] + areas(b)[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0.0)
    return out


def pairwise_giou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = as_array(a)
    b = as_array(b)
    if (areas(a) <= 0.0).any() or (areas(b) <= 0.0).any():
        raise GeometryError("giou is undefined for zero-area boxes")
    inter = pairwise_intersection(a, b)
    union = areas(a)[:, None] + areas(b)[None, :] - inter
    cw = np.maximum(a[:, None, 2], b[None, :, 2]) - np.minimum(a[:, None, 0], b[None, :, 0])
    ch = np.maximum(a[:, None, 3], b[None, :, 3]) - np.minimum(a[:, None, 1], b[None, :, 1])
    enclose = cw * ch
    return inter / union - np.maximum(enclose - union, 0.0) / enclose


def decode_deltas(anchors: np.ndarray, deltas: np.ndarray,
                  max_ratio: float = DEFAULT_DELTA_CLAMP) -> np.ndarray:
    """Vectorized :func:`decode_delta` over aligned ``(N, 4)`` arrays."""
    anchors = as_array(anchors)
    deltas = np.asarray(deltas, dtype=np.float64).reshape(-1, 4)
    if anchors.shape != deltas.shape:
        raise GeometryError(f"shape mismatch {anchors.shape} vs {deltas.shape}")
    w = anchors[:, 2] - anchors[:, 0]
    h = anchors[:, 3] - anchors[:, 1]
    if (w <= 0.0).any() or (h <= 0.0).any():
        raise GeometryError("anchor must have positive width and height")
    if not np.isfinite(deltas).all():
        raise GeometryError("non-finite box delta")
    cx = (anchors[:, 0] + anchors[:, 2]) * 0.5
    cy = (anchors[:, 1] + anchors[:, 3]) * 0.5
    dw = np.clip(deltas[:, 2], -max_ratio, max_ratio)
    dh = np.clip(deltas[:, 3], -max_ratio, max_ratio)
    ncx = cx + deltas[:, 0] * w
    ncy = cy + deltas[:, 1] * h
    nw = w * np.exp(dw)
    nh = h * np.exp(dh)
    return np.stack([ncx - 0.5 * nw, ncy - 0.5 * nh, ncx + 0.5 * nw, ncy + 0.5 * nh], axis=1)


def hflip_array(boxes: np.ndarray, width: float) -> np.ndarray:
    boxes = as_array(boxes)
    out = boxes.copy()
    out[:, 0] = width - boxes[:, 2]
    out[:, 2] = width - boxes[:, 0]
    return out


def clip_array(boxes: np.ndarray, img: ImageSize) -> np.ndarray:
    boxes = as_array(boxes)
    out = boxes.copy()
    out[:, 0::2] = np.clip(boxes[:, 0::2], 0.0, float(img.width))
    out[:, 1::2] = np.clip(boxes[:, 1::2], 0.0, float(img.height))
    return out
