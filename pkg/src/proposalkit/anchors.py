"""Single-anchor-per-location grids over a feature pyramid."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Box, ImageSize

DEFAULT_STRIDES = (4, 8, 16, 32, 64)
DEFAULT_BASE_SCALE = 8.0


@dataclass(frozen=True)
class PyramidSpec:
    image: ImageSize
    strides: tuple[int, ...] = DEFAULT_STRIDES
    base_scale: float = DEFAULT_BASE_SCALE

    def __post_init__(self):
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        if any(s <= 0 for s in self.strides):
            raise ValueError("strides must be positive")
        if any(b <= a for a, b in zip(self.strides, self.strides[1:])):
            raise ValueError("strides must be strictly increasing")
        if not self.base_scale > 0:
            raise ValueError("base_scale must be positive")


@dataclass(frozen=True)
class AnchorLevel:
    stride: int
    rows: int
    cols: int
    offset: int  # first global index of this level

    @property
    def count(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True, eq=False)
class AnchorSet:
    """Anchors of every level, concatenated in level order.

    ``boxes`` is ``(N, 4)``; ``centers`` is ``(N, 2)``; ``strides`` is ``(N,)``.
    Arrays are marked read-only.
    """

    levels: tuple[AnchorLevel, ...]
    boxes: np.ndarray
    centers: np.ndarray
    strides: np.ndarray
    image: ImageSize = field(default=ImageSize(1, 1))

    def __len__(self) -> int:
        return len(self.boxes)

    def box(self, index: int) -> Box:
        return Box(*(float(v) for v in self.boxes[index]))


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def generate(spec: PyramidSpec) -> AnchorSet:
    """Square anchor of side ``stride * base_scale`` at every cell center."""
    W, H = spec.image.width, spec.image.height
    levels = []
    boxes, centers, strides = [], [], []
    offset = 0
    for s in spec.strides:
        rows, cols = math.ceil(H / s), math.ceil(W / s)
        ys = (np.arange(rows, dtype=np.float64) + 0.5) * s
        xs = (np.arange(cols, dtype=np.float64) + 0.5) * s
        cy, cx = np.meshgrid(ys, xs, indexing="ij")
        c = np.stack([cx.ravel(), cy.ravel()], axis=1)
        half = 0.5 * s * spec.base_scale
        boxes.append(np.concatenate([c - half, c + half], axis=1))
        centers.append(c)
        strides.append(np.full(rows * cols, s, dtype=np.int64))
        levels.append(AnchorLevel(s, rows, cols, offset))
        offset += rows * cols
    if levels:
        b, c, st = np.concatenate(boxes), np.concatenate(centers), np.concatenate(strides)
    else:
        b, c, st = np.zeros((0, 4)), np.zeros((0, 2)), np.zeros(0, dtype=np.int64)
    return AnchorSet(tuple(levels), _freeze(b), _freeze(c), _freeze(st), spec.image)


def anchor_centers(anchors: AnchorSet) -> list[tuple[float, float, int]]:
    return [(float(x), float(y), int(s))
            for (x, y), s in zip(anchors.centers, anchors.strides)]


def from_boxes(boxes, image: ImageSize, stride: int = 1) -> AnchorSet:
    """Wrap explicit boxes as a single-level anchor set (tests, custom grids)."""
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4).copy()
    c = np.stack([(b[:, 0] + b[:, 2]) * 0.5, (b[:, 1] + b[:, 3]) * 0.5], axis=1)
    st = np.full(len(b), stride, dtype=np.int64)
    level = AnchorLevel(stride, 1, len(b), 0)
    return AnchorSet((level,), _freeze(b), _freeze(c), _freeze(st), image)
