"""NMS, top-k selection, cascade refinement and flip-TTA merging."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .anchors import AnchorSet
from .geometry import Box, ImageSize, as_array, clip_array, decode_deltas, hflip

NMS_IOU_THR = 0.8


@dataclass(frozen=True)
class Detection:
    box: Box
    score: float
    iou_score: Optional[float] = None
    image_id: Any = None

    def __post_init__(self):
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ValueError(f"score must lie in [0, 1], got {self.score}")
        if self.iou_score is not None and not 0.0 <= self.iou_score <= 1.0:
            raise ValueError(f"iou_score must lie in [0, 1], got {self.iou_score}")


# (features, boxes (N, 4)) -> (deltas (N, 4), scores (N,))
StageRefiner = Callable[[Any, np.ndarray], tuple]


def score_order(scores) -> np.ndarray:
    """Indices by descending score, equal scores in original order."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def nms_indices(boxes, scores, iou_thr: float = NMS_IOU_THR) -> np.ndarray:
    """Greedy hard NMS on arrays; returns kept indices in score order.

    A box survives iff its IoU with every already-kept box is <= ``iou_thr``.
    """
    boxes = as_array(boxes)
    order = score_order(scores)
    x1, y1, x2, y2 = boxes[:, 0], boxes[:, 1], boxes[:, 2], boxes[:, 3]
    area = (x2 - x1) * (y2 - y1)
    keep = []
    while order.size:
        i = order[0]
        keep.append(i)
        rest = order[1:]
        iw = np.minimum(x2[i], x2[rest]) - np.maximum(x1[i], x1[rest])
        ih = np.minimum(y2[i], y2[rest]) - np.maximum(y1[i], y1[rest])
        inter = iw * ih
        inter[(iw <= 0.0) | (ih <= 0.0)] = 0.0
        union = area[i] + area[rest] - inter
        ovr = np.zeros_like(inter)
        np.divide(inter, union, out=ovr, where=union > 0.0)
        order = rest[ovr <= iou_thr]
    return np.asarray(keep, dtype=np.int64)


def nms(dets: Sequence[Detection], iou_thr: float = NMS_IOU_THR) -> list[Detection]:
    if not dets:
        return []
    keep = nms_indices([d.box for d in dets], [d.score for d in dets], iou_thr)
    return [dets[i] for i in keep]


def topk_proposals(dets: Sequence[Detection], k: int) -> list[Detection]:
    if k < 0:
        raise ValueError("k must be non-negative")
    order = score_order([d.score for d in dets])[:k]
    return [dets[i] for i in order]


def cascade_refine(anchors: AnchorSet, stages: Sequence[StageRefiner], img: ImageSize,
                   features: Any = None, image_id: Any = None) -> list[Detection]:
    """Run refiners in sequence, each decoding against the previous stage's boxes.

    Intermediate boxes are left unclipped; the final ones are clipped to the
    image and scored by the last stage.
    """
    if not stages:
        raise ValueError("cascade needs at least one stage")
    boxes = np.array(anchors.boxes, dtype=np.float64)
    scores = None
    for n, stage in enumerate(stages):
        deltas, scores = stage(features, boxes)
        deltas = np.asarray(deltas, dtype=np.float64).reshape(-1, 4)
        scores = np.asarray(scores, dtype=np.float64).reshape(-1)
        if len(deltas) != len(boxes) or len(scores) != len(boxes):
            raise ValueError(f"stage {n} returned {len(deltas)} deltas / {len(scores)} scores "
                             f"for {len(boxes)} boxes")
        boxes = decode_deltas(boxes, deltas)
    boxes = clip_array(boxes, img)
    return [Detection(Box(*map(float, b)), float(s), image_id=image_id)
            for b, s in zip(boxes, scores)]


def merge_flip_tta(orig: Sequence[Detection], flipped: Sequence[Detection], img: ImageSize,
                   iou_thr: float = NMS_IOU_THR) -> list[Detection]:
    """Map flipped-image detections back, pool them with the originals, NMS."""
    unflipped = [replace(d, box=hflip(d.box, img)) for d in flipped]
    return nms(list(orig) + unflipped, iou_thr)
