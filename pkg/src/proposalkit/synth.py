"""Seeded synthetic scenes for fixtures and load tests."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import ImageSize, pairwise_iou

IMAGE_SIZES = ((640, 480), (800, 600), (1024, 768), (512, 512))


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    image_id: int
    image: ImageSize
    gt_boxes: np.ndarray        # (G, 4) corners
    det_boxes: np.ndarray       # (D, 4) corners
    det_scores: np.ndarray      # (D,)


def _random_boxes(rng, n: int, W: int, H: int, min_side: float = 8.0) -> np.ndarray:
    w = rng.uniform(min_side, max(min_side, 0.5 * W), n)
    h = rng.uniform(min_side, max(min_side, 0.5 * H), n)
    x = rng.uniform(0.0, W - w)
    y = rng.uniform(0.0, H - h)
    return np.round(np.stack([x, y, x + w, y + h], axis=1), 2)


def make_scene(rng: np.random.Generator, image_id: int, jitter: float = 0.1,
               mean_boxes: float = 10.0) -> SyntheticScene:
    """One image: GT boxes, one jittered detection per GT and some distractors.

    Each detection corner moves by ``U(-jitter, jitter)`` times the GT side
    length; its score is the resulting IoU plus small noise.  ``jitter == 0``
    yields exact copies of the GT scored 1.0 and no distractors.
    """
    W, H = IMAGE_SIZES[rng.integers(len(IMAGE_SIZES))]
    n = 1 + int(rng.poisson(max(mean_boxes - 1.0, 0.0)))
    gts = _random_boxes(rng, n, W, H)
    if jitter <= 0:
        return SyntheticScene(image_id, ImageSize(W, H), gts, gts.copy(), np.ones(n))

    wh = np.concatenate([gts[:, 2:] - gts[:, :2]] * 2, axis=1)
    dets = gts + rng.uniform(-jitter, jitter, gts.shape) * wh
    lo = np.minimum(dets[:, :2], dets[:, 2:])
    hi = np.maximum(dets[:, :2], dets[:, 2:])
    hi = np.maximum(hi, lo + 1.0)
    dets = np.concatenate([lo, hi], axis=1)
    dets[:, 0::2] = np.clip(dets[:, 0::2], 0, W)
    dets[:, 1::2] = np.clip(dets[:, 1::2], 0, H)
    dets = np.round(dets, 2)
    ious = np.diag(pairwise_iou(dets, gts))
    scores = np.clip(ious + rng.normal(0.0, 0.05, n), 0.01, 1.0)

    n_fp = int(rng.binomial(n, min(1.0, jitter)))
    if n_fp:
        dets = np.concatenate([dets, _random_boxes(rng, n_fp, W, H)])
        scores = np.concatenate([scores, rng.uniform(0.0, 0.5, n_fp)])
    return SyntheticScene(image_id, ImageSize(W, H), gts, dets, np.round(scores, 4))


def generate(seed: int, n_images: int, jitter: float = 0.1,
             mean_boxes: float = 10.0) -> list[SyntheticScene]:
    rng = np.random.default_rng(seed)
    return [make_scene(rng, i + 1, jitter, mean_boxes) for i in range(n_images)]


def _xywh(b) -> list[float]:
    return [float(b[0]), float(b[1]), round(float(b[2] - b[0]), 2), round(float(b[3] - b[1]), 2)]


def to_coco(scenes: list[SyntheticScene]) -> tuple[dict, list]:
    images, anns, dets = [], [], []
    ann_id = 1
    for s in scenes:
        images.append({"id": s.image_id, "width": s.image.width, "height": s.image.height})
        for b in s.gt_boxes:
            bbox = _xywh(b)
            anns.append({"id": ann_id, "image_id": s.image_id, "category_id": 1,
                         "bbox": bbox, "area": round(bbox[2] * bbox[3], 4), "iscrowd": 0})
            ann_id += 1
        for b, sc in zip(s.det_boxes, s.det_scores):
            dets.append({"image_id": s.image_id, "category_id": 1, "bbox": _xywh(b),
                         "score": float(sc)})
    gt = {"images": images, "annotations": anns,
          "categories": [{"id": 1, "name": "object"}]}
    return gt, dets


def write(scenes: list[SyntheticScene], gt_path, det_path) -> None:
    gt, dets = to_coco(scenes)
    Path(gt_path).write_text(json.dumps(gt, separators=(",", ":")))
    Path(det_path).write_text(json.dumps(dets, separators=(",", ":")))
