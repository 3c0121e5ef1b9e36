"""Loss values, their closed-form gradients, IoU-branch targets and score fusion."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .assignment import Assignment
from .geometry import Box, as_array, giou, pairwise_iou

PROB_EPS = 1e-7


@dataclass(frozen=True)
class FocalParams:
    alpha: float = 0.25
    gamma: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not self.gamma >= 0.0:
            raise ValueError(f"gamma must be non-negative, got {self.gamma}")


def _check_prob(p: float) -> float:
    p = min(max(float(p), PROB_EPS), 1.0 - PROB_EPS)
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability {p} outside (0, 1)")
    return p


def focal_loss(p: float, target: int, params: FocalParams = FocalParams()) -> float:
    """``-alpha_t * (1 - p_t)**gamma * ln(p_t)`` for a binary objectness target."""
    if target not in (0, 1):
        raise ValueError(f"target must be 0 or 1, got {target}")
    p = _check_prob(p)
    if target == 1:
        pt, at = p, params.alpha
    else:
        pt, at = 1.0 - p, 1.0 - params.alpha
    return -at * (1.0 - pt) ** params.gamma * math.log(pt)


def focal_loss_grad(p: float, target: int, params: FocalParams = FocalParams()) -> float:
    """d focal_loss / dp."""
    if target not in (0, 1):
        raise ValueError(f"target must be 0 or 1, got {target}")
    p = _check_prob(p)
    g = params.gamma
    if target == 1:
        a = params.alpha
        # L = -a (1-p)^g ln p
        return a * (g * (1.0 - p) ** (g - 1.0) * math.log(p) if g > 0 else 0.0) \
            - a * (1.0 - p) ** g / p
    a = 1.0 - params.alpha
    # L = -a p^g ln(1-p)
    return -a * (g * p ** (g - 1.0) * math.log1p(-p) if g > 0 else 0.0) \
        + a * p ** g / (1.0 - p)


def focal_loss_array(p, targets, params: FocalParams = FocalParams()) -> np.ndarray:
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    t = np.asarray(targets)
    pt = np.where(t == 1, p, 1.0 - p)
    at = np.where(t == 1, params.alpha, 1.0 - params.alpha)
    return -at * (1.0 - pt) ** params.gamma * np.log(pt)


def giou_loss(pred: Box, target: Box) -> float:
    return 1.0 - giou(pred, target)


def giou_loss_grad(pred: Box, target: Box) -> tuple[float, float, float, float]:
    """Gradient of ``giou_loss`` w.r.t. ``(x1, y1, x2, y2)`` of ``pred``.

    Uses ``L = 2 - I/U - U/C``.  At kinks (coinciding edges) the one-sided
    derivative taken from the ``pred``-is-inner branch is returned.
    """
    x1, y1, x2, y2 = pred.as_tuple()
    a1, b1, a2, b2 = target.as_tuple()
    w, h = x2 - x1, y2 - y1
    iw = min(x2, a2) - max(x1, a1)
    ih = min(y2, b2) - max(y1, b1)
    overlap = iw > 0.0 and ih > 0.0
    inter = iw * ih if overlap else 0.0
    union = pred.area + target.area - inter
    cw = max(x2, a2) - min(x1, a1)
    ch = max(y2, b2) - min(y1, b1)
    enclose = cw * ch

    d_area = (-h, -w, h, w)
    if overlap:
        d_iw = (-1.0 if x1 > a1 else 0.0, 0.0, 1.0 if x2 < a2 else 0.0, 0.0)
        d_ih = (0.0, -1.0 if y1 > b1 else 0.0, 0.0, 1.0 if y2 < b2 else 0.0)
        d_inter = tuple(ih * dw + iw * dh for dw, dh in zip(d_iw, d_ih))
    else:
        d_inter = (0.0, 0.0, 0.0, 0.0)
    d_cw = (-1.0 if x1 < a1 else 0.0, 0.0, 1.0 if x2 > a2 else 0.0, 0.0)
    d_ch = (0.0, -1.0 if y1 < b1 else 0.0, 0.0, 1.0 if y2 > b2 else 0.0)

    grad = []
    for dI, dA, dcw, dch in zip(d_inter, d_area, d_cw, d_ch):
        dU = dA - dI
        dC = ch * dcw + cw * dch
        grad.append(-(dI * union - inter * dU) / union ** 2
                    - (dU * enclose - union * dC) / enclose ** 2)
    return tuple(grad)


def iou_targets(pred_boxes, assignment: Assignment, gts) -> np.ndarray:
    """IoU(pred, assigned GT) on positives, 0 elsewhere."""
    preds = as_array(pred_boxes)
    gts = as_array(gts)
    labels = assignment.labels
    if len(labels) != len(preds):
        raise ValueError(f"{len(preds)} boxes but {len(labels)} labels")
    if labels.max(initial=-1) >= len(gts):
        raise ValueError(f"assignment refers to GT {labels.max()} but only {len(gts)} given")
    out = np.zeros(len(preds), dtype=np.float64)
    pos = np.flatnonzero(labels >= 0)
    for i in pos:
        out[i] = pairwise_iou(preds[i:i + 1], gts[labels[i]:labels[i] + 1])[0, 0]
    return out


def fuse_scores(cls, iou_pred):
    """Geometric mean of the classification and predicted-IoU scores."""
    if np.ndim(cls) == 0 and np.ndim(iou_pred) == 0:
        c, i = float(cls), float(iou_pred)
        if not (0.0 <= c <= 1.0 and 0.0 <= i <= 1.0):
            raise ValueError(f"scores must lie in [0, 1], got ({c}, {i})")
        return math.sqrt(c * i)
    c = np.asarray(cls, dtype=np.float64)
    i = np.asarray(iou_pred, dtype=np.float64)
    return np.sqrt(c * i)
