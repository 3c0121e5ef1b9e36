"""Label assignment: max-IoU baseline, OTA via Sinkhorn-Knopp, SimOTA and
the two-sampler (classification / regression) scheme.

Every assigner returns an :class:`Assignment` whose ``labels`` hold the
positive GT index per anchor, ``NEGATIVE`` or (max-IoU only) ``IGNORE``.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .anchors import AnchorSet
from .geometry import as_array, pairwise_iou

NEGATIVE = -1
IGNORE = -2

OUT_OF_REGION_PENALTY = 1e5
IOU_EPS = 1e-8
SCORE_EPS = 1e-7

MODES = ("max_iou", "ota", "simota")
CENTER_MODES = ("box", "stride")


@dataclass(frozen=True)
class SamplerConfig:
    center_ratio: float = 0.25
    top_k: int = 10
    reg_weight: float = 3.0
    mode: str = "simota"
    dynamic_k: bool = True
    # "box": GT shrunk by center_ratio; "stride": |d| <= center_radius * stride
    center_mode: str = "box"
    center_radius: float = 2.5
    pos_iou_thr: float = 0.7
    neg_iou_thr: float = 0.3

    def __post_init__(self):
        if not 0.0 < self.center_ratio <= 1.0:
            raise ValueError(f"center_ratio must lie in (0, 1], got {self.center_ratio}")
        if int(self.top_k) != self.top_k or self.top_k < 1:
            raise ValueError(f"top_k must be a positive integer, got {self.top_k}")
        if not self.reg_weight > 0:
            raise ValueError("reg_weight must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.center_mode not in CENTER_MODES:
            raise ValueError(f"center_mode must be one of {CENTER_MODES}, got {self.center_mode!r}")
        if not self.center_radius > 0:
            raise ValueError("center_radius must be positive")
        if not 0.0 <= self.neg_iou_thr <= self.pos_iou_thr <= 1.0:
            raise ValueError("need 0 <= neg_iou_thr <= pos_iou_thr <= 1")


CLS_SAMPLER = SamplerConfig(top_k=10)
REG_SAMPLER = SamplerConfig(top_k=20)


@dataclass(frozen=True, eq=False)
class CostMatrix:
    """GT x anchor costs plus the quantities they were built from."""

    cost: np.ndarray        # (G, A), includes the out-of-region penalty
    ious: np.ndarray        # (G, A), IoU(pred_box, gt)
    in_region: np.ndarray   # (G, A) bool, anchor center inside the center region
    in_box: np.ndarray      # (G, A) bool, anchor center inside the GT box
    bg_cost: np.ndarray     # (A,), BCE of the score against the negative label

    @property
    def num_gts(self) -> int:
        return self.cost.shape[0]

    @property
    def num_anchors(self) -> int:
        return self.cost.shape[1]


@dataclass(frozen=True, eq=False)
class Assignment:
    labels: np.ndarray                      # (A,) int64
    num_gts: int
    unassigned: tuple[int, ...] = ()        # GTs without any candidate anchor
    starved: tuple[int, ...] = ()           # GTs that lost every pick to conflicts

    @property
    def positive_mask(self) -> np.ndarray:
        return self.labels >= 0

    @property
    def positives(self) -> np.ndarray:
        return np.flatnonzero(self.labels >= 0)

    def positive_counts(self) -> np.ndarray:
        pos = self.labels[self.labels >= 0]
        return np.bincount(pos, minlength=self.num_gts)[: self.num_gts]

    def __eq__(self, other):
        if not isinstance(other, Assignment):
            return NotImplemented
        return (self.num_gts == other.num_gts
                and np.array_equal(self.labels, other.labels)
                and self.unassigned == other.unassigned
                and self.starved == other.starved)


@dataclass(frozen=True, eq=False)
class DualAssignment:
    cls: Assignment
    reg: Assignment

    def overlap(self) -> float:
        """Fraction of classification positives that are also regression positives."""
        c = self.cls.positive_mask
        n = int(c.sum())
        if n == 0:
            return 1.0
        return float((c & self.reg.positive_mask).sum()) / n


def center_region_mask(anchors: AnchorSet, gt, center_ratio: float,
                       mode: str = "box", radius: float = 2.5) -> np.ndarray:
    """Per-anchor flag: does the anchor center fall in the GT's center region?

    In ``box`` mode the region is the GT box shrunk about its center to
    ``center_ratio`` of its width and height (bounds inclusive).  In
    ``stride`` mode it is the square of half-side ``radius * stride``
    around the GT center.
    """
    g = as_array([gt])[0]
    gcx = (g[0] + g[2]) * 0.5
    gcy = (g[1] + g[3]) * 0.5
    cx = anchors.centers[:, 0]
    cy = anchors.centers[:, 1]
    if mode == "box":
        hw = (g[2] - g[0]) * center_ratio * 0.5
        hh = (g[3] - g[1]) * center_ratio * 0.5
    elif mode == "stride":
        hw = hh = radius * anchors.strides.astype(np.float64)
    else:
        raise ValueError(f"unknown center mode {mode!r}")
    return (cx >= gcx - hw) & (cx <= gcx + hw) & (cy >= gcy - hh) & (cy <= gcy + hh)


def _in_box_mask(anchors: AnchorSet, gts: np.ndarray) -> np.ndarray:
    cx = anchors.centers[None, :, 0]
    cy = anchors.centers[None, :, 1]
    return ((cx >= gts[:, None, 0]) & (cx <= gts[:, None, 2])
            & (cy >= gts[:, None, 1]) & (cy <= gts[:, None, 3]))


def build_costs(anchors: AnchorSet, gts, cls_scores, pred_boxes,
                cfg: SamplerConfig = CLS_SAMPLER) -> CostMatrix:
    """cost = BCE(score, 1) + reg_weight * -ln(IoU + eps) (+ penalty off-region)."""
    gts = as_array(gts)
    preds = as_array(pred_boxes)
    scores = np.asarray(cls_scores, dtype=np.float64).reshape(-1)
    A = len(anchors)
    if len(scores) != A or len(preds) != A:
        raise ValueError(f"scores ({len(scores)}) and pred boxes ({len(preds)}) "
                         f"must align with {A} anchors")
    if not np.isfinite(scores).all() or not np.isfinite(preds).all():
        raise ValueError("non-finite scores or predicted boxes")
    p = np.clip(scores, SCORE_EPS, 1.0 - SCORE_EPS)
    cls_cost = -np.log(p)
    bg_cost = -np.log1p(-p)
    ious = pairwise_iou(gts, preds)
    reg_cost = -np.log(ious + IOU_EPS)
    if len(gts):
        in_region = np.stack([center_region_mask(anchors, g, cfg.center_ratio,
                                                 cfg.center_mode, cfg.center_radius)
                              for g in gts])
    else:
        in_region = np.zeros((0, A), dtype=bool)
    in_box = _in_box_mask(anchors, gts)
    cost = cls_cost[None, :] + cfg.reg_weight * reg_cost
    cost = cost + OUT_OF_REGION_PENALTY * (~in_region)
    return CostMatrix(cost, ious, in_region, in_box, bg_cost)


# --- max-IoU baseline ---------------------------------------------------------

def assign_max_iou(ious, pos_thr: float = 0.7, neg_thr: float = 0.3) -> Assignment:
    """RPN-style assignment on a (G, A) IoU matrix.

    Anchors with max IoU >= ``pos_thr`` go positive to their argmax GT,
    those below ``neg_thr`` negative, the rest are ignored.  Afterwards each
    GT's best anchor (if its IoU is > 0) is forced positive; later GTs win.
    Ties resolve to the lowest index throughout.
    """
    ious = np.asarray(ious, dtype=np.float64)
    G, A = ious.shape
    labels = np.full(A, IGNORE, dtype=np.int64)
    if G == 0:
        labels[:] = NEGATIVE
        return Assignment(labels, 0)
    if A == 0:
        return Assignment(labels, G, unassigned=tuple(range(G)))
    best_iou = ious.max(axis=0)
    best_gt = ious.argmax(axis=0)
    labels[best_iou < neg_thr] = NEGATIVE
    pos = best_iou >= pos_thr
    labels[pos] = best_gt[pos]
    unassigned = []
    for g in range(G):
        a = int(ious[g].argmax())
        if ious[g, a] > 0.0:
            labels[a] = g
        else:
            unassigned.append(g)
    return Assignment(labels, G, unassigned=tuple(unassigned))


# --- Sinkhorn-Knopp -------------------------------------------------------------

class SinkhornError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SinkhornResult:
    plan: np.ndarray
    iterations: int
    marginal_error: float
    converged: bool


def sinkhorn(cost, supply, demand, eps: float = 0.1, max_iter: int = 1000,
             tol: float = 1e-9) -> SinkhornResult:
    """Entropy-regularized optimal transport, iterated in the log domain.

    Stops once the largest row/column marginal violation drops below
    ``tol`` or after ``max_iter`` sweeps; ``converged`` tells which.
    """
    C = np.asarray(cost, dtype=np.float64)
    a = np.asarray(supply, dtype=np.float64).reshape(-1)
    b = np.asarray(demand, dtype=np.float64).reshape(-1)
    if C.ndim != 2 or C.shape != (len(a), len(b)):
        raise SinkhornError(f"cost shape {C.shape} does not match marginals ({len(a)}, {len(b)})")
    if not np.isfinite(C).all():
        raise SinkhornError("cost matrix has non-finite entries")
    if not eps > 0:
        raise SinkhornError("eps must be positive")
    if (a < 0).any() or (b < 0).any() or not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise SinkhornError("marginals must be finite and non-negative")
    if abs(a.sum() - b.sum()) > 1e-9 * max(1.0, a.sum()):
        raise SinkhornError(f"unbalanced marginals: {a.sum()} vs {b.sum()}")

    plan = np.zeros_like(C)
    rows, cols = a > 0, b > 0
    if not rows.any():
        return SinkhornResult(plan, 0, 0.0, True)
    Cs = C[np.ix_(rows, cols)] / eps
    la, lb = np.log(a[rows]), np.log(b[cols])
    f = np.zeros(len(la))
    g = np.zeros(len(lb))
    err = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        f = la - logsumexp(g[None, :] - Cs, axis=1)
        g = lb - logsumexp(f[:, None] - Cs, axis=0)
        P = np.exp(f[:, None] + g[None, :] - Cs)
        err = max(np.abs(P.sum(axis=1) - a[rows]).max(), np.abs(P.sum(axis=0) - b[cols]).max())
        if err < tol:
            break
    plan[np.ix_(rows, cols)] = P
    return SinkhornResult(plan, it, float(err), bool(err < tol))


def _dynamic_k(cand_ious: np.ndarray, cfg: SamplerConfig) -> int:
    if not cfg.dynamic_k:
        return cfg.top_k
    q = min(cfg.top_k, len(cand_ious))
    top = np.sort(cand_ious)[::-1][:q]
    return max(1, int(math.floor(top.sum())))


def _candidates(cost: CostMatrix, g: int) -> np.ndarray:
    cand = np.flatnonzero(cost.in_region[g])
    if len(cand) == 0:
        cand = np.flatnonzero(cost.in_box[g])
    return cand


def assign_ota(cost: CostMatrix, cfg: SamplerConfig = CLS_SAMPLER, eps: float = 0.1,
               max_iter: int = 50) -> Assignment:
    """Full OTA: each GT supplies dynamic-k units, background supplies the rest.

    Each anchor takes the row of its largest transported mass.  Used as a
    reference for SimOTA, not tuned for speed.
    """
    G, A = cost.cost.shape
    labels = np.full(A, NEGATIVE, dtype=np.int64)
    if G == 0 or A == 0:
        return Assignment(labels, G, unassigned=tuple(range(G)) if A == 0 else ())
    ks = np.array([_dynamic_k(cost.ious[g][_candidates(cost, g)], cfg)
                   if len(_candidates(cost, g)) else 0 for g in range(G)], dtype=np.float64)
    if ks.sum() > A:
        ks *= A / ks.sum()
    supply = np.append(ks, A - ks.sum())
    C = np.vstack([cost.cost, cost.bg_cost[None, :]])
    plan = sinkhorn(C, supply, np.ones(A), eps=eps, max_iter=max_iter).plan
    best = plan.argmax(axis=0)
    fg = best < G
    labels[fg] = best[fg]
    counts = np.bincount(labels[fg], minlength=G)
    unassigned = tuple(int(g) for g in range(G) if ks[g] == 0)
    starved = tuple(int(g) for g in range(G) if ks[g] > 0 and counts[g] == 0)
    return Assignment(labels, G, unassigned=unassigned, starved=starved)


# --- SimOTA ---------------------------------------------------------------------

def _select_for_gt(cost: CostMatrix, cfg: SamplerConfig, g: int) -> np.ndarray:
    cand = _candidates(cost, g)
    if len(cand) == 0:
        return cand
    k = min(_dynamic_k(cost.ious[g, cand], cfg), len(cand))
    order = np.argsort(cost.cost[g, cand], kind="stable")
    return cand[order[:k]]


def assign_simota(cost: CostMatrix, cfg: SamplerConfig = CLS_SAMPLER,
                  n_threads: int = 1) -> Assignment:
    """Per GT, pick the k lowest-cost candidates (k from the summed top IoUs);
    an anchor picked by several GTs keeps the one with the lowest cost.

    Candidates are the anchors in the GT's center region, falling back to
    anchors centered inside the GT box.  Ties go to the lower index.
    """
    G, A = cost.cost.shape
    labels = np.full(A, NEGATIVE, dtype=np.int64)
    if G == 0:
        return Assignment(labels, 0)
    if n_threads > 1 and G > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            picks = list(pool.map(lambda g: _select_for_gt(cost, cfg, g), range(G)))
    else:
        picks = [_select_for_gt(cost, cfg, g) for g in range(G)]

    selected = np.zeros((G, A), dtype=bool)
    for g, idx in enumerate(picks):
        selected[g, idx] = True
    chosen = selected.any(axis=0)
    masked = np.where(selected[:, chosen], cost.cost[:, chosen], np.inf)
    labels[chosen] = masked.argmin(axis=0)

    counts = np.bincount(labels[chosen], minlength=G)
    unassigned = tuple(g for g in range(G) if len(picks[g]) == 0)
    starved = tuple(g for g in range(G) if len(picks[g]) and counts[g] == 0)
    return Assignment(labels, G, unassigned=unassigned, starved=starved)


def assign(cost: CostMatrix, cfg: SamplerConfig, n_threads: int = 1) -> Assignment:
    """Dispatch on ``cfg.mode``.  ``max_iou`` reads ``cost.ious``, so feed it
    anchors as the predicted boxes for the classic RPN baseline."""
    if cfg.mode == "simota":
        return assign_simota(cost, cfg, n_threads)
    if cfg.mode == "ota":
        return assign_ota(cost, cfg)
    return assign_max_iou(cost.ious, cfg.pos_iou_thr, cfg.neg_iou_thr)


def _cost_key(cfg: SamplerConfig):
    return (cfg.center_ratio, cfg.reg_weight, cfg.center_mode, cfg.center_radius)


def assign_dual(anchors: AnchorSet, gts, cls_scores, pred_boxes,
                cls_cfg: SamplerConfig = CLS_SAMPLER, reg_cfg: SamplerConfig = REG_SAMPLER,
                n_threads: int = 1) -> DualAssignment:
    """Two independent assignments over the same predictions, one per head."""
    if cls_cfg.top_k > reg_cfg.top_k:
        warnings.warn(f"classification top_k ({cls_cfg.top_k}) exceeds regression "
                      f"top_k ({reg_cfg.top_k}); the regression head will see fewer positives",
                      stacklevel=2)
    cls_cost = build_costs(anchors, gts, cls_scores, pred_boxes, cls_cfg)
    if _cost_key(cls_cfg) == _cost_key(reg_cfg):
        reg_cost = cls_cost
    else:
        reg_cost = build_costs(anchors, gts, cls_scores, pred_boxes, reg_cfg)
    return DualAssignment(assign(cls_cost, cls_cfg, n_threads),
                          assign(reg_cost, reg_cfg, n_threads))


def diagnostics(dual: DualAssignment) -> dict:
    """JSON-ready summary of a dual assignment."""
    cls_counts = dual.cls.positive_counts()
    reg_counts = dual.reg.positive_counts()
    return {
        "num_gts": dual.cls.num_gts,
        "positives": {"cls": int(cls_counts.sum()), "reg": int(reg_counts.sum())},
        "per_gt": [{"gt": g, "cls": int(c), "reg": int(r)}
                   for g, (c, r) in enumerate(zip(cls_counts, reg_counts))],
        "unassigned": {"cls": list(dual.cls.unassigned), "reg": list(dual.reg.unassigned)},
        "starved": {"cls": list(dual.cls.starved), "reg": list(dual.reg.starved)},
        "cls_in_reg_overlap": dual.overlap(),
    }

