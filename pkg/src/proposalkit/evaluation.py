"""Class-agnostic box evaluation: AR@K and AP over IoU thresholds.

Matching follows the COCO greedy protocol.  Detections are taken in score
order.  Each one claims the still-unmatched non-crowd GT with the highest
IoU at or above the threshold; among equal IoUs the later GT wins.  A
detection with no such GT may fall on a crowd region, in which case it is
ignored instead of being a false positive.  Crowd IoU is intersection over
the detection area.  Category ids are dropped entirely.

Matching one image at budget K only depends on its top K detections, so
each image is matched once at the largest budget and truncated afterwards.
"""
from __future__ import annotations

import json
import math
import os
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .geometry import Box, as_array, pairwise_intersection, pairwise_iou

COCO_IOU_THRESHOLDS = tuple(
    float(t) for t in np.linspace(0.5, 0.95, int(np.round((0.95 - 0.5) / 0.05)) + 1, endpoint=True))
RECALL_POINTS = np.linspace(0.0, 1.0, int(np.round((1.0 - 0.0) / 0.01)) + 1, endpoint=True)
DEFAULT_BUDGETS = (1, 10, 100, 300, 1000)
THREADS_ENV = "PROPOSALKIT_THREADS"

# conventional proposal-benchmark column order, extras appended
_TABLE_COLUMNS = ("AR@100", "AP", "AP@.5", "AP@.75", "AR@1", "AR@10")


class EvalInputError(ValueError):
    """Malformed ground-truth or detection input."""


@dataclass(frozen=True)
class GroundTruthBox:
    box: Box
    image_id: Any
    gt_id: Any
    crowd: bool = False


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple[float, ...] = COCO_IOU_THRESHOLDS
    recall_budgets: tuple[int, ...] = DEFAULT_BUDGETS
    ap_max_dets: int = 100
    threads: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "iou_thresholds", tuple(float(t) for t in self.iou_thresholds))
        object.__setattr__(self, "recall_budgets", tuple(int(k) for k in self.recall_budgets))
        ts, ks = self.iou_thresholds, self.recall_budgets
        if not ts or any(not 0.0 < t <= 1.0 for t in ts) or any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError(f"iou_thresholds must be strictly increasing in (0, 1], got {ts}")
        if not ks or ks[0] < 1 or any(b <= a for a, b in zip(ks, ks[1:])):
            raise ValueError(f"recall_budgets must be strictly increasing positive ints, got {ks}")
        if self.ap_max_dets < 1:
            raise ValueError("ap_max_dets must be positive")
        if self.threads is not None and self.threads < 1:
            raise ValueError("threads must be positive")

    @property
    def max_dets(self) -> int:
        return max(self.recall_budgets[-1], self.ap_max_dets)

    def resolved_threads(self) -> int:
        n = self.threads or os.cpu_count() or 1
        cap = os.environ.get(THREADS_ENV)
        if cap:
            n = min(n, max(1, int(cap)))
        return n


@dataclass(frozen=True, eq=False)
class ImageMatches:
    """Matching outcome of one image at every IoU threshold.

    ``matched[t, d]`` marks a true positive, ``ignored[t, d]`` a detection
    absorbed by a crowd region; ``gt_index[t, d]`` is the matched GT's
    position in the image's GT list or -1.
    """

    image_id: Any
    scores: np.ndarray
    matched: np.ndarray
    ignored: np.ndarray
    gt_index: np.ndarray
    num_gts: int
    gt_ids: tuple = ()
    known_image: bool = True


@dataclass(frozen=True)
class MatchOutcome:
    detection: int            # index into the caller's detection list
    status: str               # "tp", "fp" or "ignored"
    gt_id: Any = None


@dataclass(eq=False)
class EvalReport:
    ar_at: dict[int, float]
    ap: float
    ap_at: dict[float, float]
    num_images: int = 0
    num_gts: int = 0
    num_crowd: int = 0
    num_detections: int = 0
    warnings: list[str] = field(default_factory=list)
    matches: list[ImageMatches] = field(default_factory=list, repr=False)

    def columns(self) -> dict[str, float]:
        cols = {f"AR@{k}": v for k, v in self.ar_at.items()}
        cols["AP"] = self.ap
        for t, v in self.ap_at.items():
            if len(self.ap_at) == 1 or any(math.isclose(t, x) for x in (0.5, 0.75)):
                cols["AP@" + _threshold_label(t)] = v
        ordered = {k: cols[k] for k in _TABLE_COLUMNS if k in cols}
        ordered.update({k: v for k, v in cols.items() if k not in ordered})
        return ordered

    def to_dict(self) -> dict:
        out = dict(self.columns())
        out.update(num_images=self.num_images, num_gts=self.num_gts,
                   num_crowd=self.num_crowd, num_detections=self.num_detections,
                   warnings=list(self.warnings))
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def table_row(self) -> str:
        cols = self.columns()
        head = " | ".join(f"{k:>8}" for k in cols)
        vals = " | ".join(f"{100 * v:8.2f}" if v >= 0 else f"{'n/a':>8}" for v in cols.values())
        return head + "\n" + vals


def _threshold_label(t: float) -> str:
    s = f"{t:.2f}".rstrip("0")
    return s[1:] if s.startswith("0") else s


# --- matching ------------------------------------------------------------------------

def _match_arrays(det_boxes: np.ndarray, det_scores: np.ndarray, gt_boxes: np.ndarray,
                  crowd: np.ndarray, thresholds: Sequence[float], max_dets: int):
    """Greedy matching of one image at all thresholds at once.

    Returns ``(order, matched, ignored, gt_index)``; ``order`` maps the
    matched columns back to input detection indices.
    """
    order = np.argsort(-det_scores, kind="mergesort")[:max_dets]
    D, G, T = len(order), len(gt_boxes), len(thresholds)
    matched = np.zeros((T, D), dtype=bool)
    ignored = np.zeros((T, D), dtype=bool)
    gt_index = np.full((T, D), -1, dtype=np.int64)
    if D == 0 or G == 0:
        return order, matched, ignored, gt_index

    dets = det_boxes[order]
    regular = np.flatnonzero(~crowd)
    crowd_idx = np.flatnonzero(crowd)
    thr = np.minimum(np.asarray(thresholds, dtype=np.float64), 1 - 1e-10)[:, None]

    reg_iou = pairwise_iou(dets, gt_boxes[regular]) if len(regular) else np.zeros((D, 0))
    if len(crowd_idx):
        inter = pairwise_intersection(dets, gt_boxes[crowd_idx])
        darea = (dets[:, 2] - dets[:, 0]) * (dets[:, 3] - dets[:, 1])
        crowd_iou = np.zeros_like(inter)
        np.divide(inter, darea[:, None], out=crowd_iou, where=darea[:, None] > 0)
    else:
        crowd_iou = np.zeros((D, 0))

    Gr = len(regular)
    taken = np.zeros((T, Gr), dtype=bool)
    rows = np.arange(T)
    for d in range(D):
        hit = np.zeros(T, dtype=bool)
        if Gr:
            row = reg_iou[d]
            valid = ~taken & (row[None, :] >= thr)
            hit = valid.any(axis=1)
            if hit.any():
                masked = np.where(valid, row[None, :], -1.0)
                best = Gr - 1 - np.argmax(masked[:, ::-1], axis=1)
                t_hit, g_hit = rows[hit], best[hit]
                taken[t_hit, g_hit] = True
                matched[t_hit, d] = True
                gt_index[t_hit, d] = regular[g_hit]
        if len(crowd_idx):
            crow = crowd_iou[d]
            cvalid = (crow[None, :] >= thr) & ~hit[:, None]
            chit = cvalid.any(axis=1)
            if chit.any():
                masked = np.where(cvalid, crow[None, :], -1.0)
                best = len(crowd_idx) - 1 - np.argmax(masked[:, ::-1], axis=1)
                ignored[chit, d] = True
                gt_index[chit, d] = crowd_idx[best[chit]]
    return order, matched, ignored, gt_index


def match_image(dets, gts: Sequence[GroundTruthBox], iou_thr: float,
                max_dets: int = 100) -> list[MatchOutcome]:
    """Match one image's detections at a single threshold.

    ``dets`` holds :class:`~proposalkit.postprocess.Detection` objects (or
    anything with ``box`` and ``score``).  Outcomes come back in score order,
    truncated to ``max_dets``.
    """
    ids = [g.gt_id for g in gts]
    if len(set(ids)) != len(ids):
        raise EvalInputError(f"duplicate gt_id in image: {ids}")
    det_boxes = as_array([d.box for d in dets])
    det_scores = np.array([d.score for d in dets], dtype=np.float64)
    gt_boxes = as_array([g.box for g in gts])
    crowd = np.array([g.crowd for g in gts], dtype=bool)
    order, matched, ignored, gidx = _match_arrays(det_boxes, det_scores, gt_boxes, crowd,
                                                  [iou_thr], max_dets)
    out = []
    for col, d in enumerate(order):
        if matched[0, col]:
            out.append(MatchOutcome(int(d), "tp", ids[gidx[0, col]]))
        elif ignored[0, col]:
            out.append(MatchOutcome(int(d), "ignored", ids[gidx[0, col]]))
        else:
            out.append(MatchOutcome(int(d), "fp"))
    return out


def match_dataset_image(image_id, det_boxes, det_scores, gts: Sequence[GroundTruthBox],
                        cfg: EvalConfig, known_image: bool = True) -> ImageMatches:
    gt_boxes = as_array([g.box for g in gts])
    crowd = np.array([g.crowd for g in gts], dtype=bool)
    det_scores = np.asarray(det_scores, dtype=np.float64)
    order, matched, ignored, gidx = _match_arrays(as_array(det_boxes), det_scores, gt_boxes,
                                                  crowd, cfg.iou_thresholds, cfg.max_dets)
    return ImageMatches(image_id, det_scores[order], matched, ignored, gidx,
                        int((~crowd).sum()), tuple(g.gt_id for g in gts), known_image)


# --- aggregation ------------------------------------------------------------------------

def _total_gts(matches: Sequence[ImageMatches]) -> int:
    return sum(m.num_gts for m in matches)


def average_recall(matches: Sequence[ImageMatches], budget: int, cfg: EvalConfig) -> float:
    """Mean over thresholds of the matched fraction of non-crowd GTs, using
    each image's top ``budget`` detections.  -1 when there are no GTs."""
    n_gt = _total_gts(matches)
    if n_gt == 0:
        return -1.0
    T = len(cfg.iou_thresholds)
    tp = np.zeros(T, dtype=np.int64)
    for m in matches:
        tp += m.matched[:, :budget].sum(axis=1)
    return float(np.mean(tp / n_gt))


def _precision_table(matches: Sequence[ImageMatches], cfg: EvalConfig) -> np.ndarray:
    """(T, R) interpolated precision at the 101 recall points, -1 without GTs."""
    T, R = len(cfg.iou_thresholds), len(RECALL_POINTS)
    n_gt = _total_gts(matches)
    if n_gt == 0:
        return -np.ones((T, R))
    k = cfg.ap_max_dets
    scores = np.concatenate([m.scores[:k] for m in matches]) if matches else np.zeros(0)
    inds = np.argsort(-scores, kind="mergesort")
    if matches:
        tm = np.concatenate([m.matched[:, :k] for m in matches], axis=1)[:, inds]
        ig = np.concatenate([m.ignored[:, :k] for m in matches], axis=1)[:, inds]
    else:
        tm = ig = np.zeros((T, 0), dtype=bool)
    tps = tm & ~ig
    fps = ~tm & ~ig
    tp_sum = np.cumsum(tps, axis=1).astype(np.float64)
    fp_sum = np.cumsum(fps, axis=1).astype(np.float64)
    precision = np.zeros((T, R))
    for t in range(T):
        tp, fp = tp_sum[t], fp_sum[t]
        nd = len(tp)
        if nd == 0:
            continue
        rc = tp / n_gt
        pr = tp / np.maximum(tp + fp, 1.0)   # exact division; 0 while only ignored dets seen
        pr = np.maximum.accumulate(pr[::-1])[::-1]
        idx = np.searchsorted(rc, RECALL_POINTS, side="left")
        ok = idx < nd
        precision[t, ok] = pr[idx[ok]]
    return precision


def average_precision(matches: Sequence[ImageMatches], cfg: EvalConfig):
    """101-point interpolated AP averaged over thresholds, plus per-threshold AP."""
    table = _precision_table(matches, cfg)
    if (table < 0).all():
        return -1.0, {t: -1.0 for t in cfg.iou_thresholds}
    ap = float(np.mean(table))
    return ap, {t: float(np.mean(table[i])) for i, t in enumerate(cfg.iou_thresholds)}


# --- input parsing ----------------------------------------------------------------------

@dataclass(eq=False)
class GroundTruth:
    image_sizes: dict                        # image_id -> (width, height)
    boxes: dict                              # image_id -> list[GroundTruthBox]

    @property
    def image_ids(self) -> list:
        return list(self.image_sizes)


def _read_json(src, what: str):
    if isinstance(src, (dict, list)):
        return src
    path = Path(src)
    try:
        text = path.read_text()
    except OSError as e:
        raise EvalInputError(f"{what}: cannot read {path}: {e.strerror}") from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise EvalInputError(f"{path}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from e


def _bbox(raw, where: str) -> Box:
    if (not isinstance(raw, (list, tuple)) or len(raw) != 4
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw)
            or not all(math.isfinite(v) for v in raw)):
        raise EvalInputError(f"{where}.bbox: expected [x, y, w, h] of 4 finite numbers, got {raw!r}")
    x, y, w, h = (float(v) for v in raw)
    if w < 0 or h < 0:
        raise EvalInputError(f"{where}.bbox: negative width/height in {raw!r}")
    return Box(x, y, x + w, y + h)


def _field(obj, key, where):
    if not isinstance(obj, dict):
        raise EvalInputError(f"{where}: expected an object, got {type(obj).__name__}")
    if key not in obj:
        raise EvalInputError(f"{where}: missing field '{key}'")
    return obj[key]


def load_ground_truth(src) -> GroundTruth:
    """Parse COCO-format ground truth (path or already-loaded dict)."""
    data = _read_json(src, "ground truth")
    if not isinstance(data, dict):
        raise EvalInputError("ground truth: top level must be an object")
    images = _field(data, "images", "ground truth")
    anns = _field(data, "annotations", "ground truth")
    if "categories" not in data:
        raise EvalInputError("ground truth: missing field 'categories'")
    sizes, boxes = {}, {}
    for i, img in enumerate(images):
        where = f"images[{i}]"
        iid = _field(img, "id", where)
        if iid in sizes:
            raise EvalInputError(f"{where}.id: duplicate image id {iid!r}")
        sizes[iid] = (img.get("width"), img.get("height"))
        boxes[iid] = []
    seen = defaultdict(set)
    for i, ann in enumerate(anns):
        where = f"annotations[{i}]"
        iid = _field(ann, "image_id", where)
        if iid not in sizes:
            raise EvalInputError(f"{where}.image_id: unknown image {iid!r}")
        gid = _field(ann, "id", where)
        if gid in seen[iid]:
            raise EvalInputError(f"{where}.id: duplicate gt_id {gid!r} in image {iid!r}")
        seen[iid].add(gid)
        box = _bbox(_field(ann, "bbox", where), where)
        boxes[iid].append(GroundTruthBox(box, iid, gid, bool(ann.get("iscrowd", 0))))
    return GroundTruth(sizes, boxes)


def load_detections(src) -> dict:
    """Parse a COCO results list into ``image_id -> (boxes (D, 4), scores (D,))``.

    ``category_id`` is accepted and ignored.
    """
    data = _read_json(src, "detections")
    if not isinstance(data, list):
        raise EvalInputError("detections: top level must be a list of results")
    boxes, scores = defaultdict(list), defaultdict(list)
    for i, det in enumerate(data):
        where = f"[{i}]"
        iid = _field(det, "image_id", where)
        raw = _field(det, "bbox", where)
        s = _field(det, "score", where)
        if isinstance(s, bool) or not isinstance(s, (int, float)) or not math.isfinite(s):
            raise EvalInputError(f"{where}.score: expected a finite number, got {s!r}")
        b = _bbox(raw, where)
        boxes[iid].append((b.x1, b.y1, b.x2, b.y2))
        scores[iid].append(float(s))
    return {iid: (np.asarray(boxes[iid], dtype=np.float64).reshape(-1, 4),
                  np.asarray(scores[iid], dtype=np.float64)) for iid in boxes}


# --- end to end ---------------------------------------------------------------------------

def _empty():
    return np.zeros((0, 4)), np.zeros(0)


def match_all(gt: GroundTruth, dets: dict, cfg: EvalConfig,
              threads: int | None = None) -> list[ImageMatches]:
    """Match every image; images only present in ``dets`` come last, sorted by id."""
    extra = [iid for iid in dets if iid not in gt.image_sizes]
    extra.sort(key=lambda v: (type(v).__name__, v))
    jobs = [(iid, gt.boxes[iid], True) for iid in gt.image_sizes]
    jobs += [(iid, [], False) for iid in extra]

    def run(job):
        iid, gts, known = job
        b, s = dets.get(iid, _empty())
        return match_dataset_image(iid, b, s, gts, cfg, known)

    n = threads if threads is not None else cfg.resolved_threads()
    if n > 1 and len(jobs) > 1:
        chunk = max(1, len(jobs) // (4 * n))
        with ThreadPoolExecutor(max_workers=n) as pool:
            return list(pool.map(run, jobs, chunksize=chunk))
    return [run(j) for j in jobs]


def summarize(matches: Sequence[ImageMatches], cfg: EvalConfig,
              warnings: Iterable[str] = ()) -> EvalReport:
    ar = {k: average_recall(matches, k, cfg) for k in cfg.recall_budgets}
    ap, ap_at = average_precision(matches, cfg)
    return EvalReport(
        ar_at=ar, ap=ap, ap_at=ap_at,
        num_images=sum(1 for m in matches if m.known_image),
        num_gts=_total_gts(matches),
        num_crowd=sum(len(m.gt_ids) - m.num_gts for m in matches),
        num_detections=sum(len(m.scores) for m in matches),
        warnings=list(warnings), matches=list(matches))


def evaluate(gt_src, det_src, cfg: EvalConfig = EvalConfig(),
             threads: int | None = None) -> EvalReport:
    """Score a detections file against COCO-format ground truth."""
    gt = gt_src if isinstance(gt_src, GroundTruth) else load_ground_truth(gt_src)
    dets = det_src if isinstance(det_src, dict) else load_detections(det_src)
    warnings = []
    extra = [iid for iid in dets if iid not in gt.image_sizes]
    if extra:
        n = sum(len(dets[i][1]) for i in extra)
        shown = ", ".join(repr(i) for i in sorted(extra, key=str)[:10])
        warnings.append(f"{n} detections on {len(extra)} image(s) absent from ground truth "
                        f"(counted as false positives): {shown}")
    if all(len(v) == 0 for v in gt.boxes.values()):
        warnings.append("ground truth has no boxes; metrics are reported as -1")
    truncated = [iid for iid, (_, s) in dets.items() if len(s) > cfg.max_dets]
    if truncated:
        warnings.append(f"{len(truncated)} image(s) have more than {cfg.max_dets} detections; "
                        "extras are ignored")
    return summarize(match_all(gt, dets, cfg, threads), cfg, warnings)
