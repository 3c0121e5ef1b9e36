"""Command line entry point: ``proposalkit {evaluate,assign,synth,nms}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import synth
from .anchors import generate
from .assignment import assign_dual, diagnostics
from .config import ConfigError, PipelineConfig
from .evaluation import EvalConfig, EvalInputError, evaluate, load_detections, load_ground_truth
from .geometry import GeometryError, ImageSize
from .postprocess import nms_indices, score_order

log = logging.getLogger("proposalkit")

# scores/boxes used by `assign` when no predictions are given
SYNTHETIC_SCORE = 0.7


def _config(args) -> PipelineConfig:
    return PipelineConfig.load(args.config) if args.config else PipelineConfig()


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_evaluate(args) -> int:
    cfg = _config(args).eval
    if args.iou_thr is not None or args.max_dets is not None:
        cfg = EvalConfig(
            iou_thresholds=(args.iou_thr,) if args.iou_thr is not None else cfg.iou_thresholds,
            recall_budgets=cfg.recall_budgets,
            ap_max_dets=args.max_dets if args.max_dets is not None else cfg.ap_max_dets,
            threads=cfg.threads)
    report = evaluate(args.gt, args.det, cfg)
    for w in report.warnings:
        log.warning(w)
    if args.out:
        Path(args.out).write_text(report.to_json())
    print(report.table_row())
    return 0


def _load_predictions(path) -> dict:
    data = json.loads(Path(path).read_text())
    out = {}
    for key, entry in data.items():
        out[str(key)] = (np.asarray(entry["scores"], dtype=np.float64),
                         np.asarray(entry["boxes"], dtype=np.float64).reshape(-1, 4))
    return out


def run_assign(gt_src, cfg: PipelineConfig, preds: dict | None = None) -> dict:
    """Dual assignment per image; returns the diagnostics document."""
    gt = load_ground_truth(gt_src)
    notes = []
    images = []
    tot = defaultdict(int)
    n_cls = n_both = 0
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        for iid, (w, h) in gt.image_sizes.items():
            if not isinstance(w, int) or not isinstance(h, int):
                raise EvalInputError(f"image {iid!r}: width/height required for anchor generation")
            anchors = generate(cfg.anchors.pyramid(ImageSize(w, h)))
            boxes = [g.box for g in gt.boxes[iid] if not g.crowd]
            if preds is not None and str(iid) in preds:
                scores, pred_boxes = preds[str(iid)]
            else:
                scores = np.full(len(anchors), SYNTHETIC_SCORE)
                pred_boxes = anchors.boxes
            dual = assign_dual(anchors, boxes, scores, pred_boxes,
                               cfg.cls_sampler, cfg.reg_sampler)
            diag = diagnostics(dual)
            diag["image_id"] = iid
            diag["num_anchors"] = len(anchors)
            images.append(diag)
            c = dual.cls.positive_mask
            n_cls += int(c.sum())
            n_both += int((c & dual.reg.positive_mask).sum())
            tot["gts"] += diag["num_gts"]
            tot["cls"] += diag["positives"]["cls"]
            tot["reg"] += diag["positives"]["reg"]
            tot["unassigned"] += len(diag["unassigned"]["cls"])
    seen = set()
    for w in caught:
        msg = str(w.message)
        if msg not in seen:
            seen.add(msg)
            notes.append(msg)
    return {
        "summary": {
            "num_images": len(images),
            "num_gts": tot["gts"],
            "positives": {"cls": tot["cls"], "reg": tot["reg"]},
            "unassigned_gts": tot["unassigned"],
            "cls_in_reg_overlap": (n_both / n_cls) if n_cls else 1.0,
        },
        "warnings": notes,
        "images": images,
    }


def cmd_assign(args) -> int:
    cfg = _config(args)
    preds = _load_predictions(args.preds) if args.preds else None
    doc = run_assign(args.gt, cfg, preds)
    for w in doc["warnings"]:
        log.warning(w)
    _emit(json.dumps(doc, indent=2) + "\n", args.out)
    return 0


def cmd_synth(args) -> int:
    scenes = synth.generate(args.seed, args.n_images, args.jitter, args.mean_boxes)
    synth.write(scenes, args.out_gt, args.out_det)
    n = sum(len(s.gt_boxes) for s in scenes)
    print(f"wrote {len(scenes)} images, {n} boxes")
    return 0


def cmd_nms(args) -> int:
    thr = args.iou_thr if args.iou_thr is not None else _config(args).nms_iou_thr
    raw = json.loads(Path(args.det).read_text())
    dets = load_detections(raw)
    per_image = defaultdict(list)
    for i, d in enumerate(raw):
        per_image[d["image_id"]].append(i)
    kept = []
    for iid, (boxes, scores) in dets.items():
        keep = nms_indices(boxes, scores, thr)
        if args.max_dets is not None:
            keep = keep[score_order(scores[keep])[: args.max_dets]]
        kept.extend(raw[per_image[iid][k]] for k in keep)
    _emit(json.dumps(kept, indent=2) + "\n", args.out)
    log.info("kept %d of %d detections", len(kept), len(raw))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="proposalkit",
                                description="Class-agnostic proposal assignment, NMS and evaluation.")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("evaluate", help="score COCO-format detections (AR@K, AP)")
    e.add_argument("gt")
    e.add_argument("det")
    e.add_argument("--config")
    e.add_argument("--out", help="write the JSON report here")
    e.add_argument("--max-dets", type=int, help="detections per image used for AP (default 100)")
    e.add_argument("--iou-thr", type=float, help="evaluate at this single IoU threshold")
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("assign", help="run both samplers and report positives per GT")
    a.add_argument("gt")
    a.add_argument("--config")
    a.add_argument("--preds", help="JSON {image_id: {scores: [...], boxes: [[x1,y1,x2,y2], ...]}}")
    a.add_argument("--out")
    a.set_defaults(func=cmd_assign)

    s = sub.add_parser("synth", help="write a seeded synthetic GT/detection pair")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--n-images", type=int, default=100)
    s.add_argument("--jitter", type=float, default=0.1)
    s.add_argument("--mean-boxes", type=float, default=10.0)
    s.add_argument("--out-gt", required=True)
    s.add_argument("--out-det", required=True)
    s.set_defaults(func=cmd_synth)

    n = sub.add_parser("nms", help="per-image NMS over a COCO results file")
    n.add_argument("det")
    n.add_argument("--config")
    n.add_argument("--iou-thr", type=float)
    n.add_argument("--max-dets", type=int)
    n.add_argument("--out")
    n.set_defaults(func=cmd_nms)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (EvalInputError, ConfigError, GeometryError) as e:
        log.error("%s", e)
        return 2
    except OSError as e:
        log.error("%s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
