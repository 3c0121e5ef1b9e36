import math

import numpy as np
import pytest

from proposalkit.anchors import PyramidSpec, from_boxes, generate
from proposalkit.geometry import Box, ImageSize, hflip, iou
from proposalkit.postprocess import (
    Detection, cascade_refine, merge_flip_tta, nms, nms_indices, topk_proposals,
)

from oracles import ref_nms


def dets_from(boxes, scores):
    return [Detection(Box(*b), float(s)) for b, s in zip(boxes, scores)]


def random_scene(rng, n):
    xy = rng.uniform(0, 80, (n, 2))
    boxes = np.concatenate([xy, xy + rng.uniform(2, 30, (n, 2))], axis=1)
    scores = np.round(rng.uniform(0, 1, n), 1)  # coarse scores force ties
    return boxes, scores


def test_nms_examples():
    b1, b2 = Box(0, 0, 10, 10), Box(1, 1, 11, 11)
    assert iou(b1, b2) == pytest.approx(81 / 119)
    pair = [Detection(b1, 0.9), Detection(b2, 0.8)]
    assert nms(pair, 0.8) == pair
    assert nms(pair, 0.5) == [pair[0]]
    assert nms([], 0.8) == []


def test_nms_default_threshold_is_point_eight():
    a = Detection(Box(0, 0, 10, 10), 0.9)
    b = Detection(Box(0, 0, 10, 8.1), 0.5)  # IoU 0.81
    c = Detection(Box(20, 0, 30, 7.9), 0.4)
    assert nms([a, b, c]) == [a, c]


def test_nms_score_ties_keep_lower_index():
    d = [Detection(Box(0, 0, 10, 10), 0.5), Detection(Box(0, 0, 10, 10), 0.5)]
    assert nms(d, 0.5) == [d[0]]
    assert nms_indices([[0, 0, 10, 10], [0, 0, 10, 10]], [0.5, 0.5]).tolist() == [0]


@pytest.mark.parametrize("thr", [0.5, 0.8])
def test_nms_matches_definitional_oracle(thr):
    rng = np.random.default_rng(int(thr * 10))
    for _ in range(300):
        boxes, scores = random_scene(rng, int(rng.integers(0, 51)))
        got = nms_indices(boxes, scores, thr).tolist() if len(boxes) else []
        assert got == ref_nms(boxes.tolist(), scores.tolist(), thr)


def test_nms_idempotent_and_pairwise_separated():
    rng = np.random.default_rng(1)
    for _ in range(100):
        boxes, scores = random_scene(rng, 40)
        dets = dets_from(boxes, scores)
        once = nms(dets, 0.5)
        assert nms(once, 0.5) == once
        for i, a in enumerate(once):
            assert all(iou(a.box, b.box) <= 0.5 for b in once[i + 1:])
        assert [d.score for d in once] == sorted((d.score for d in once), reverse=True)
        assert len(nms(dets, 1.0)) == len(dets)


def test_topk():
    d = dets_from([[0, 0, 1, 1]] * 3, [0.2, 0.9, 0.5])
    assert topk_proposals(d, 1) == [d[1]]
    assert topk_proposals(d, 0) == []
    assert topk_proposals(d, 10) == [d[1], d[2], d[0]]
    with pytest.raises(ValueError):
        topk_proposals(d, -1)


def test_detection_validation():
    with pytest.raises(ValueError):
        Detection(Box(0, 0, 1, 1), 1.5)
    with pytest.raises(ValueError):
        Detection(Box(0, 0, 1, 1), 0.5, iou_score=-0.1)


def zero_stage(features, boxes):
    return np.zeros((len(boxes), 4)), np.full(len(boxes), 0.5)


def scaling_stage(features, boxes):
    d = np.zeros((len(boxes), 4))
    d[:, 0] = 0.1
    d[:, 2] = math.log(2)
    return d, np.full(len(boxes), 0.7)


def test_cascade_identity_is_clipped_anchors():
    img = ImageSize(40, 30)
    anchors = generate(PyramidSpec(img, strides=(8, 16), base_scale=2))
    out = cascade_refine(anchors, [zero_stage, zero_stage], img)
    assert len(out) == len(anchors)
    for det, a in zip(out, anchors.boxes):
        assert det.box.as_tuple() == (max(a[0], 0), max(a[1], 0), min(a[2], 40), min(a[3], 30))
        assert det.score == 0.5


def test_cascade_single_stage_example():
    img = ImageSize(100, 100)
    out = cascade_refine(from_boxes([[0, 0, 10, 10]], img), [scaling_stage], img)
    assert out[0].box.as_tuple() == pytest.approx((0, 0, 16, 10))  # clip([-4, 0, 16, 10])
    assert out[0].score == 0.7


def test_cascade_stages_compose():
    img = ImageSize(1000, 1000)
    anchors = from_boxes([[100, 100, 110, 110]], img)
    out = cascade_refine(anchors, [scaling_stage, scaling_stage], img)[0].box
    # stage 1: cx 105 -> 106, w 10 -> 20; stage 2: cx 106 + 0.1*20 = 108, w 40
    assert out.as_tuple() == pytest.approx((88, 100, 128, 110))


def test_cascade_second_stage_sees_first_stage_boxes():
    seen = []

    def spy(features, boxes):
        seen.append(boxes.copy())
        return zero_stage(features, boxes)

    img = ImageSize(1000, 1000)
    cascade_refine(from_boxes([[100, 100, 110, 110]], img), [scaling_stage, spy], img)
    np.testing.assert_allclose(seen[0], [[96, 100, 116, 110]])


def test_cascade_errors():
    img = ImageSize(10, 10)
    anchors = from_boxes([[0, 0, 5, 5], [5, 5, 10, 10]], img)
    with pytest.raises(ValueError):
        cascade_refine(anchors, [], img)
    with pytest.raises(ValueError):
        cascade_refine(anchors, [lambda f, b: (np.zeros((1, 4)), np.zeros(1))], img)


def test_flip_tta():
    img = ImageSize(100, 50)
    orig = [Detection(Box(10, 0, 30, 20), 0.9), Detection(Box(60, 10, 70, 30), 0.4)]
    assert merge_flip_tta(orig, [], img) == nms(orig)

    mirrored = [Detection(hflip(d.box, img), d.score * 0.9) for d in orig]
    merged = merge_flip_tta(orig, mirrored, img, iou_thr=0.5)
    assert [d.box for d in merged] == [orig[0].box, orig[1].box]

    far = [Detection(Box(0, 40, 5, 45), 0.5)]
    merged = merge_flip_tta(orig, far, img, iou_thr=0.5)
    assert len(merged) == 3
    assert Box(95, 40, 100, 45) in [d.box for d in merged]
