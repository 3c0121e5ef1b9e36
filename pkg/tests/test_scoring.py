import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from proposalkit.assignment import NEGATIVE, Assignment
from proposalkit.geometry import Box, GeometryError
from proposalkit.scoring import (
    FocalParams, focal_loss, focal_loss_array, focal_loss_grad, fuse_scores, giou_loss,
    giou_loss_grad, iou_targets,
)

probs = st.floats(0.001, 0.999)


def test_focal_hand_value():
    assert focal_loss(0.5, 1, FocalParams(0.25, 2.0)) == pytest.approx(0.25 * 0.25 * math.log(2), abs=1e-12)
    assert focal_loss(0.5, 1, FocalParams(0.25, 2.0)) == pytest.approx(0.043322, abs=1e-6)


def test_focal_perfect_prediction_vanishes():
    assert focal_loss(1.0 - 1e-9, 1) < 1e-12
    assert focal_loss(1e-9, 0) < 1e-12


@given(probs)
def test_focal_reduces_to_cross_entropy(p):
    assert focal_loss(p, 1, FocalParams(alpha=1.0, gamma=0.0)) == pytest.approx(-math.log(p))


@given(st.lists(probs, min_size=2, max_size=2, unique=True), st.sampled_from([0, 1]))
def test_focal_decreasing_in_pt(ps, target):
    lo, hi = sorted(ps)
    pt = (lambda p: p) if target == 1 else (lambda p: 1 - p)
    a, b = (lo, hi) if pt(lo) < pt(hi) else (hi, lo)
    assert focal_loss(a, target) > focal_loss(b, target) >= 0.0


def test_focal_rejects_bad_target():
    with pytest.raises(ValueError):
        focal_loss(0.5, 2)
    with pytest.raises(ValueError):
        FocalParams(alpha=0.0)


def test_focal_array_matches_scalar():
    rng = np.random.default_rng(0)
    p = rng.uniform(0.01, 0.99, 50)
    t = rng.integers(0, 2, 50)
    np.testing.assert_allclose(focal_loss_array(p, t), [focal_loss(a, int(b)) for a, b in zip(p, t)],
                               rtol=1e-14)


def central_diff(f, x, h):
    return (f(x + h) - f(x - h)) / (2 * h)


@pytest.mark.parametrize("gamma", [0.0, 0.5, 2.0])
@pytest.mark.parametrize("target", [0, 1])
def test_focal_gradient_finite_difference(gamma, target):
    rng = np.random.default_rng(int(gamma * 10) + target)
    params = FocalParams(0.25, gamma)
    for p in rng.uniform(0.02, 0.98, 30):
        fd = central_diff(lambda q: focal_loss(q, target, params), p, 1e-6)
        assert focal_loss_grad(p, target, params) == pytest.approx(fd, rel=1e-4, abs=1e-10)


def test_giou_loss_examples():
    assert giou_loss(Box(0, 0, 2, 2), Box(0, 0, 2, 2)) == 0.0
    assert giou_loss(Box(0, 0, 2, 2), Box(2, 0, 4, 2)) == pytest.approx(1.0)
    assert giou_loss(Box(0, 0, 1, 1), Box(1e6, 1e6, 1e6 + 1, 1e6 + 1)) == pytest.approx(2.0, abs=1e-9)
    with pytest.raises(GeometryError):
        giou_loss(Box(0, 0, 0, 1), Box(0, 0, 1, 1))


@st.composite
def boxes(draw):
    x, y = draw(st.floats(-50, 50)), draw(st.floats(-50, 50))
    w, h = draw(st.floats(1, 60)), draw(st.floats(1, 60))
    return Box(x, y, x + w, y + h)


@given(boxes(), boxes())
def test_giou_loss_symmetric_and_bounded(a, b):
    assert giou_loss(a, b) == pytest.approx(giou_loss(b, a), abs=1e-14)
    assert 0.0 <= giou_loss(a, b) <= 2.0


def test_giou_loss_zero_iff_identical():
    assert giou_loss(Box(1, 2, 3, 4), Box(1, 2, 3, 4)) == 0.0
    assert giou_loss(Box(1, 2, 3, 4), Box(1, 2, 3, 4.001)) > 0.0


def test_giou_gradient_finite_difference():
    rng = np.random.default_rng(42)
    checked = 0
    while checked < 100:
        t = rng.uniform(0, 50, 2)
        target = Box(*t, *(t + rng.uniform(5, 40, 2)))
        p = rng.uniform(-10, 60, 2)
        pred = Box(*p, *(p + rng.uniform(5, 40, 2)))
        g = giou_loss_grad(pred, target)
        base = np.array(pred.as_tuple())
        for i in range(4):
            def f(v, i=i):
                x = base.copy()
                x[i] = v
                return giou_loss(Box(*x), target)
            fd = central_diff(f, base[i], 1e-5)
            assert g[i] == pytest.approx(fd, rel=1e-4, abs=1e-9)
        checked += 1


def test_iou_targets():
    gts = [[0, 0, 10, 10], [20, 20, 30, 30]]
    preds = [[0, 0, 10, 10], [0, 0, 10, 6], [20, 20, 30, 30]]
    a = Assignment(np.array([0, 0, NEGATIVE]), 2)
    np.testing.assert_allclose(iou_targets(preds, a, gts), [1.0, 0.6, 0.0])
    with pytest.raises(ValueError):
        iou_targets(preds, Assignment(np.array([0, 5, NEGATIVE]), 6), gts)


def test_fuse_examples():
    assert fuse_scores(1.0, 1.0) == 1.0
    assert fuse_scores(0.81, 0.25) == 0.45
    assert fuse_scores(0.37, 0.0) == 0.0
    with pytest.raises(ValueError):
        fuse_scores(1.2, 0.5)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_fuse_properties(c, i, bump):
    f = fuse_scores(c, i)
    assert f == fuse_scores(i, c)
    assert f <= max(c, i) + 1e-15
    assert fuse_scores(min(1.0, c + bump), i) >= f


def test_fuse_ranking_invariant_under_common_power():
    rng = np.random.default_rng(9)
    c, i = rng.uniform(0, 1, 200), rng.uniform(0, 1, 200)
    base = np.argsort(-fuse_scores(c, i), kind="stable")
    for k in (0.5, 2.0, 3.0):
        np.testing.assert_array_equal(np.argsort(-fuse_scores(c ** k, i ** k), kind="stable"), base)
