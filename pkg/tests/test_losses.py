import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deformtab import tensor as T
from deformtab.errors import DomainError, InvalidInputError, ShapeError
from deformtab.losses import (
    Box,
    InstanceCrop,
    base_loss,
    bce_loss,
    dice_loss,
    eiou_loss,
    mask_iou,
    scale_aware_loss,
    scale_weight,
)


def half_mask(n=4):
    gt = np.zeros((n, n))
    gt[: n // 2] = 1
    return gt


def direct_scale_aware(crops):
    """Per-pixel loops: each pixel carries its cross-entropy plus the crop's Dice term."""
    total = 0.0
    for pred, gt, area in crops:
        h, w = len(gt), len(gt[0])
        overlap = sum(pred[i][j] * gt[i][j] for i in range(h) for j in range(w))
        dice = 1 - 2 * overlap / (sum(map(sum, pred)) + sum(map(sum, gt)) + 1e-6)
        acc = 0.0
        for i in range(h):
            for j in range(w):
                p = min(max(pred[i][j], 1e-7), 1 - 1e-7)
                acc += -(gt[i][j] * math.log(p) + (1 - gt[i][j]) * math.log(1 - p)) + dice
        total += (1 + math.log(1 / area)) / area * acc / (h * w)
    return total / len(crops)


class TestBce:
    def test_perfect(self):
        assert bce_loss(np.eye(5), np.eye(5)).item() <= 1.1e-7

    def test_half(self):
        assert bce_loss(np.full((4, 4), 0.5), half_mask()).item() == pytest.approx(math.log(2), abs=1e-4)

    def test_inverted_hits_clamp(self):
        with T.double_precision():
            assert bce_loss(1 - np.eye(4), np.eye(4)).item() == pytest.approx(-math.log(1e-7), rel=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            bce_loss(np.zeros((2, 2)), np.zeros((2, 3)))


class TestDice:
    def test_perfect(self):
        assert dice_loss(half_mask(), half_mask()).item() <= 1e-5

    def test_all_ones_against_half(self):
        with T.double_precision():
            assert dice_loss(np.ones((4, 4)), half_mask()).item() == pytest.approx(1 / 3, abs=1e-6)

    def test_empty_prediction(self):
        assert dice_loss(np.zeros((4, 4)), half_mask()).item() == pytest.approx(1.0, abs=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            dice_loss(np.zeros((2, 2)), np.zeros((3, 2)))


class TestBase:
    def test_half_map(self):
        # dice of 0.5 everywhere against half ones: 1 - 2*4/(8+8) = 0.5
        with T.double_precision():
            got = base_loss(np.full((4, 4), 0.5), half_mask()).item()
        assert got == pytest.approx(math.log(2) + 0.5, abs=1e-6)

    def test_perfect(self):
        assert base_loss(half_mask(), half_mask()).item() == pytest.approx(0, abs=1e-5)

    def test_dominates_terms(self, rng):
        pred, gt = rng.random((6, 6)), (rng.random((6, 6)) > 0.5).astype(float)
        total = base_loss(pred, gt).item()
        assert total >= max(bce_loss(pred, gt).item(), dice_loss(pred, gt).item())


class TestScaleWeight:
    def test_values(self):
        assert scale_weight(1.0) == 1.0
        assert scale_weight(0.1) == pytest.approx(1 + math.log(10), abs=1e-4)
        assert scale_weight(math.exp(-1)) == pytest.approx(2.0)

    @pytest.mark.parametrize("area", [0.0, -0.5, 1.5, math.nan])
    def test_domain(self, area):
        with pytest.raises(DomainError):
            scale_weight(area)

    def test_decreasing_and_convex(self):
        grid = np.linspace(1e-3, 1, 500)
        values = np.array([scale_weight(a) for a in grid])
        assert (np.diff(values) < 0).all()
        assert (np.diff(values, 2) > 0).all()

    def test_gentler_than_inverse_area(self):
        h, area = 1e-6, 0.05
        inverse = abs((1 / (area + h) - 1 / (area - h)) / (2 * h))
        weight = abs((scale_weight(area + h) - scale_weight(area - h)) / (2 * h))
        assert inverse == pytest.approx(400, rel=1e-4)
        assert weight == pytest.approx(20, rel=1e-4)
        assert inverse > weight


class TestScaleAware:
    def test_perfect_full_area(self):
        assert scale_aware_loss([InstanceCrop(half_mask(), half_mask(), 1.0)]).item() == pytest.approx(0, abs=1e-5)

    def test_duplicate_instances_average(self, rng):
        crop = InstanceCrop(rng.random((5, 5)), (rng.random((5, 5)) > 0.4).astype(float), 0.2)
        one = scale_aware_loss([crop]).item()
        assert scale_aware_loss([crop, crop]).item() == pytest.approx(one, rel=1e-6)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_direct_summation(self, seed):
        rng = np.random.default_rng(seed)
        crops = [(rng.uniform(0.01, 0.99, (8, 8)), (rng.random((8, 8)) > 0.5).astype(float), a)
                 for a in rng.uniform(0.01, 1.0, 2)]
        with T.double_precision():
            got = scale_aware_loss([InstanceCrop(p, g, a) for p, g, a in crops]).item()
        oracle = direct_scale_aware([(p.tolist(), g.tolist(), a) for p, g, a in crops])
        assert got == pytest.approx(oracle, abs=1e-6)

    @pytest.mark.parametrize("shape", [(8, 8), (3, 5), (6, 2), (7, 7), (4, 9)])
    def test_gradients(self, shape):
        rng = np.random.default_rng(shape[0] * 10 + shape[1])
        gt_a = (rng.random(shape) > 0.5).astype(float)
        gt_b = (rng.random(shape) > 0.3).astype(float)
        report = T.grad_check(
            lambda p, q: scale_aware_loss([InstanceCrop(p, gt_a, 0.3), InstanceCrop(q, gt_b, 0.02)]),
            [rng.uniform(0.05, 0.95, shape), rng.uniform(0.05, 0.95, shape)])
        assert report.passed, report

    @pytest.mark.parametrize("loss", [bce_loss, dice_loss])
    def test_pixel_loss_gradients(self, loss, rng):
        gt = (rng.random((6, 7)) > 0.5).astype(float)
        assert T.grad_check(lambda p: loss(p, gt), [rng.uniform(0.05, 0.95, (6, 7))]).passed

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            scale_aware_loss([])

    def test_from_masks_crops_and_normalizes(self, rng):
        gt = np.zeros((10, 20), bool)
        gt[2:5, 3:7] = True
        pred = rng.random((10, 20))
        crop = InstanceCrop.from_masks(pred, gt)
        assert crop.area == pytest.approx(12 / 200)
        np.testing.assert_array_equal(crop.pred, pred[2:5, 3:7])

    def test_from_masks_gradient_flows_to_window(self, rng):
        gt = np.zeros((6, 6), bool)
        gt[1:3, 2:5] = True
        pred = T.Tensor(rng.uniform(0.1, 0.9, (6, 6)), requires_grad=True)
        scale_aware_loss([InstanceCrop.from_masks(pred, gt)]).backward()
        outside = np.ones((6, 6), bool)
        outside[1:3, 2:5] = False
        assert not pred.grad[outside].any() and pred.grad[~outside].all()

    def test_empty_mask(self):
        with pytest.raises(InvalidInputError):
            InstanceCrop.from_masks(np.zeros((3, 3)), np.zeros((3, 3), bool))

    def test_area_domain(self):
        with pytest.raises(DomainError):
            InstanceCrop(np.zeros((2, 2)), np.ones((2, 2)), 0.0)


class TestEiou:
    def test_identical(self):
        assert eiou_loss(Box(3, 4, 2, 5), Box(3, 4, 2, 5)) == 0

    def test_hand_case(self):
        assert eiou_loss(Box(0, 0, 2, 2), Box(1, 0, 2, 2)) == pytest.approx(1 - 1 / 3 + 1 / 13, abs=1e-12)
        assert eiou_loss(Box(0, 0, 2, 2), Box(1, 0, 2, 2)) == pytest.approx(0.7436, abs=1e-4)

    def test_nonnegative_sweep(self, rng):
        centers = rng.uniform(-50, 50, (10_000, 2, 2))
        sizes = rng.uniform(0.1, 40, (10_000, 2, 2))
        boxes = np.concatenate([centers, sizes], axis=-1)
        assert (eiou_loss(boxes[:, 0], boxes[:, 1]) >= 0).all()

    def test_degenerate(self):
        with pytest.raises(DomainError):
            eiou_loss(Box(0, 0, 0, 2), Box(1, 0, 2, 2))


class TestMaskIou:
    def test_counts(self):
        a = np.zeros((5, 5), bool)
        b = np.zeros((5, 5), bool)
        a[0, :4] = True
        b[0, 2:5] = True
        b[1, 2:5] = True
        assert mask_iou(a, b) == 0.25

    def test_identical_disjoint_empty(self):
        a = np.eye(4, dtype=bool)
        assert mask_iou(a, a) == 1.0
        assert mask_iou(a, ~a) == 0.0
        assert mask_iou(np.zeros((2, 2)), np.zeros((2, 2))) == 0.0

    @given(st.integers(0, 2**16 - 1), st.integers(0, 2**16 - 1))
    def test_symmetric(self, x, y):
        a = np.unpackbits(np.array([x >> 8, x & 255], np.uint8)).reshape(4, 4)
        b = np.unpackbits(np.array([y >> 8, y & 255], np.uint8)).reshape(4, 4)
        assert mask_iou(a, b) == mask_iou(b, a)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            mask_iou(np.zeros((2, 2)), np.zeros((2, 3)))
