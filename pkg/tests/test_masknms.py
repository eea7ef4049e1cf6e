import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deformtab.annotations import AnnotationSet, PolygonInstance
from deformtab.errors import InvalidInputError, ShapeError
from deformtab.losses import mask_iou
from deformtab.masknms import Candidate, PackedMasks, binarize, mask_nms, nms_annotation_sets
from oracles import brute_nms, random_blob_masks


def square(x, y, s, size=20):
    m = np.zeros((size, size), bool)
    m[y:y + s, x:x + s] = True
    return m


class TestBinarize:
    def test_above(self):
        assert binarize(np.full((3, 3), 0.6)).all()

    def test_boundary_is_excluded(self):
        assert not binarize(np.full((3, 3), 0.5)).any()

    def test_mixed(self):
        values = np.array([[0.1, 0.7, 0.5, 0.51], [0.9, 0.2, 0.3, 0.4],
                           [0.5, 0.5, 0.99, 0.0], [1.0, 0.6, 0.49, 0.8]])
        assert binarize(values).sum() == 7


class TestCandidate:
    def test_bbox(self):
        assert Candidate(square(3, 5, 4), 0.5).bbox == (3, 5, 4, 4)

    def test_float_mask_binarized(self):
        assert Candidate(np.array([[0.2, 0.9]]), 1.0).mask.tolist() == [[False, True]]

    def test_rejects_empty_and_nan(self):
        with pytest.raises(InvalidInputError):
            Candidate(np.zeros((2, 2)), 0.3)
        with pytest.raises(InvalidInputError):
            Candidate(np.ones((2, 2)), float("nan"))


class TestPacked:
    def test_iou_matches_direct_counting(self, rng):
        masks = random_blob_masks(rng, 12, size=23)
        packed = PackedMasks(masks)
        for i in range(12):
            np.testing.assert_allclose(packed.iou_with(i, range(12)), [mask_iou(masks[i], m) for m in masks])

    def test_mixed_shapes(self):
        with pytest.raises(ShapeError):
            PackedMasks([np.zeros((2, 2)), np.zeros((3, 3))])


class TestMaskNms:
    def test_empty(self):
        assert mask_nms([], []) == []

    def test_single(self):
        assert mask_nms([square(0, 0, 3)], [0.1]) == [0]

    def test_duplicate_suppressed(self):
        assert mask_nms([square(2, 2, 5), square(2, 2, 5)], [0.8, 0.9], 0.5) == [1]

    def test_disjoint_kept(self):
        assert mask_nms([square(0, 0, 3), square(10, 10, 3)], [0.2, 0.7], 0.0) == [1, 0]

    def test_suppressed_masks_still_suppress(self):
        row = np.zeros((3, 30), bool)
        a, b, c = row.copy(), row.copy(), row.copy()
        a[:, 0:10], b[:, 5:15], c[:, 10:20] = True, True, True
        # b overlaps both neighbours at IoU 1/3; a and c are disjoint
        assert mask_nms([a, b, c], [0.9, 0.8, 0.7], 0.3) == [0]
        assert mask_nms([a, b, c], [0.9, 0.8, 0.7], 0.4) == [0, 1, 2]

    def test_ties_prefer_lower_index(self):
        assert mask_nms([square(2, 2, 5)] * 3, [0.5, 0.5, 0.5]) == [0]

    def test_iou_equal_to_threshold_is_kept(self):
        # IoU of these two is exactly 0.5
        assert mask_nms([square(0, 0, 4), np.pad(square(0, 0, 4)[:, :2], ((0, 0), (0, 18)))], [0.9, 0.8], 0.5) == [0, 1]

    def test_validation(self):
        with pytest.raises(InvalidInputError):
            mask_nms([square(0, 0, 2)], [0.5], 1.5)
        with pytest.raises(ShapeError):
            mask_nms([square(0, 0, 2)], [0.5, 0.4])
        with pytest.raises(InvalidInputError):
            mask_nms([square(0, 0, 2)], [float("inf")])

    @pytest.mark.parametrize("seed", range(25))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 51))
        masks = random_blob_masks(rng, n)
        scores = rng.random(n).round(2).tolist()
        for t in (0.0, float(rng.random()), 0.5, 1.0):
            assert mask_nms(masks, scores, t) == brute_nms(masks, scores, t)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0, 1), st.floats(0, 1))
    def test_threshold_monotone(self, seed, a, b):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 20))
        masks, scores = random_blob_masks(rng, n, size=16), rng.random(n)
        low, high = sorted((a, b))
        assert set(mask_nms(masks, scores, low)) <= set(mask_nms(masks, scores, high))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_threshold_extremes(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 20))
        masks, scores = random_blob_masks(rng, n, size=16), rng.random(n)
        assert sorted(mask_nms(masks, scores, 1.0)) == list(range(n))
        kept = mask_nms(masks, scores, 0.0)
        for i in kept:
            for j in kept:
                assert i == j or not (masks[i] & masks[j]).any()


class TestAnnotationSets:
    def test_keeps_instance_order(self):
        def box(i, x0, y0, s):
            return PolygonInstance(id=i, vertices=((x0, y0), (x0 + s, y0), (x0 + s, y0 + s), (x0, y0 + s)))

        ann = AnnotationSet(image_id=7, width=30, height=30,
                            instances=(box(1, 0, 0, 10), box(2, 0, 0, 10), box(3, 15, 15, 8)))
        scores = {(7, 1): 0.4, (7, 2): 0.9, (7, 3): 0.1}
        (out,) = nms_annotation_sets([ann], scores, 0.5)
        assert [i.id for i in out.instances] == [2, 3]
        (same,) = nms_annotation_sets([ann], scores, 1.0)
        assert same == ann
