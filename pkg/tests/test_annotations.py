import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deformtab.annotations import (
    AnnotationSet,
    PolygonInstance,
    annotation_sets_from_coco,
    annotation_sets_to_coco,
    densify,
    load_annotation_set,
    polygon_area_bbox,
    rasterize,
    save_annotation_set,
)
from deformtab.errors import InvalidAnnotationError, InvalidInputError


class TestAreaBbox:
    def test_rectangle(self):
        area, bbox = polygon_area_bbox([(0, 0), (4, 0), (4, 2), (0, 2)])
        assert area == 8 and bbox == (0, 0, 4, 2)

    def test_triangle(self):
        assert polygon_area_bbox([(0, 0), (1, 0), (0, 1)])[0] == 0.5

    def test_collinear(self):
        with pytest.raises(InvalidAnnotationError):
            polygon_area_bbox([(0, 0), (1, 1), (2, 2)])

    def test_too_few_vertices(self):
        with pytest.raises(InvalidAnnotationError):
            PolygonInstance([(0, 0), (1, 0)])

    def test_orientation_does_not_matter(self):
        pts = [(0, 0), (4, 0), (4, 2), (0, 2)]
        assert polygon_area_bbox(pts[::-1])[0] == 8


def brute_raster(vertices, w, h):
    """Even-odd point-in-polygon at each pixel center."""
    v = np.asarray(vertices, float)
    mask = np.zeros((h, w), bool)
    for y in range(h):
        for x in range(w):
            px, py = x + 0.5, y + 0.5
            inside = False
            for (x0, y0), (x1, y1) in zip(v, np.roll(v, -1, axis=0)):
                if (y0 <= py) != (y1 <= py):
                    xc = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
                    if px < xc:
                        inside = not inside
            mask[y, x] = inside
    return mask


class TestRasterize:
    def test_unit_square(self):
        assert rasterize(PolygonInstance([(2, 2), (4, 2), (4, 4), (2, 4)]), (8, 8)).sum() == 4

    def test_outside_canvas(self):
        assert not rasterize(PolygonInstance([(20, 20), (30, 20), (30, 30)]), (10, 10)).any()

    def test_large_convex_polygon_area(self):
        t = np.linspace(0, 2 * np.pi, 64, endpoint=False)
        poly = PolygonInstance(np.c_[50 + 45 * np.cos(t), 50 + 45 * np.sin(t)])
        assert rasterize(poly, (100, 100)).sum() == pytest.approx(poly.area, rel=0.02)

    def test_adjacent_cells_do_not_overlap(self):
        a = PolygonInstance([(0, 0), (5.5, 0), (5.5, 9), (0, 9)])
        b = PolygonInstance([(5.5, 0), (10, 0), (10, 9), (5.5, 9)])
        ma, mb = rasterize(a, (10, 9)), rasterize(b, (10, 9))
        assert not (ma & mb).any() and (ma | mb).all()

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(st.floats(-3, 15), st.floats(-3, 15)), min_size=3, max_size=8))
    def test_matches_point_in_polygon_oracle(self, pts):
        try:
            poly = PolygonInstance(pts)
        except InvalidAnnotationError:
            return
        np.testing.assert_array_equal(rasterize(poly, (12, 12)), brute_raster(poly.vertices, 12, 12))


polygons = st.lists(st.tuples(st.floats(0, 500, allow_nan=False), st.floats(0, 500, allow_nan=False)),
                    min_size=3, max_size=10)


class TestJson:
    @settings(max_examples=50)
    @given(st.lists(polygons, max_size=5))
    def test_round_trip(self, tmp_path_factory, polys):
        insts = []
        for i, p in enumerate(polys):
            try:
                insts.append(PolygonInstance(p, id=i + 1))
            except InvalidAnnotationError:
                pass
        ann = AnnotationSet(image_id=3, width=500, height=500, instances=tuple(insts), file_name="x.png")
        path = tmp_path_factory.mktemp("j") / "a.json"
        save_annotation_set(path, ann)
        assert load_annotation_set(path) == ann

    def test_coco_fields(self):
        inst = PolygonInstance([(0, 0), (4, 0), (4, 2), (0, 2)], id=7)
        doc = annotation_sets_to_coco([AnnotationSet(1, 10, 10, (inst,))])
        rec = doc["annotations"][0]
        assert rec["segmentation"] == [[0, 0, 4, 0, 4, 2, 0, 2]]
        assert rec["bbox"] == [0, 0, 4, 2] and rec["area"] == 8 and rec["iscrowd"] == 0
        assert rec["category_id"] == 1

    def test_scores(self):
        inst = PolygonInstance([(0, 0), (4, 0), (4, 2)], id=2)
        doc = annotation_sets_to_coco([AnnotationSet(1, 10, 10, (inst,))], {(1, 2): 0.25})
        sets, scores = annotation_sets_from_coco(json.loads(json.dumps(doc)), with_scores=True)
        assert scores == {(1, 2): 0.25} and sets[0].instances[0] == inst

    def test_duplicate_ids(self):
        inst = PolygonInstance([(0, 0), (4, 0), (4, 2)], id=2)
        with pytest.raises(InvalidAnnotationError):
            AnnotationSet(1, 10, 10, (inst, inst))

    def test_orphan_annotation(self):
        doc = {"images": [], "annotations": [{"id": 1, "image_id": 4, "segmentation": [[0, 0, 1, 0, 0, 1]]}]}
        with pytest.raises(InvalidAnnotationError):
            annotation_sets_from_coco(doc)

    def test_invalid_json_file(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{nope")
        with pytest.raises(InvalidInputError):
            load_annotation_set(p)

    def test_non_finite_vertex(self):
        with pytest.raises(InvalidAnnotationError):
            PolygonInstance([(0, 0), (float("nan"), 0), (0, 1)])


class TestDensify:
    def test_step_bound_and_original_vertices_kept(self):
        v = np.array([(0, 0), (20, 0), (20, 9), (0, 9)], float)
        d = densify(v, 4.0)
        seg = np.hypot(*np.diff(np.vstack([d, d[:1]]), axis=0).T)
        assert seg.max() <= 4.0 + 1e-9
        for p in v:
            assert np.any(np.all(np.isclose(d, p), axis=1))
