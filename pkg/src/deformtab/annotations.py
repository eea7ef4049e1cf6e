"""Cell polygons, annotation sets, rasterization and COCO-style JSON."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidAnnotationError, InvalidInputError

__all__ = [
    "CELL_CATEGORY",
    "PolygonInstance",
    "AnnotationSet",
    "polygon_area_bbox",
    "rasterize",
    "densify",
    "annotation_set_to_coco",
    "annotation_sets_to_coco",
    "annotation_sets_from_coco",
    "save_annotation_set",
    "load_annotation_set",
]

CELL_CATEGORY = {"id": 1, "name": "cell"}
COORD_DECIMALS = 2


def polygon_area_bbox(vertices) -> tuple[float, tuple[float, float, float, float]]:
    """Shoelace area and tight ``(x, y, w, h)`` box of a simple polygon."""
    pts = np.asarray(vertices, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise InvalidAnnotationError(f"polygon needs at least 3 (x, y) vertices, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise InvalidAnnotationError("polygon has non-finite vertices")
    x, y = pts[:, 0], pts[:, 1]
    # shift to the first vertex to keep the cross products well conditioned
    x0, y0 = x - x[0], y - y[0]
    area = 0.5 * abs(float(np.dot(x0, np.roll(y0, -1)) - np.dot(np.roll(x0, -1), y0)))
    if area <= 0.0:
        raise InvalidAnnotationError("degenerate polygon with zero area")
    xmin, ymin = float(x.min()), float(y.min())
    return area, (xmin, ymin, float(x.max()) - xmin, float(y.max()) - ymin)


@dataclass(frozen=True)
class PolygonInstance:
    """One table cell.

    Vertices are quantized to two decimals on construction, so that the JSON
    form is an exact image of the in-memory value.  ``area`` and ``bbox`` are
    always derived from the vertices.
    """

    vertices: tuple[tuple[float, float], ...]
    id: int = 0
    category: int = CELL_CATEGORY["id"]

    def __post_init__(self):
        pts = np.round(np.asarray(self.vertices, dtype=np.float64), COORD_DECIMALS)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise InvalidAnnotationError(f"vertices must be (x, y) pairs, got shape {pts.shape}")
        verts = tuple((float(x) + 0.0, float(y) + 0.0) for x, y in pts)
        area, bbox = polygon_area_bbox(verts)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "_area", area)
        object.__setattr__(self, "_bbox", bbox)

    @property
    def area(self) -> float:
        return self._area

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        return self._bbox

    def as_array(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=np.float64)

    def with_vertices(self, vertices) -> "PolygonInstance":
        return PolygonInstance(vertices=vertices, id=self.id, category=self.category)


@dataclass(frozen=True)
class AnnotationSet:
    image_id: int
    width: int
    height: int
    instances: tuple[PolygonInstance, ...] = ()
    file_name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        ids = [inst.id for inst in self.instances]
        if len(set(ids)) != len(ids):
            raise InvalidAnnotationError(f"duplicate instance ids in image {self.image_id}")
        if self.width < 1 or self.height < 1:
            raise InvalidAnnotationError(f"invalid image size {self.width}x{self.height}")

    def replace(self, **changes) -> "AnnotationSet":
        kwargs = dict(image_id=self.image_id, width=self.width, height=self.height,
                      instances=self.instances, file_name=self.file_name)
        kwargs.update(changes)
        return AnnotationSet(**kwargs)


def densify(vertices, max_step: float) -> np.ndarray:
    """Insert evenly spaced points so that no edge is longer than ``max_step``."""
    pts = np.asarray(vertices, dtype=np.float64)
    out = []
    for a, b in zip(pts, np.roll(pts, -1, axis=0)):
        n = max(1, int(math.ceil(float(np.hypot(*(b - a))) / max_step)))
        t = np.arange(n)[:, None] / n
        out.append(a + t * (b - a))
    return np.concatenate(out)


def rasterize(poly, size) -> np.ndarray:
    """Even-odd scanline fill of a polygon into a ``(height, width)`` bool mask.

    A pixel is set when its center ``(x + 0.5, y + 0.5)`` lies inside the
    polygon.  Edges use the half-open rule ``y0 <= yc < y1`` so that cells
    sharing an edge never claim the same pixel.
    """
    width, height = size
    pts = poly.as_array() if isinstance(poly, PolygonInstance) else np.asarray(poly, dtype=np.float64)
    mask = np.zeros((height, width), dtype=bool)
    if len(pts) < 3:
        return mask
    x0, y0 = pts[:, 0], pts[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    ymin = max(int(math.floor(y0.min() - 0.5)), 0)
    ymax = min(int(math.ceil(y0.max() - 0.5)), height - 1)
    if ymax < ymin:
        return mask
    rows = np.arange(ymin, ymax + 1)
    yc = rows[:, None] + 0.5
    lo, hi = np.minimum(y0, y1), np.maximum(y0, y1)
    active = (lo <= yc) & (yc < hi)
    dy = np.where(y1 != y0, y1 - y0, 1.0)
    xs = x0 + (yc - y0) * (x1 - x0) / dy
    xs = np.where(active, xs, np.inf)
    xs.sort(axis=1)
    for r, row_xs in zip(rows, xs):
        row_xs = row_xs[np.isfinite(row_xs)]
        for xa, xb in zip(row_xs[0::2], row_xs[1::2]):
            c0 = max(int(math.ceil(xa - 0.5)), 0)
            c1 = min(int(math.ceil(xb - 0.5)), width)
            if c1 > c0:
                mask[r, c0:c1] = True
    return mask


# -- JSON ---------------------------------------------------------------------


def _flat_coords(inst: PolygonInstance) -> list[float]:
    return [round(c, COORD_DECIMALS) for xy in inst.vertices for c in xy]


def _annotation_record(inst: PolygonInstance, image_id: int, extra=None) -> dict:
    x, y, w, h = inst.bbox
    rec = {
        "id": inst.id,
        "image_id": image_id,
        "category_id": inst.category,
        "segmentation": [_flat_coords(inst)],
        "bbox": [round(x, COORD_DECIMALS), round(y, COORD_DECIMALS),
                 round(w, COORD_DECIMALS), round(h, COORD_DECIMALS)],
        "area": round(inst.area, 4),
        "iscrowd": 0,
    }
    if extra:
        rec.update(extra)
    return rec


def _image_record(ann: AnnotationSet) -> dict:
    return {"id": ann.image_id, "file_name": ann.file_name, "width": ann.width, "height": ann.height}


def annotation_sets_to_coco(sets, scores=None) -> dict:
    """COCO-style dict for one or more annotation sets.

    ``scores`` optionally maps ``(image_id, instance_id)`` to a confidence,
    which is written as a ``score`` field on the annotation.
    """
    images, annotations = [], []
    for ann in sets:
        images.append(_image_record(ann))
        for inst in ann.instances:
            extra = None
            if scores is not None:
                extra = {"score": float(scores[(ann.image_id, inst.id)])}
            annotations.append(_annotation_record(inst, ann.image_id, extra))
    return {"images": images, "annotations": annotations, "categories": [dict(CELL_CATEGORY)]}


def annotation_set_to_coco(ann: AnnotationSet) -> dict:
    return annotation_sets_to_coco([ann])


def _parse_segmentation(seg, ann_id):
    if not isinstance(seg, list) or not seg:
        raise InvalidAnnotationError(f"annotation {ann_id}: segmentation must be a non-empty polygon list")
    if isinstance(seg[0], (int, float)):
        seg = [seg]
    if len(seg) != 1:
        raise InvalidAnnotationError(f"annotation {ann_id}: multi-part segmentations are not supported")
    flat = seg[0]
    if len(flat) % 2 or len(flat) < 6:
        raise InvalidAnnotationError(f"annotation {ann_id}: polygon needs an even count of >= 6 coordinates")
    return [(float(flat[i]), float(flat[i + 1])) for i in range(0, len(flat), 2)]


def annotation_sets_from_coco(doc: dict, with_scores: bool = False):
    """Parse a COCO-style dict into annotation sets (ordered as ``images``).

    With ``with_scores`` a second value maps ``(image_id, instance_id)`` to
    the ``score`` of each annotation.
    """
    try:
        images = doc["images"]
        annotations = doc.get("annotations", [])
    except (TypeError, KeyError) as exc:
        raise InvalidAnnotationError("COCO document needs an 'images' list") from exc
    by_image: dict[int, list] = {}
    scores = {}
    for rec in annotations:
        try:
            image_id = int(rec["image_id"])
            inst = PolygonInstance(_parse_segmentation(rec["segmentation"], rec.get("id")),
                                   id=int(rec["id"]), category=int(rec.get("category_id", 1)))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvalidAnnotationError):
                raise
            raise InvalidAnnotationError(f"malformed annotation record: {exc}") from exc
        by_image.setdefault(image_id, []).append(inst)
        if with_scores:
            if "score" not in rec:
                raise InvalidAnnotationError(f"annotation {inst.id} has no score")
            scores[(image_id, inst.id)] = float(rec["score"])
    sets = []
    for img in images:
        image_id = int(img["id"])
        sets.append(AnnotationSet(image_id=image_id, width=int(img["width"]), height=int(img["height"]),
                                  instances=tuple(by_image.get(image_id, ())),
                                  file_name=img.get("file_name", "")))
    known = {a.image_id for a in sets}
    orphans = set(by_image) - known
    if orphans:
        raise InvalidAnnotationError(f"annotations reference unknown image ids {sorted(orphans)}")
    return (sets, scores) if with_scores else sets


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def save_annotation_set(path, ann: AnnotationSet) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(annotation_set_to_coco(ann)))


def load_annotation_set(path) -> AnnotationSet:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{path}: invalid JSON ({exc})") from exc
    sets = annotation_sets_from_coco(doc)
    if len(sets) != 1:
        raise InvalidAnnotationError(f"{path}: expected exactly one image, found {len(sets)}")
    return sets[0]
