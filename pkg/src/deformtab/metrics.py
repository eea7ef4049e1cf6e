"""COCO-style precision/recall, 101-point AP and mAP over mask or box IoU.

There is a single category, so mAP equals AP.  Detections from all
images are ranked together by score for each IoU threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .annotations import rasterize
from .errors import InvalidInputError, ShapeError, UndefinedMetricError
from .masknms import PackedMasks

__all__ = [
    "IOU_THRESHOLDS", "RECALL_POINTS", "EvalPair", "MatchResult", "PRCurve", "mask_iou_matrix",
    "box_iou_matrix", "match", "pr_curve", "average_precision", "map_at", "evaluate_annotations",
]

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
# i / 100 rather than a linspace so recalls such as 3/10 compare equal to their grid point
RECALL_POINTS = np.arange(101) / 100


def mask_iou_matrix(dets, gts) -> np.ndarray:
    """``len(dets) x len(gts)`` pixel IoU matrix."""
    if len(dets) == 0 or len(gts) == 0:
        return np.zeros((len(dets), len(gts)))
    packed = PackedMasks(list(dets) + list(gts))
    n = len(dets)
    return np.stack([packed.iou_with(i, np.arange(n, n + len(gts))) for i in range(n)])


def box_iou_matrix(dets, gts) -> np.ndarray:
    """IoU matrix for ``(x, y, w, h)`` boxes."""
    a = np.asarray(dets, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(gts, dtype=np.float64).reshape(-1, 4)
    ax1, ay1 = a[:, 0] + a[:, 2], a[:, 1] + a[:, 3]
    bx1, by1 = b[:, 0] + b[:, 2], b[:, 1] + b[:, 3]
    iw = np.clip(np.minimum(ax1[:, None], bx1) - np.maximum(a[:, None, 0], b[:, 0]), 0, None)
    ih = np.clip(np.minimum(ay1[:, None], by1) - np.maximum(a[:, None, 1], b[:, 1]), 0, None)
    inter = iw * ih
    union = (a[:, 2] * a[:, 3])[:, None] + b[:, 2] * b[:, 3] - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)


def _tight_box(mask) -> tuple[float, float, float, float]:
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return (0.0, 0.0, 0.0, 0.0)
    return (float(xs.min()), float(ys.min()), float(xs.max() - xs.min() + 1), float(ys.max() - ys.min() + 1))


@dataclass
class EvalPair:
    """Detections and ground truth of one image.

    With ``iou_type="mask"`` the entries are boolean masks of one shape.
    With ``iou_type="box"`` they are ``(x, y, w, h)`` boxes, or masks,
    which are then reduced to their tight boxes.
    """

    detections: list
    scores: np.ndarray
    ground_truths: list
    iou_type: str = "mask"

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if len(self.detections) != len(self.scores):
            raise ShapeError(f"{len(self.detections)} detections but {len(self.scores)} scores")
        if not np.isfinite(self.scores).all():
            raise InvalidInputError("detection scores must be finite")
        if self.iou_type not in ("mask", "box"):
            raise InvalidInputError(f"iou_type must be 'mask' or 'box', got {self.iou_type!r}")

    def iou_matrix(self) -> np.ndarray:
        if self.iou_type == "mask":
            return mask_iou_matrix(self.detections, self.ground_truths)

        def boxes(items):
            return [_tight_box(x) if np.ndim(x) == 2 else tuple(x) for x in items]

        return box_iou_matrix(boxes(self.detections), boxes(self.ground_truths))


@dataclass
class MatchResult:
    """``tp[i]`` is true when detection ``i`` (input order) matched a ground truth."""

    tp: np.ndarray
    matched_gt: np.ndarray
    fn: int

    @property
    def fp(self) -> int:
        return int((~self.tp).sum())


def _score_order(scores) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.arange(len(scores)), -scores))


def match(iou: np.ndarray, scores, iou_threshold: float) -> MatchResult:
    """Greedy matching of detections (rows of ``iou``) to ground truths (columns).

    Detections are visited by descending score; each takes the unmatched
    ground truth of highest IoU, if that IoU reaches ``iou_threshold``.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise InvalidInputError(f"IoU threshold must lie in (0, 1], got {iou_threshold}")
    iou = np.asarray(iou, dtype=np.float64)
    if iou.ndim != 2 or iou.shape[0] != len(scores):
        raise ShapeError(f"IoU matrix of shape {iou.shape} does not fit {len(scores)} detections")
    n_det, n_gt = iou.shape
    tp = np.zeros(n_det, dtype=bool)
    matched_gt = np.full(n_det, -1, dtype=np.int64)
    taken = np.zeros(n_gt, dtype=bool)
    for d in _score_order(scores):
        if n_gt == 0:
            break
        row = np.where(taken, -1.0, iou[d])
        g = int(np.argmax(row))
        if row[g] >= iou_threshold:
            tp[d], matched_gt[d], taken[g] = True, g, True
    return MatchResult(tp=tp, matched_gt=matched_gt, fn=int(n_gt - taken.sum()))


@dataclass
class PRCurve:
    recall: np.ndarray = field(default_factory=lambda: np.zeros(0))
    precision: np.ndarray = field(default_factory=lambda: np.zeros(0))


def pr_curve(scores, tp, n_gt: int) -> PRCurve:
    """Precision and recall after each detection in descending score order."""
    if n_gt <= 0:
        raise UndefinedMetricError("recall is undefined without ground truth")
    order = _score_order(scores)
    hits = np.cumsum(np.asarray(tp, dtype=bool)[order])
    ranks = np.arange(1, len(order) + 1)
    return PRCurve(recall=hits / n_gt, precision=hits / ranks)


def average_precision(curve, precision=None) -> float:
    """101-point interpolated AP.

    For each recall level ``r`` in ``0, 0.01, ..., 1`` take the highest
    precision reached at recall ``>= r`` (0 if none), then average.
    Accepts a :class:`PRCurve` or ``(recall, precision)`` arrays.
    """
    if precision is None:
        recall, precision = curve.recall, curve.precision
    else:
        recall = curve
    recall = np.asarray(recall, dtype=np.float64)
    precision = np.asarray(precision, dtype=np.float64)
    if recall.size == 0:
        return 0.0
    reached = recall[None, :] >= RECALL_POINTS[:, None]
    values = np.where(reached, precision[None, :], 0.0).max(axis=1)
    return float(values.sum() / len(RECALL_POINTS))


def map_at(pairs, iou_thresholds=IOU_THRESHOLDS) -> dict:
    """Pooled AP per IoU threshold plus mAP@50 and mAP@50:95.

    Returns ``{"ap_per_threshold", "thresholds", "map50", "map5095", "counts"}``.
    ``map50`` is the AP at 0.5 and ``map5095`` the mean over the thresholds.
    """
    pairs = list(pairs)
    if not pairs:
        raise InvalidInputError("evaluation needs at least one image")
    thresholds = [float(t) for t in iou_thresholds]
    n_gt = sum(len(p.ground_truths) for p in pairs)
    if n_gt == 0:
        raise UndefinedMetricError("no ground-truth instances in any image")
    ious = [p.iou_matrix() for p in pairs]
    scores = np.concatenate([p.scores for p in pairs])
    aps, tps = [], []
    for t in thresholds:
        tp = np.concatenate([match(iou, p.scores, t).tp for iou, p in zip(ious, pairs)])
        aps.append(average_precision(pr_curve(scores, tp, n_gt)))
        tps.append(int(tp.sum()))
    at50 = thresholds.index(0.5) if 0.5 in thresholds else None
    return {
        "thresholds": thresholds,
        "ap_per_threshold": aps,
        "map50": aps[at50] if at50 is not None else None,
        "map5095": float(np.mean(aps)),
        "counts": {"images": len(pairs), "detections": int(scores.size), "ground_truths": n_gt,
                   "true_positives": tps},
    }


def evaluate_annotations(gt_sets, pred_sets, scores: dict, iou_type: str = "mask",
                         iou_thresholds=IOU_THRESHOLDS) -> dict:
    """Evaluate scored polygon predictions against polygon ground truth.

    Images are paired by ``image_id``; an image without predictions
    contributes only misses.  Box IoU uses the exact polygon bounding boxes.
    """
    preds = {p.image_id: p for p in pred_sets}
    unknown = set(preds) - {g.image_id for g in gt_sets}
    if unknown:
        raise InvalidInputError(f"predictions for unknown image ids {sorted(unknown)}")
    pairs = []
    for gt in gt_sets:
        pred = preds.get(gt.image_id)
        insts = list(pred.instances) if pred is not None else []
        if pred is not None and (pred.width, pred.height) != (gt.width, gt.height):
            raise ShapeError(f"image {gt.image_id}: prediction size differs from ground truth")
        s = [scores[(gt.image_id, i.id)] for i in insts]
        if iou_type == "mask":
            size = (gt.width, gt.height)
            dets = [rasterize(i, size) for i in insts]
            gts = [rasterize(i, size) for i in gt.instances]
        else:
            dets = [i.bbox for i in insts]
            gts = [i.bbox for i in gt.instances]
        pairs.append(EvalPair(dets, s, gts, iou_type=iou_type))
    return map_at(pairs, iou_thresholds)
