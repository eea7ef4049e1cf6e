"""Non-maximum suppression driven by pixel-level mask IoU."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .annotations import rasterize
from .errors import InvalidInputError, ShapeError

__all__ = ["binarize", "Candidate", "PackedMasks", "mask_nms", "nms_annotation_sets"]


def binarize(mask, threshold: float = 0.5) -> np.ndarray:
    """Pixels strictly above ``threshold``."""
    return np.asarray(mask) > threshold


@dataclass(frozen=True)
class Candidate:
    mask: np.ndarray
    score: float

    def __post_init__(self):
        mask = np.asarray(self.mask)
        if mask.dtype != bool:
            mask = binarize(mask)
        if not mask.any():
            raise InvalidInputError("candidate mask is empty")
        if not np.isfinite(self.score):
            raise InvalidInputError(f"candidate score must be finite, got {self.score}")
        object.__setattr__(self, "mask", mask)

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        """``(x, y, w, h)`` of the set pixels."""
        ys, xs = np.nonzero(self.mask)
        return int(xs.min()), int(ys.min()), int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1)


class PackedMasks:
    """Masks stored as bit rows for fast intersection and union counts."""

    def __init__(self, masks):
        masks = [np.asarray(m, dtype=bool) for m in masks]
        shapes = {m.shape for m in masks}
        if len(shapes) > 1:
            raise ShapeError(f"masks must share one shape, got {sorted(shapes)}")
        self.shape = shapes.pop() if shapes else (0, 0)
        flat = np.stack([m.reshape(-1) for m in masks]) if masks else np.zeros((0, 0), bool)
        self.bits = np.packbits(flat, axis=1)
        self.counts = np.bitwise_count(self.bits).sum(axis=1, dtype=np.int64)

    def __len__(self):
        return len(self.bits)

    def iou_with(self, i: int, others) -> np.ndarray:
        """IoU of mask ``i`` with each mask index in ``others``."""
        others = np.asarray(others, dtype=np.int64)
        if others.size == 0:
            return np.zeros(0)
        inter = np.bitwise_count(self.bits[others] & self.bits[i]).sum(axis=1, dtype=np.int64)
        union = self.counts[others] + self.counts[i] - inter
        return np.divide(inter, union, out=np.zeros(len(others)), where=union > 0)


def mask_nms(masks, scores, iou_threshold: float = 0.5) -> list[int]:
    """Indices kept by mask NMS, in rank order.

    Candidates are ranked by descending score (lower index first on ties).
    A candidate is suppressed when its IoU with any higher-ranked
    candidate exceeds ``iou_threshold``, whether or not that candidate
    survived.  Unlike suppression against survivors only, this makes the
    kept set grow monotonically with the threshold.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise InvalidInputError(f"IoU threshold must lie in [0, 1], got {iou_threshold}")
    scores = np.asarray(scores, dtype=np.float64)
    if len(masks) != len(scores):
        raise ShapeError(f"{len(masks)} masks but {len(scores)} scores")
    if len(scores) == 0:
        return []
    if not np.isfinite(scores).all():
        raise InvalidInputError("scores must be finite")
    packed = PackedMasks(masks)
    order = np.lexsort((np.arange(len(scores)), -scores))
    kept = [int(order[0])]
    for rank in range(1, len(order)):
        if packed.iou_with(int(order[rank]), order[:rank]).max() <= iou_threshold:
            kept.append(int(order[rank]))
    return kept


def nms_annotation_sets(sets, scores: dict, iou_threshold: float = 0.5):
    """Apply :func:`mask_nms` per image to scored polygon annotations.

    ``scores`` maps ``(image_id, instance_id)`` to confidence.  Returns the
    filtered annotation sets; instances keep their original order.
    """
    out = []
    for ann in sets:
        insts = list(ann.instances)
        masks = [rasterize(inst, (ann.width, ann.height)) for inst in insts]
        kept = mask_nms(masks, [scores[(ann.image_id, inst.id)] for inst in insts], iou_threshold)
        out.append(ann.replace(instances=tuple(insts[i] for i in sorted(kept))))
    return out
