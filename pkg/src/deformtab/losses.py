"""Segmentation and box losses, and pixel-level mask IoU.

Segmentation losses accept arrays or :class:`~deformtab.tensor.Tensor`
values and return scalar tensors, so they can be differentiated with
respect to the prediction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .errors import DomainError, InvalidInputError, ShapeError
from .tensor import Tensor

__all__ = [
    "PROB_EPS", "DICE_EPS", "MIN_AREA", "bce_loss", "dice_loss", "base_loss", "scale_weight",
    "InstanceCrop", "scale_aware_loss", "Box", "eiou_loss", "mask_iou",
]

PROB_EPS = 1e-7
DICE_EPS = 1e-6
MIN_AREA = 1e-6


def _pair(pred, gt):
    pred = T.as_tensor(pred)
    gt = T.as_tensor(np.asarray(getattr(gt, "data", gt), dtype=pred.dtype))
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction shape {pred.shape} does not match ground truth {gt.shape}")
    return pred, gt


def bce_loss(pred, gt) -> Tensor:
    """Mean binary cross-entropy with predictions clamped to ``[1e-7, 1 - 1e-7]``."""
    pred, gt = _pair(pred, gt)
    p = T.clamp(pred, PROB_EPS, 1 - PROB_EPS)
    per_pixel = gt * T.log(p) + (1 - gt) * T.log(1 - p)
    return -T.mean(per_pixel)


def dice_loss(pred, gt, eps: float = DICE_EPS) -> Tensor:
    pred, gt = _pair(pred, gt)
    overlap = T.sum(pred * gt)
    return 1 - 2 * overlap / (T.sum(pred) + T.sum(gt) + eps)


def base_loss(pred, gt) -> Tensor:
    return bce_loss(pred, gt) + dice_loss(pred, gt)


def scale_weight(area: float) -> float:
    """``1 + ln(1 / area)`` for a normalized area in ``(0, 1]``."""
    area = float(area)
    if not (0.0 < area <= 1.0):
        raise DomainError(f"normalized area must lie in (0, 1], got {area}")
    return 1.0 - math.log(area)


@dataclass(frozen=True)
class InstanceCrop:
    """Prediction and ground truth restricted to one instance's bounding box.

    ``area`` is the ground-truth pixel count divided by the full image
    pixel count.
    """

    pred: object
    gt: np.ndarray
    area: float

    def __post_init__(self):
        gt = np.asarray(self.gt)
        if np.shape(getattr(self.pred, "data", self.pred)) != gt.shape:
            raise ShapeError(f"crop prediction {np.shape(getattr(self.pred, 'data', self.pred))} "
                             f"does not match ground truth {gt.shape}")
        if gt.size == 0:
            raise ShapeError("instance crop is empty")
        if not (0.0 < self.area <= 1.0):
            raise DomainError(f"normalized area must lie in (0, 1], got {self.area}")

    @classmethod
    def from_masks(cls, pred, gt_mask) -> "InstanceCrop":
        """Crop a full-image prediction to the tight box of ``gt_mask``."""
        gt_mask = np.asarray(gt_mask, dtype=bool)
        shape = np.shape(getattr(pred, "data", pred))
        if shape != gt_mask.shape:
            raise ShapeError(f"prediction shape {shape} does not match mask {gt_mask.shape}")
        ys, xs = np.nonzero(gt_mask)
        if ys.size == 0:
            raise InvalidInputError("ground-truth mask is empty")
        window = (slice(ys.min(), ys.max() + 1), slice(xs.min(), xs.max() + 1))
        area = min(max(ys.size / gt_mask.size, MIN_AREA), 1.0)
        crop = pred[window] if isinstance(pred, np.ndarray) else _crop_tensor(T.as_tensor(pred), window)
        return cls(crop, gt_mask[window].astype(np.float64), area)


def _crop_tensor(t: Tensor, window) -> Tensor:
    h, w = t.shape
    rows, cols = window
    out = t.data[window].copy()

    def backward(g):
        full = np.zeros((h, w), dtype=g.dtype)
        full[rows, cols] = g
        return (full,)

    return Tensor._result(out, (t,), backward)


def scale_aware_loss(instances) -> Tensor:
    """Mean over instances of ``scale_weight(A) / A`` times the crop's base loss.

    The base loss of a crop is its mean per-pixel cross-entropy plus its
    Dice loss, which equals the crop average of the pixelwise sum of both
    terms.
    """
    instances = list(instances)
    if not instances:
        raise InvalidInputError("scale-aware loss needs at least one instance")
    total = None
    for inst in instances:
        term = (scale_weight(inst.area) / inst.area) * base_loss(inst.pred, inst.gt)
        total = term if total is None else total + term
    return total / len(instances)


class Box(NamedTuple):
    cx: float
    cy: float
    w: float
    h: float


def eiou_loss(pred, gt):
    """``1 - IoU + d^2/c^2 + dw^2/Cw^2 + dh^2/Ch^2`` for center-size boxes.

    ``d`` is the center distance and ``c``, ``Cw``, ``Ch`` are the diagonal,
    width and height of the smallest box enclosing both.  Accepts single
    boxes or arrays of shape ``(..., 4)``; returns a float or an array.
    """
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape[-1:] != (4,) or g.shape[-1:] != (4,):
        raise ShapeError(f"boxes need 4 components, got {p.shape} and {g.shape}")
    pcx, pcy, pw, ph = np.moveaxis(p, -1, 0)
    gcx, gcy, gw, gh = np.moveaxis(g, -1, 0)
    if np.any(pw <= 0) or np.any(ph <= 0) or np.any(gw <= 0) or np.any(gh <= 0):
        raise DomainError("box width and height must be positive")
    px0, px1, py0, py1 = pcx - pw / 2, pcx + pw / 2, pcy - ph / 2, pcy + ph / 2
    gx0, gx1, gy0, gy1 = gcx - gw / 2, gcx + gw / 2, gcy - gh / 2, gcy + gh / 2
    inter = (np.clip(np.minimum(px1, gx1) - np.maximum(px0, gx0), 0, None)
             * np.clip(np.minimum(py1, gy1) - np.maximum(py0, gy0), 0, None))
    iou = inter / (pw * ph + gw * gh - inter)
    enc_w = np.maximum(px1, gx1) - np.minimum(px0, gx0)
    enc_h = np.maximum(py1, gy1) - np.minimum(py0, gy0)
    if np.any(enc_w <= 0) or np.any(enc_h <= 0):
        raise DomainError("enclosing box is degenerate")
    loss = (1 - iou + ((pcx - gcx) ** 2 + (pcy - gcy) ** 2) / (enc_w ** 2 + enc_h ** 2)
            + (pw - gw) ** 2 / enc_w ** 2 + (ph - gh) ** 2 / enc_h ** 2)
    return float(loss) if np.ndim(loss) == 0 else loss


def mask_iou(a, b) -> float:
    """Pixel IoU of two binary masks; 0 when both are empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ShapeError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union
