"""Overlap metrics for binary masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from biclip.data.dataset import check_binary_mask
from biclip.errors import ShapeError

THRESHOLD = 0.5


def binarize(prob: np.ndarray, threshold: float = THRESHOLD) -> np.ndarray:
    """Foreground where prob > threshold (strict, so a flat 0.5 map is empty)."""
    return (np.asarray(prob) > threshold).astype(np.float32)


def _counts(pred, gt) -> tuple[int, int, int]:
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    check_binary_mask(pred, "prediction")
    check_binary_mask(gt, "ground truth")
    p, g = pred.astype(bool), gt.astype(bool)
    return int(np.count_nonzero(p & g)), int(np.count_nonzero(p)), int(np.count_nonzero(g))


def dice(pred, gt) -> float:
    """2|P & G| / (|P| + |G|); 1.0 when both masks are empty."""
    inter, np_, ng = _counts(pred, gt)
    if np_ + ng == 0:
        return 1.0
    return 2.0 * inter / (np_ + ng)


def iou(pred, gt) -> float:
    """|P & G| / |P | G|; 1.0 when both masks are empty."""
    inter, np_, ng = _counts(pred, gt)
    union = np_ + ng - inter
    if union == 0:
        return 1.0
    return inter / union


@dataclass(frozen=True)
class MetricResult:
    dice: float
    iou: float
    n_samples: int

    @property
    def miou(self) -> float:
        return self.iou


def score_masks(preds: np.ndarray, gts: np.ndarray) -> MetricResult:
    """Mean of per-sample Dice and IoU."""
    d = [dice(p, g) for p, g in zip(preds, gts)]
    j = [iou(p, g) for p, g in zip(preds, gts)]
    return MetricResult(float(np.mean(d)), float(np.mean(j)), len(d))
