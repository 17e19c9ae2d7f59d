"""Evaluation helpers: boundary F-measure, box IoU, flow error."""
import numpy as np
from scipy.ndimage import distance_transform_edt


def _within(mask, tolerance):
    """Pixels within ``tolerance`` (Euclidean) of any set pixel of ``mask``."""
    mask = np.asarray(mask, bool)
    if not mask.any():
        return np.zeros_like(mask)
    return distance_transform_edt(~mask) <= tolerance


def boundary_f_measure(predictions, truths, tolerance=2):
    """Dataset-level boundary precision, recall and F-measure.

    A predicted pixel is correct if it lies within ``tolerance`` pixels of a
    truth pixel; a truth pixel is recalled if a predicted pixel lies within
    ``tolerance`` of it. Counts are pooled over all images.
    """
    if isinstance(predictions, np.ndarray) and predictions.ndim == 2:
        predictions, truths = [predictions], [truths]
    tp_p = n_p = tp_r = n_r = 0
    for pred, truth in zip(predictions, truths):
        pred = np.asarray(pred, bool)
        truth = np.asarray(truth, bool)
        tp_p += int((pred & _within(truth, tolerance)).sum())
        n_p += int(pred.sum())
        tp_r += int((truth & _within(pred, tolerance)).sum())
        n_r += int(truth.sum())
    precision = tp_p / n_p if n_p else (1.0 if n_r == 0 else 0.0)
    recall = tp_r / n_r if n_r else 1.0
    f = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return {"precision": precision, "recall": recall, "f": f}


def iou(a, b):
    """Intersection over union of two (x, y, w, h) boxes or BoxProposals."""
    ax, ay, aw, ah = _xywh(a)
    bx, by, bw, bh = _xywh(b)
    iw = max(0, min(ax + aw, bx + bw) - max(ax, bx))
    ih = max(0, min(ay + ah, by + bh) - max(ay, by))
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def _xywh(box):
    if hasattr(box, "w"):
        return box.x, box.y, box.w, box.h
    return tuple(box)


def accuracy(pred, truth):
    pred, truth = np.asarray(pred), np.asarray(truth)
    return float((pred == truth).mean()) if pred.size else 0.0
