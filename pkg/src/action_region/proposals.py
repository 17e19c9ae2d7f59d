"""Box proposals on a soft boundary map and classifier input preparation.

Boxes are scored by border contrast: boundary mass in the box interior
(the box shrunk by ``border_strip`` on every side) minus ``border_penalty``
times the mass in the strip, both divided by ``(2 (w + h)) ** kappa``.
Boundary mass is read from an integral image, so each box costs O(1).
"""
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from . import imgops
from ._validation import check_flow, check_frame, check_map
from .exceptions import DataError
from .io import BoxProposal

CROP_SIDE = 224
CLIP_SIDE = 112
CLIP_LENGTH = 16
MIN_SCORE = 1e-3


@dataclass(frozen=True)
class ProposalParams:
    scales: tuple = (32, 48, 64, 96, 128)
    aspect_ratios: tuple = (0.5, 2 / 3, 1.0, 1.5, 2.0)
    step_fraction: float = 0.1
    border_strip: int = 0
    interior_weight: float = 1.5
    border_penalty: float = 1.0
    nms_iou: float = 0.5
    top_k: int = 1
    min_score: float = MIN_SCORE

    def __post_init__(self):
        if not self.scales or not self.aspect_ratios:
            raise DataError("scales and aspect_ratios must be non-empty")
        if not 0.0 < self.step_fraction <= 1.0:
            raise DataError("step_fraction must lie in (0, 1]")
        if self.border_penalty < 0 or self.border_strip < 0:
            raise DataError("border_penalty and border_strip must be >= 0")
        if not 0.0 < self.nms_iou < 1.0:
            raise DataError("nms_iou must lie in (0, 1)")
        if self.top_k < 1:
            raise DataError("top_k must be >= 1")


def integral_image(values):
    """Zero-padded summed-area table: ``ii[y, x] = values[:y, :x].sum()``."""
    return np.pad(np.asarray(values, dtype=np.float64).cumsum(0).cumsum(1), ((1, 0), (1, 0)))


def _rect_sum(ii, x, y, w, h):
    return ii[y + h, x + w] - ii[y, x + w] - ii[y + h, x] + ii[y, x]


def candidate_boxes(width, height, params):
    """All (x, y, w, h) on the sliding grid, positions spanning the full raster."""
    out = []
    sizes = []
    for s in params.scales:
        for r in params.aspect_ratios:
            w = int(round(s * np.sqrt(r)))
            h = int(round(s / np.sqrt(r)))
            if 1 <= w <= width and 1 <= h <= height and (w, h) not in sizes:
                sizes.append((w, h))
    if not sizes:
        raise DataError(f"no proposal box size fits a {width}x{height} map")
    for w, h in sizes:
        sx = max(1, int(round(params.step_fraction * w)))
        sy = max(1, int(round(params.step_fraction * h)))
        xs = np.unique(np.append(np.arange(0, width - w + 1, sx), width - w))
        ys = np.unique(np.append(np.arange(0, height - h + 1, sy), height - h))
        yy, xx = np.meshgrid(ys, xs, indexing="ij")
        out.append(np.stack([xx.ravel(), yy.ravel(),
                             np.full(xx.size, w), np.full(xx.size, h)], axis=1))
    return np.concatenate(out)


def box_scores(values, boxes, params):
    """Vectorised border-contrast scores for an (N, 4) array of boxes."""
    ii = integral_image(values)
    x, y, w, h = (boxes[:, k] for k in range(4))
    total = _rect_sum(ii, x, y, w, h)
    b = params.border_strip
    iw, ih = np.maximum(w - 2 * b, 0), np.maximum(h - 2 * b, 0)
    inner = np.where((iw > 0) & (ih > 0),
                     _rect_sum(ii, np.minimum(x + b, x + w), np.minimum(y + b, y + h), iw, ih), 0.0)
    strip = total - inner
    norm = (2.0 * (w + h)) ** params.interior_weight
    return (inner - params.border_penalty * strip) / norm


def _sorted(boxes):
    return sorted(boxes, key=lambda b: (-b.score, b.x, b.y, b.w, b.h))


def _order(xywh, scores):
    """Indices by descending score, then x, y, w, h ascending."""
    return np.lexsort((xywh[:, 3], xywh[:, 2], xywh[:, 1], xywh[:, 0], -scores))


def _to_boxes(xywh, scores, frame_index):
    return [BoxProposal(int(bx), int(by), int(bw), int(bh), float(sc), frame_index)
            for (bx, by, bw, bh), sc in zip(xywh, scores)]


def score_boxes(boundary_map, params=None, frame_index=0):
    """Every candidate box with its score, best first."""
    params = params or ProposalParams()
    values = check_map(boundary_map, name="boundary map")
    h, w = values.shape
    boxes = candidate_boxes(w, h, params)
    scores = box_scores(values, boxes, params)
    order = _order(boxes, scores)
    return _to_boxes(boxes[order], scores[order], frame_index)


def iou_matrix(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ix = np.maximum(0, np.minimum(a[:, None, 0] + a[:, None, 2], b[None, :, 0] + b[None, :, 2])
                    - np.maximum(a[:, None, 0], b[None, :, 0]))
    iy = np.maximum(0, np.minimum(a[:, None, 1] + a[:, None, 3], b[None, :, 1] + b[None, :, 3])
                    - np.maximum(a[:, None, 1], b[None, :, 1]))
    inter = ix * iy
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1), 0.0)


def _greedy_nms(xywh, iou_threshold, limit=None):
    """Kept indices of score-ordered boxes; stops after ``limit`` keeps."""
    suppressed = np.zeros(len(xywh), bool)
    kept = []
    for i in range(len(xywh)):
        if suppressed[i]:
            continue
        kept.append(i)
        if limit is not None and len(kept) >= limit:
            break
        suppressed |= iou_matrix(xywh[i], xywh)[0] > iou_threshold
    return kept


def nms(boxes, iou_threshold=0.5):
    """Greedy non-maximum suppression; ties broken by (x, y, w, h) ascending."""
    ordered = _sorted(boxes)
    if not ordered:
        return []
    xywh = np.array([[b.x, b.y, b.w, b.h] for b in ordered])
    return [ordered[i] for i in _greedy_nms(xywh, iou_threshold)]


@dataclass(frozen=True)
class Selection:
    boxes: list
    no_motion: bool


def select_action_region(boxes, top_k=1):
    """First ``top_k`` boxes of a post-NMS list; flags when there are none."""
    boxes = list(boxes)[:top_k]
    return Selection(boxes, no_motion=not boxes)


def propose(boundary_map, params=None, frame_index=0):
    """Score, filter by ``min_score``, suppress, and select boxes for one map.

    Same result as ``select_action_region(nms(...), top_k)`` on the
    filtered ``score_boxes`` output, without materialising every box.
    """
    params = params or ProposalParams()
    values = check_map(boundary_map, name="boundary map")
    h, w = values.shape
    xywh = candidate_boxes(w, h, params)
    scores = box_scores(values, xywh, params)
    order = _order(xywh, scores)
    xywh, scores = xywh[order], scores[order]
    keep = scores >= params.min_score
    xywh, scores = xywh[keep], scores[keep]
    kept = _greedy_nms(xywh, params.nms_iou, limit=params.top_k)
    return select_action_region(_to_boxes(xywh[kept], scores[kept], frame_index), params.top_k)


def temporal_median(boxes, window=5):
    """Per-frame median of box coordinates over a centred window."""
    out = []
    half = window // 2
    for i, box in enumerate(boxes):
        win = boxes[max(0, i - half): i + half + 1]
        x, y, w, h = (int(np.median([getattr(b, k) for b in win])) for k in "xywh")
        out.append(BoxProposal(x, y, w, h, box.score, box.frame_index))
    return out


class ActionRegionProposer(BaseEstimator):
    """Per-frame action region selection on soft boundary maps.

    With ``thin`` the soft map is first reduced to its ridges by edge
    non-maximum suppression, as edge-based proposal methods expect.
    ``transform(maps)`` returns one box per map. Frames without any
    box above ``min_score`` reuse the previous frame's box, or the full
    frame if there is none; ``no_motion_`` records which frames fell back.
    """

    def __init__(self, scales=(32, 48, 64, 96, 128), aspect_ratios=(0.5, 2 / 3, 1.0, 1.5, 2.0),
                 step_fraction=0.1, border_strip=0, interior_weight=1.5, border_penalty=1.0,
                 nms_iou=0.5, top_k=1, min_score=MIN_SCORE, thin=True, temporal_smoothing=False):
        self.scales = scales
        self.aspect_ratios = aspect_ratios
        self.step_fraction = step_fraction
        self.border_strip = border_strip
        self.interior_weight = interior_weight
        self.border_penalty = border_penalty
        self.nms_iou = nms_iou
        self.top_k = top_k
        self.min_score = min_score
        self.thin = thin
        self.temporal_smoothing = temporal_smoothing

    @property
    def params(self):
        p = self.get_params()
        p.pop("temporal_smoothing")
        p.pop("thin")
        p["scales"], p["aspect_ratios"] = tuple(p["scales"]), tuple(p["aspect_ratios"])
        return ProposalParams(**p)

    def fit(self, X=None, y=None):
        return self

    def propose_all(self, maps):
        """All selected boxes (up to ``top_k``) per map."""
        params = self.params
        if self.thin:
            maps = [imgops.thin_edges(check_map(m, name="boundary map")) for m in maps]
        return [propose(m, params, frame_index=i) for i, m in enumerate(maps)]

    def transform(self, maps):
        selections = self.propose_all(maps)
        boxes, self.no_motion_ = [], []
        for i, (m, sel) in enumerate(zip(maps, selections)):
            if sel.boxes:
                boxes.append(sel.boxes[0])
            elif boxes:
                prev = boxes[-1]
                boxes.append(BoxProposal(prev.x, prev.y, prev.w, prev.h, 0.0, i))
            else:
                h, w = np.shape(m)
                boxes.append(BoxProposal(0, 0, w, h, 0.0, i))
            self.no_motion_.append(not sel.boxes)
        if self.temporal_smoothing:
            boxes = temporal_median(boxes)
        return boxes


# ------------------------------------------------------------ classifier inputs

def _check_box(box, width, height):
    if not isinstance(box, BoxProposal):
        box = BoxProposal(*box)
    if not box.fits(width, height):
        raise DataError(f"box {box} exceeds the {width}x{height} raster")
    return box


def crop_and_resize(frame, box, side=CROP_SIDE):
    """Bilinear resize of the box contents to ``side`` x ``side``."""
    frame = check_frame(frame)
    h, w = frame.shape[:2]
    box = _check_box(box, w, h)
    crop = frame[box.y:box.y2, box.x:box.x2]
    return np.clip(imgops.resize_bilinear(crop, side, side), 0.0, 1.0)


def crop_flow(flow, box, side=CROP_SIDE):
    flow = check_flow(flow)
    h, w = flow.shape[:2]
    box = _check_box(box, w, h)
    return imgops.resize_bilinear(flow[box.y:box.y2, box.x:box.x2], side, side)


def stack_flow_crops(flows, box, L, side=CROP_SIDE):
    """(side, side, 2L) stack u1, v1, ..., uL, vL of the first ``L`` flows.

    Flow values are kept in source-pixel units; only the raster is resized.
    """
    flows = list(flows)
    if L < 1:
        raise DataError("L must be >= 1")
    if len(flows) < L:
        raise DataError(f"need {L} flow fields, got {len(flows)}")
    return np.concatenate([crop_flow(f, box, side) for f in flows[:L]], axis=2)


def prepare_clip(frames, box, start=0, length=CLIP_LENGTH, side=CLIP_SIDE):
    """(3, 16, 112, 112) clip of box crops starting at frame ``start``."""
    frames = np.asarray(frames)
    if start < 0 or start + length > len(frames):
        raise DataError(f"sequence of {len(frames)} frames too short for a {length}-frame clip at {start}")
    crops = np.stack([crop_and_resize(frames[t], box, side) for t in range(start, start + length)])
    return np.ascontiguousarray(np.moveaxis(crops, 3, 0))
