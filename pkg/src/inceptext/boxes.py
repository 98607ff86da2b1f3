"""Anchors, box deltas, target assignment and proposal selection.

Boxes are float arrays of (x_min, y_min, x_max, y_max) in image pixels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import is_convex, point_in_convex, polygon_area

ANCHOR_SCALES = (2, 4, 8, 16)
ANCHOR_RATIOS = (0.2, 0.5, 2, 5)
MAX_LOG_SCALE = math.log(1000.0 / 16)


def generate_anchors(feature_h: int, feature_w: int, stride: int,
                     scales: Sequence[float] = ANCHOR_SCALES,
                     ratios: Sequence[float] = ANCHOR_RATIOS) -> np.ndarray:
    """Anchors as (cx, cy, w, h), cell-major (row, col) then scale, then ratio.

    ``ratio`` is height / width; every anchor of scale s has area (stride*s)**2.
    """
    if stride <= 0:
        raise ValueError("stride must be positive")
    base = []
    for s in scales:
        for r in ratios:
            side = stride * s
            base.append((side / math.sqrt(r), side * math.sqrt(r)))
    base = np.asarray(base)
    cy, cx = np.meshgrid((np.arange(feature_h) + 0.5) * stride, (np.arange(feature_w) + 0.5) * stride,
                         indexing="ij")
    A = len(base)
    out = np.empty((feature_h, feature_w, A, 4))
    out[..., 0] = cx[..., None]
    out[..., 1] = cy[..., None]
    out[..., 2] = base[:, 0]
    out[..., 3] = base[:, 1]
    return out.reshape(-1, 4)


def cxcywh_to_xyxy(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return np.stack([a[:, 0] - a[:, 2] / 2, a[:, 1] - a[:, 3] / 2,
                     a[:, 0] + a[:, 2] / 2, a[:, 1] + a[:, 3] / 2], axis=1)


def _check_extent(b: np.ndarray, what: str) -> None:
    if np.any(b[:, 2] <= b[:, 0]) or np.any(b[:, 3] <= b[:, 1]):
        raise ValueError(f"{what} boxes need positive extents")


def encode(boxes, reference) -> np.ndarray:
    """(dx, dy, log dw, log dh) of ``boxes`` relative to ``reference``."""
    b = np.atleast_2d(np.asarray(boxes, dtype=np.float64))
    r = np.atleast_2d(np.asarray(reference, dtype=np.float64))
    _check_extent(r, "reference")
    _check_extent(b, "target")
    rw, rh = r[:, 2] - r[:, 0], r[:, 3] - r[:, 1]
    bw, bh = b[:, 2] - b[:, 0], b[:, 3] - b[:, 1]
    return np.stack([((b[:, 0] + b[:, 2]) - (r[:, 0] + r[:, 2])) / (2 * rw),
                     ((b[:, 1] + b[:, 3]) - (r[:, 1] + r[:, 3])) / (2 * rh),
                     np.log(bw / rw), np.log(bh / rh)], axis=1)


def decode(deltas, reference) -> np.ndarray:
    d = np.atleast_2d(np.asarray(deltas, dtype=np.float64))
    r = np.atleast_2d(np.asarray(reference, dtype=np.float64))
    _check_extent(r, "reference")
    rw, rh = r[:, 2] - r[:, 0], r[:, 3] - r[:, 1]
    cx = (r[:, 0] + r[:, 2]) / 2 + d[:, 0] * rw
    cy = (r[:, 1] + r[:, 3]) / 2 + d[:, 1] * rh
    w = rw * np.exp(np.minimum(d[:, 2], MAX_LOG_SCALE))
    h = rh * np.exp(np.minimum(d[:, 3], MAX_LOG_SCALE))
    return np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=1)


def box_transform(kind: str, box, reference) -> np.ndarray:
    if kind == "encode":
        return encode(box, reference)
    if kind == "decode":
        return decode(box, reference)
    raise ValueError(f"unknown transform {kind!r}")


def box_iou(a, b) -> np.ndarray:
    """Pairwise axis-aligned IoU, (len(a), len(b))."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    iw = np.clip(np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0]), 0, None)
    ih = np.clip(np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1]), 0, None)
    inter = iw * ih
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1), 0.0)


def nms_boxes(boxes, scores, threshold: float, limit: int = 0) -> np.ndarray:
    """Greedy axis-aligned NMS; stable on ties. Returns kept indices in score order."""
    boxes = np.asarray(boxes, dtype=np.float64)
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    keep = []
    while order.size:
        i = order[0]
        keep.append(int(i))
        if limit and len(keep) >= limit:
            break
        rest = order[1:]
        ious = box_iou(boxes[i:i + 1], boxes[rest])[0]
        order = rest[ious <= threshold]
    return np.asarray(keep, dtype=np.int64)


def clip_boxes(boxes, height: float, width: float) -> np.ndarray:
    b = np.asarray(boxes, dtype=np.float64).copy()
    b[:, [0, 2]] = np.clip(b[:, [0, 2]], 0, width)
    b[:, [1, 3]] = np.clip(b[:, [1, 3]], 0, height)
    return b


def quad_to_box(quad) -> np.ndarray:
    q = np.asarray(quad, dtype=np.float64)
    return np.array([q[:, 0].min(), q[:, 1].min(), q[:, 0].max(), q[:, 1].max()])


POSITIVE, NEGATIVE, IGNORE = 1, 0, -1


def assign_rpn_targets(anchors_xyxy, gt_boxes, pos_iou: float = 0.7, neg_iou: float = 0.3):
    """Label anchors (1 positive, 0 negative, -1 ignore) and compute deltas for positives."""
    anchors_xyxy = np.asarray(anchors_xyxy, dtype=np.float64)
    n = len(anchors_xyxy)
    labels = np.full(n, IGNORE, dtype=np.int64)
    deltas = np.zeros((n, 4))
    gt = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    if len(gt) == 0:
        labels[:] = NEGATIVE
        return labels, deltas
    iou = box_iou(anchors_xyxy, gt)
    best_gt = iou.argmax(axis=1)
    best = iou[np.arange(n), best_gt]
    labels[best < neg_iou] = NEGATIVE
    labels[best >= pos_iou] = POSITIVE
    # the best anchor(s) of every GT are positive as well
    gt_best = iou.max(axis=0)
    for g in range(len(gt)):
        if gt_best[g] <= 0:
            continue
        hits = np.nonzero(iou[:, g] == gt_best[g])[0]
        labels[hits] = POSITIVE
        best_gt[hits] = g
    pos = labels == POSITIVE
    if pos.any():
        deltas[pos] = encode(gt[best_gt[pos]], anchors_xyxy[pos])
    return labels, deltas


def sample_labels(labels: np.ndarray, batch: int, pos_fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Indices of a balanced subsample of labelled entries (ignored ones never chosen)."""
    pos = np.nonzero(labels == POSITIVE)[0]
    neg = np.nonzero(labels == NEGATIVE)[0]
    n_pos = min(len(pos), int(batch * pos_fraction))
    if len(pos) > n_pos:
        pos = np.sort(rng.choice(pos, n_pos, replace=False))
    n_neg = min(len(neg), batch - len(pos))
    if len(neg) > n_neg:
        neg = np.sort(rng.choice(neg, n_neg, replace=False))
    return np.concatenate([pos, neg])


@dataclass(frozen=True)
class ProposalConfig:
    pre_nms: int = 1000
    post_nms: int = 300
    nms_iou: float = 0.7
    min_size: float = 1.0


def select_proposals(rpn_scores, rpn_deltas, anchors_xyxy, image_size, cfg: ProposalConfig = ProposalConfig()):
    """Top-k by score (ties in anchor order), decode, clip, drop tiny boxes, NMS.

    Returns (boxes (P,4), scores (P,)) sorted by descending score.
    """
    scores = np.asarray(rpn_scores, dtype=np.float64).reshape(-1)
    deltas = np.asarray(rpn_deltas, dtype=np.float64).reshape(-1, 4)
    anchors_xyxy = np.asarray(anchors_xyxy, dtype=np.float64)
    if not (len(scores) == len(deltas) == len(anchors_xyxy)):
        raise ValueError("scores, deltas and anchors must have the same length")
    H, W = image_size
    order = np.argsort(-scores, kind="stable")[:cfg.pre_nms]
    boxes = clip_boxes(decode(deltas[order], anchors_xyxy[order]), H, W)
    sc = scores[order]
    ok = ((boxes[:, 2] - boxes[:, 0]) >= cfg.min_size) & ((boxes[:, 3] - boxes[:, 1]) >= cfg.min_size)
    boxes, sc = boxes[ok], sc[ok]
    keep = nms_boxes(boxes, sc, cfg.nms_iou, limit=cfg.post_nms)
    return boxes[keep], sc[keep]


def assign_roi_targets(rois, gt_boxes, pos_iou: float = 0.5):
    """ROI labels (1 iff IoU >= pos_iou with some GT), matched GT index and IoU."""
    rois = np.asarray(rois, dtype=np.float64).reshape(-1, 4)
    gt = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    if len(gt) == 0:
        return np.zeros(len(rois), dtype=np.int64), np.full(len(rois), -1), np.zeros(len(rois))
    iou = box_iou(rois, gt)
    match = iou.argmax(axis=1)
    best = iou[np.arange(len(rois)), match]
    labels = (best >= pos_iou).astype(np.int64)
    return labels, match, best


def rasterize_quad_mask(quad, roi, resolution: int = 28) -> np.ndarray:
    """resolution x resolution grid over the ROI; a cell is 1 iff its centre is inside the quad."""
    q = np.asarray(quad, dtype=np.float64)
    if q.shape != (4, 2) or polygon_area(q) <= 0 or not is_convex(q):
        raise ValueError("mask target needs a convex, non-self-intersecting quad")
    r = np.asarray(getattr(roi, "as_array", lambda: roi)(), dtype=np.float64)
    if r[2] <= r[0] or r[3] <= r[1]:
        raise ValueError("ROI needs positive extents")
    c = (np.arange(resolution) + 0.5) / resolution
    xs = r[0] + c * (r[2] - r[0])
    ys = r[1] + c * (r[3] - r[1])
    gx, gy = np.meshgrid(xs, ys)
    inside = point_in_convex(np.stack([gx.ravel(), gy.ravel()], axis=1), q)
    return inside.reshape(resolution, resolution).astype(np.float32)
