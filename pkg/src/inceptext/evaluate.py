"""Precision / recall / F-measure with greedy one-to-one polygon-IoU matching."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import polygon_iou


@dataclass
class EvalReport:
    recall: float
    precision: float
    f_measure: float
    iou_threshold: float = 0.5
    matches: list = field(default_factory=list)  # per image: [(det_index, gt_index, iou), ...]
    n_detections: int = 0
    n_ground_truth: int = 0
    n_matched: int = 0

    def summary(self) -> str:
        return (f"recall={self.recall:.4f} precision={self.precision:.4f} f_measure={self.f_measure:.4f} "
                f"matched={self.n_matched} detections={self.n_detections} gt={self.n_ground_truth}")


def f_measure(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


def match_image(det_quads, det_scores, gt_quads, iou_threshold: float = 0.5) -> list:
    """Greedy by descending score; each GT is used at most once (highest IoU available)."""
    order = np.argsort(-np.asarray(det_scores, dtype=np.float64), kind="stable")
    used = set()
    pairs = []
    for d in order:
        best, best_g = iou_threshold, -1
        for g, gq in enumerate(gt_quads):
            if g in used:
                continue
            iou = polygon_iou(det_quads[d], gq)
            if iou >= best:
                if iou > best or best_g < 0:
                    best, best_g = iou, g
        if best_g >= 0:
            used.add(best_g)
            pairs.append((int(d), best_g, float(best)))
    return pairs


def evaluate(detections: list, ground_truth: list, iou_threshold: float = 0.5) -> EvalReport:
    """``detections[i]`` is a list of (quad, score) for image i; ``ground_truth[i]`` a list of quads."""
    if len(detections) != len(ground_truth):
        raise ValueError("need one detection list per ground-truth image")
    n_det = n_gt = n_match = 0
    matches = []
    for dets, gts in zip(detections, ground_truth):
        quads = [d[0] for d in dets]
        scores = [d[1] for d in dets]
        pairs = match_image(quads, scores, gts, iou_threshold)
        matches.append(pairs)
        n_det += len(dets)
        n_gt += len(gts)
        n_match += len(pairs)
    p = n_match / n_det if n_det else 0.0
    r = n_match / n_gt if n_gt else 0.0
    return EvalReport(r, p, f_measure(p, r), iou_threshold, matches, n_det, n_gt, n_match)
