"""Detection metrics: greedy IoU matching, VOC-2012 style AP, operating
point selection, and category-wise recall for class-agnostic detectors.

Detections are ranked by (confidence desc, image_id, input order) --
a stable, platform-independent ordering. Matching is per-image: a
detection claims its best-IoU unmatched ground truth when that IoU
clears the threshold; duplicates on an already-claimed ground truth
count as false positives.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .dataset_io import Bbox, Detection, GroundTruthBox
from .errors import EvaluationError

DEFAULT_IOU_THRESHOLD = 0.7


def iou(a: Bbox, b: Bbox) -> float:
    """Intersection area over union area of two (x, y, w, h) boxes."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    if aw <= 0 or ah <= 0 or bw <= 0 or bh <= 0:
        raise ValueError("boxes must have positive size")
    inter_w = min(ax + aw, bx + bw) - max(ax, bx)
    inter_h = min(ay + ah, by + bh) - max(ay, by)
    if inter_w <= 0 or inter_h <= 0:
        return 0.0
    inter = inter_w * inter_h
    union = aw * ah + bw * bh - inter
    return inter / union


@dataclass
class MatchResult:
    """Per-detection TP/FP flags in descending-confidence order."""

    flags: np.ndarray        # bool, len = number of detections
    confidences: np.ndarray  # float, same order as flags
    gt_count: int
    detection_order: list[int] = field(default_factory=list)   # original indices
    matched_gt: list[int | None] = field(default_factory=list)  # gt index per detection


def _ranked(detections: Sequence[Detection]) -> list[int]:
    return sorted(
        range(len(detections)),
        key=lambda i: (-detections[i].confidence, str(detections[i].image_id), i),
    )


def match_detections(
    detections: Sequence[Detection],
    ground_truths: Sequence[GroundTruthBox],
    iou_thresh: float = DEFAULT_IOU_THRESHOLD,
) -> MatchResult:
    """Greedy class-agnostic matching at a fixed IoU threshold.

    Each ground truth is matched at most once. Ties on best IoU go to the
    earlier ground truth in input order.
    """
    gt_by_image: dict[str, list[int]] = {}
    for gi, gt in enumerate(ground_truths):
        gt_by_image.setdefault(str(gt.image_id), []).append(gi)

    order = _ranked(detections)
    taken = [False] * len(ground_truths)
    flags = np.zeros(len(detections), dtype=bool)
    confidences = np.empty(len(detections), dtype=np.float64)
    matched: list[int | None] = []

    for rank, di in enumerate(order):
        det = detections[di]
        confidences[rank] = det.confidence
        best_iou = 0.0
        best_gi = None
        for gi in gt_by_image.get(str(det.image_id), []):
            if taken[gi]:
                continue
            overlap = iou(det.bbox, ground_truths[gi].bbox)
            if overlap > best_iou:
                best_iou = overlap
                best_gi = gi
        if best_gi is not None and best_iou >= iou_thresh:
            flags[rank] = True
            taken[best_gi] = True
            matched.append(best_gi)
        else:
            matched.append(None)

    return MatchResult(
        flags=flags,
        confidences=confidences,
        gt_count=len(ground_truths),
        detection_order=order,
        matched_gt=matched,
    )


def pr_curve(match: MatchResult) -> list[tuple[float, float]]:
    """(recall, precision) at every detection rank."""
    points = []
    tp = 0
    for rank, flag in enumerate(match.flags):
        tp += int(flag)
        points.append((tp / match.gt_count, tp / (rank + 1)))
    return points


def average_precision(match: MatchResult) -> float:
    """Area under the monotone-envelope precision/recall curve.

    Exact piecewise integration over recall with the precision envelope
    max-from-the-right (the all-points method), not 11-point sampling.
    """
    if match.gt_count == 0:
        raise EvaluationError("average precision is undefined with zero ground truths")
    n = len(match.flags)
    if n == 0:
        return 0.0
    tp = 0
    precision = []
    recall = []
    for rank, flag in enumerate(match.flags):
        tp += int(flag)
        precision.append(tp / (rank + 1))
        recall.append(tp / match.gt_count)
    envelope = precision[:]
    for i in range(n - 2, -1, -1):
        envelope[i] = max(envelope[i], envelope[i + 1])
    ap = 0.0
    prev_recall = 0.0
    for i in range(n):
        if recall[i] > prev_recall:
            ap += (recall[i] - prev_recall) * envelope[i]
            prev_recall = recall[i]
    return ap


def mean_average_precision(aps: Iterable[float]) -> float:
    """Arithmetic mean of per-category APs; equals AP for a single category."""
    values = list(aps)
    if not values:
        raise EvaluationError("mean average precision needs at least one AP value")
    if len(values) == 1:
        return values[0]
    return sum(values) / len(values)


def pr_f1_at(
    detections: Sequence[Detection],
    ground_truths: Sequence[GroundTruthBox],
    conf_thresh: float,
    iou_thresh: float = DEFAULT_IOU_THRESHOLD,
) -> tuple[float, float, float]:
    """Precision, recall, F1 after suppressing detections below conf_thresh.

    Precision is 1.0 when no detection survives (vacuous); F1 is 0 when
    precision + recall is 0.
    """
    surviving = [d for d in detections if d.confidence >= conf_thresh]
    match = match_detections(surviving, ground_truths, iou_thresh)
    tp = int(match.flags.sum())
    if surviving:
        precision = tp / len(surviving)
    else:
        precision = 1.0
    recall = tp / match.gt_count if match.gt_count > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def select_threshold(
    detections: Sequence[Detection],
    ground_truths: Sequence[GroundTruthBox],
    iou_thresh: float = DEFAULT_IOU_THRESHOLD,
) -> float:
    """The confidence value (among those present) maximizing F1.

    Ties break toward the highest threshold.
    """
    if not detections:
        raise EvaluationError("threshold selection requires at least one detection")
    best_threshold = None
    best_f1 = -1.0
    for conf in sorted({d.confidence for d in detections}, reverse=True):
        _, _, f1 = pr_f1_at(detections, ground_truths, conf, iou_thresh)
        if f1 > best_f1:
            best_f1 = f1
            best_threshold = conf
    return float(best_threshold)


def category_recall(
    detections: Sequence[Detection],
    ground_truths: Sequence[GroundTruthBox],
    conf_thresh: float,
    iou_thresh: float = DEFAULT_IOU_THRESHOLD,
) -> dict[int, tuple[int, int]]:
    """Per-category (recovered, total) ground-truth counts.

    A ground truth is recovered when a surviving detection claims it under
    the same greedy rule as match_detections, so the summed hits equal the
    TP count at the same thresholds.
    """
    surviving = [d for d in detections if d.confidence >= conf_thresh]
    match = match_detections(surviving, ground_truths, iou_thresh)
    recovered = {gi for gi in match.matched_gt if gi is not None}
    result: dict[int, tuple[int, int]] = {}
    for gi, gt in enumerate(ground_truths):
        hits, total = result.get(gt.category_id, (0, 0))
        result[gt.category_id] = (hits + (1 if gi in recovered else 0), total + 1)
    return result


@dataclass
class EvalReport:
    ap: float
    map: float
    precision: float
    recall: float
    f1: float
    chosen_threshold: float
    per_category_recall: dict[int, tuple[int, int]]
    pr_curve: list[tuple[float, float]]
    false_positives: list[Detection]

    def __post_init__(self):
        for name in ("ap", "map", "precision", "recall", "f1"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise EvaluationError(f"{name}={value} outside [0, 1]")


def evaluate(
    detections: Sequence[Detection],
    ground_truths: Sequence[GroundTruthBox],
    iou_thresh: float = DEFAULT_IOU_THRESHOLD,
    threshold: float | None = None,
    selection_detections: Sequence[Detection] | None = None,
    selection_ground_truths: Sequence[GroundTruthBox] | None = None,
) -> EvalReport:
    """Full protocol: AP over all detections, then the operating point.

    The operating threshold is, in order of preference: the explicit
    ``threshold``; the max-F1 threshold on the selection pair (a held-out
    validation set); the max-F1 threshold on the evaluated pair itself.
    """
    if not ground_truths:
        raise EvaluationError("evaluation requires at least one ground truth")
    match = match_detections(detections, ground_truths, iou_thresh)
    ap = average_precision(match)
    map_value = mean_average_precision([ap])

    if threshold is None:
        if selection_detections is not None:
            if selection_ground_truths is None:
                raise EvaluationError("selection ground truths missing")
            threshold = select_threshold(
                selection_detections, selection_ground_truths, iou_thresh
            )
        elif detections:
            threshold = select_threshold(detections, ground_truths, iou_thresh)
        else:
            threshold = 1.0

    precision, recall, f1 = pr_f1_at(detections, ground_truths, threshold, iou_thresh)
    per_category = category_recall(detections, ground_truths, threshold, iou_thresh)

    surviving = [d for d in detections if d.confidence >= threshold]
    surv_match = match_detections(surviving, ground_truths, iou_thresh)
    false_positives = [
        surviving[surv_match.detection_order[rank]]
        for rank, flag in enumerate(surv_match.flags)
        if not flag
    ]

    return EvalReport(
        ap=ap,
        map=map_value,
        precision=precision,
        recall=recall,
        f1=f1,
        chosen_threshold=float(threshold),
        per_category_recall=per_category,
        pr_curve=pr_curve(match),
        false_positives=false_positives,
    )
