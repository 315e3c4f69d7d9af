"""Metrics and independent reference implementations.

The brute-force routines here re-derive suppression and begin/end clip
selection by exhaustive search; they exist to cross-check the production
code and are deliberately written without sharing it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractViolation, UndefinedMetricError


def temporal_iou(a: Sequence[float], b: Sequence[float]) -> float:
    """Intersection over union of two (start, end) intervals."""
    a0, a1 = float(a[0]), float(a[1])
    b0, b1 = float(b[0]), float(b[1])
    if a1 <= a0 or b1 <= b0:
        raise ContractViolation("degenerate interval in temporal_iou")
    inter = min(a1, b1) - max(a0, b0)
    if inter <= 0:
        return 0.0
    return inter / ((a1 - a0) + (b1 - b0) - inter)


def interval_overlap(a: Sequence[float], b: Sequence[float]) -> float:
    """Length of the intersection; zero for disjoint intervals."""
    return max(0.0, min(float(a[1]), float(b[1])) - max(float(a[0]), float(b[0])))


# ------------------------------------------------------------ detection


def _interpolated_ap(tp_flags: Sequence[int], num_truth: int) -> float:
    """All-point interpolated average precision from ranked hit flags."""
    if num_truth == 0:
        raise UndefinedMetricError("AP needs at least one ground-truth item")
    tp = np.cumsum(np.asarray(tp_flags, dtype=np.float64))
    fp = np.cumsum(1.0 - np.asarray(tp_flags, dtype=np.float64))
    recall = tp / num_truth
    precision = tp / np.maximum(tp + fp, 1e-12)
    # precision envelope, then sum over recall steps
    mrec = np.concatenate([[0.0], recall, [recall[-1] if len(recall) else 0.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    ap = 0.0
    for i in range(1, len(mrec)):
        ap += (mrec[i] - mrec[i - 1]) * mpre[i]
    return float(ap)


def map_at_tiou(detections, truths, threshold: float = 0.5) -> float:
    """Mean average precision over classes at a temporal IoU threshold.

    ``detections`` are (class, start, end, confidence) tuples, ``truths``
    are (class, start, end).  Detections match greedily in confidence
    order, one truth each.  Classes without ground truth are excluded
    from the mean; a class with truths but no detections scores zero.
    """
    truth_classes = sorted({t[0] for t in truths})
    if not truth_classes:
        raise UndefinedMetricError("no ground-truth events")
    aps = []
    for cls in truth_classes:
        cls_truth = [(float(t[1]), float(t[2])) for t in truths if t[0] == cls]
        cls_det = [d for d in detections if d[0] == cls]
        cls_det.sort(key=lambda d: (-float(d[3]), float(d[1]), float(d[2])))
        if not cls_det:
            aps.append(0.0)
            continue
        used = [False] * len(cls_truth)
        flags = []
        for det in cls_det:
            best, best_iou = -1, threshold
            for j, gt in enumerate(cls_truth):
                if used[j]:
                    continue
                iou = temporal_iou((det[1], det[2]), gt)
                if iou >= best_iou:
                    best, best_iou = j, iou
            if best >= 0:
                used[best] = True
                flags.append(1)
            else:
                flags.append(0)
        aps.append(_interpolated_ap(flags, len(cls_truth)))
    return float(np.mean(aps))


def ranked_average_precision(scores: Sequence[float],
                             labels: Sequence[int]) -> float:
    """AP of ranking ``scores`` against binary ``labels``."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape:
        raise ContractViolation("scores/labels length mismatch")
    pos = int(labels.sum())
    if pos == 0:
        raise UndefinedMetricError("no positive labels to rank")
    order = np.lexsort((np.arange(len(scores)), -scores))
    return _interpolated_ap(labels[order], pos)


# ------------------------------------------------------------ broadcast


def edl_switches(entries) -> list[tuple[float, int]]:
    """(time, new view) for every boundary where the source view changes."""
    switches = []
    prev_view = None
    for e in entries:
        view = int(e.view)
        if prev_view is not None and view != prev_view:
            switches.append((float(e.out_start), view))
        prev_view = view
    return switches


def camera_switch_accuracy(produced, reference, tolerance: float = 1.0) -> float:
    """Fraction of reference switches matched in time and target view."""
    ref = edl_switches(reference)
    if not ref:
        raise UndefinedMetricError("reference timeline has no switches")
    got = edl_switches(produced)
    hit = 0
    for t, view in ref:
        if any(v == view and abs(t2 - t) <= tolerance for t2, v in got):
            hit += 1
    return hit / len(ref)


@dataclass(frozen=True)
class PrecisionRecall:
    precision: float
    recall: float
    f1: float
    precision_defined: bool = True


def precision_recall_f1(scores: Sequence[float], labels: Sequence[int],
                        tau: float) -> PrecisionRecall:
    """Threshold ``scores`` at tau (inclusive) and compare with labels."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape:
        raise ContractViolation("scores/labels length mismatch")
    pred = scores >= tau
    tp = int(np.sum(pred & (labels == 1)))
    fp = int(np.sum(pred & (labels == 0)))
    fn = int(np.sum(~pred & (labels == 1)))
    if tp + fp == 0:
        precision, defined = 0.0, False
    else:
        precision, defined = tp / (tp + fp), True
    recall = tp / (tp + fn) if (tp + fn) else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall > 0 else 0.0)
    return PrecisionRecall(precision, recall, f1, defined)


# ------------------------------------------------------- oracle: suppression


def nms_bruteforce(proposals, threshold: float):
    """Greedy suppression re-derived by repeated global-max scans.

    Returns the surviving proposals in acceptance order.  Background
    proposals (class id 0) are discarded up front.  The winner of each
    scan is the remaining proposal with the highest ranking score,
    breaking ties by earlier start then lower index.
    """
    alive = [p for p in proposals if p.class_id != 0]
    kept = []
    while alive:
        best = alive[0]
        for p in alive[1:]:
            if (p.ranking_score, -p.t_start, -p.index) > \
                    (best.ranking_score, -best.t_start, -best.index):
                best = p
        kept.append(best)
        survivors = []
        for p in alive:
            if p is best:
                continue
            if p.class_id == best.class_id:
                iou = temporal_iou((p.t_start, p.t_end),
                                   (best.t_start, best.t_end))
                if iou >= threshold:
                    continue
            survivors.append(p)
        alive = survivors
    return kept


# ------------------------------------------------------ oracle: selection


def _population_std(values) -> float:
    n = len(values)
    mean = sum(values) / n
    return math.sqrt(sum((v - mean) ** 2 for v in values) / n)


def _spread_penalty(counts: Sequence[int], views) -> float:
    tally = list(counts)
    for v in views:
        tally[v - 1] += 1
    total = sum(tally)
    concentrated = [total] + [0] * (len(tally) - 1)
    denom = _population_std(concentrated)
    if denom == 0.0:
        return 0.0
    return _population_std(tally) / denom


def selection_bruteforce(candidates, counts: Sequence[int]):
    """Exhaustive begin/end pick maximizing correlation minus view spread.

    ``counts`` holds prior selection tallies for views 1..K-1 (index
    view-1); view 0 is the broadcast default and never tallied.  A side
    with no candidates contributes the single option "none".
    """
    begins = [c for c in candidates if c.kind == "begin"] or [None]
    ends = [c for c in candidates if c.kind == "end"] or [None]
    best = None
    best_key = None
    for b in begins:
        for e in ends:
            chosen = [c for c in (b, e) if c is not None]
            if chosen:
                cor = sum(c.correlation_score for c in chosen) / len(chosen)
            else:
                cor = 0.0
            views = [c.clip.view for c in chosen if c.clip.view != 0]
            objective = cor - _spread_penalty(counts, views)
            key = (objective, cor,
                   -(b.clip.t_start if b else 0.0), -(b.clip.view if b else 0),
                   -(e.clip.t_start if e else 0.0), -(e.clip.view if e else 0))
            if best_key is None or key > best_key:
                best, best_key = (b, e), key
    return best
