"""Overlap-based ground-truth labels and precision-recall over inlier thresholds."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Sequence

from .errors import MissingPose, UnlabeledPair
from .ingest import Submap
from .registration import MatchResult, classify


@dataclass(frozen=True)
class OverlapLabel:
    pair: tuple
    iou: float
    is_true: bool


@dataclass(frozen=True)
class PrPoint:
    threshold: int
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int
    no_positives: bool = False


def global_bbox(submap: Submap) -> tuple[float, float, float, float]:
    if submap.world_pose is None:
        raise MissingPose(f"submap {submap.id} has no world pose")
    xy = submap.world_pose.se2.apply(submap.cloud.xy)
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    return float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1])


def box_iou(a, b) -> float:
    """IoU of two axis-aligned ``(x_min, x_max, y_min, y_max)`` boxes."""
    iw = min(a[1], b[1]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[2], b[2])
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = (a[1] - a[0]) * (a[3] - a[2]) + (b[1] - b[0]) * (b[3] - b[2]) - inter
    if union <= 0:
        # two degenerate boxes: identical counts as full overlap
        return 1.0 if tuple(a) == tuple(b) else 0.0
    return inter / union


def iou_overlap(a: Submap, b: Submap) -> float:
    return box_iou(global_bbox(a), global_bbox(b))


def pair_key(a, b) -> tuple:
    return (a, b) if a <= b else (b, a)


def label_pairs(db: Sequence[Submap], iou_threshold: float = 0.3,
                exclude_consecutive: bool = False) -> list[OverlapLabel]:
    """One label per unordered pair of distinct submaps, true when IoU exceeds the threshold."""
    if not 0 <= iou_threshold <= 1:
        raise ValueError("iou_threshold must be in [0, 1]")
    boxes = {s.id: global_bbox(s) for s in db}
    labels = []
    for a, b in combinations(sorted(boxes), 2):
        if exclude_consecutive and abs(a - b) == 1:
            continue
        iou = box_iou(boxes[a], boxes[b])
        labels.append(OverlapLabel((a, b), iou, iou > iou_threshold))
    return labels


def precision_recall(results: Iterable[tuple], labels: Sequence[OverlapLabel],
                     thresholds: Iterable[int] = range(1, 21)) -> list[PrPoint]:
    """Sweep the minimum inlier count.

    ``results`` holds ``(query_id, db_id, MatchResult)``.  A pair is predicted
    positive at threshold ``t`` when any of its results classifies positive.
    Labeled pairs without a result count as predicted negative.  With no
    predicted positives precision is reported as 1.0 and ``no_positives`` set.
    """
    truth = {lab.pair: lab.is_true for lab in labels}
    by_pair: dict[tuple, list[MatchResult]] = {}
    for q, d, res in results:
        key = pair_key(q, d)
        if key not in truth:
            raise UnlabeledPair(f"no label for pair {key}")
        by_pair.setdefault(key, []).append(res)
    n_true = sum(truth.values())
    points = []
    for t in thresholds:
        predicted = {k for k, rs in by_pair.items() if any(classify(r, t) for r in rs)}
        tp = sum(1 for k in predicted if truth[k])
        fp = len(predicted) - tp
        fn = n_true - tp
        empty = tp + fp == 0
        precision = 1.0 if empty else tp / (tp + fp)
        recall = tp / n_true if n_true else 1.0
        points.append(PrPoint(int(t), precision, recall, tp, fp, fn, empty))
    return points


def write_pr_csv(points: Sequence[PrPoint], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "precision", "recall", "tp", "fp", "fn"])
        for p in points:
            w.writerow([p.threshold, repr(p.precision), repr(p.recall), p.tp, p.fp, p.fn])


def write_labels_csv(labels: Sequence[OverlapLabel], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pair_a", "pair_b", "iou", "is_true"])
        for lab in labels:
            w.writerow([lab.pair[0], lab.pair[1], repr(lab.iou), str(lab.is_true).lower()])


def read_pr_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))

