"""Detection-quality metrics: greedy matching, PR curves, AP/AR, P/R/F1.

Evaluation follows the familiar COCO conventions:

* greedy matching in descending score order; a detection takes the
  highest-IoU unmatched ground truth at or above the IoU threshold;
* 101-point interpolated average precision, averaged over the ten IoU
  thresholds 0.50, 0.55, .., 0.95 for the headline figure;
* recall averaged over the same thresholds with at most 100 detections
  per image (AR@100);
* size buckets by box area: small below 32 squared, medium below 96
  squared, large otherwise, handled through an ignore mechanism so
  out-of-bucket boxes neither count as hits nor as errors.

Precision, recall, and F1 are count-based: P = TP/(TP+FP),
R = TP/(TP+FN), F1 = 2TP/(2TP+FP+FN), each 0 when its denominator is 0.

Inputs are duck-typed: detections need ``class_label``, ``score`` and
``bbox``; ground truths need ``class_label`` and ``bbox``.  Boxes are
``(x_min, y_min, x_max, y_max)`` with strictly positive extent.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .errors import DomainError

Box = tuple[float, float, float, float]

IOU_THRESHOLDS = (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)
RECALL_SAMPLES = 101
RECALL_GRID = np.linspace(0.0, 1.0, RECALL_SAMPLES)
MAX_DETECTIONS_PER_IMAGE = 100

_SMALL_AREA_MAX = 32.0**2
_MEDIUM_AREA_MAX = 96.0**2


class LabeledBox(Protocol):
    class_label: str
    bbox: Box


class ScoredBox(LabeledBox, Protocol):
    score: float


def _check_box(box: Box) -> None:
    x_min, y_min, x_max, y_max = box
    if not (x_min < x_max and y_min < y_max):
        raise DomainError(f"degenerate box {box}")


def box_area(box: Box) -> float:
    _check_box(box)
    return (box[2] - box[0]) * (box[3] - box[1])


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes; 0 when they do not overlap."""
    _check_box(a)
    _check_box(b)
    ix_min = max(a[0], b[0])
    iy_min = max(a[1], b[1])
    ix_max = min(a[2], b[2])
    iy_max = min(a[3], b[3])
    if ix_min >= ix_max or iy_min >= iy_max:
        return 0.0
    inter = (ix_max - ix_min) * (iy_max - iy_min)
    union = box_area(a) + box_area(b) - inter
    return inter / union


class SizeBucket(enum.Enum):
    SMALL = "SMALL"
    MEDIUM = "MEDIUM"
    LARGE = "LARGE"


def size_bucket(box: Box) -> SizeBucket:
    """Bucket a box by area: below 32^2 small, below 96^2 medium, else large."""
    area = box_area(box)
    if area < _SMALL_AREA_MAX:
        return SizeBucket.SMALL
    if area < _MEDIUM_AREA_MAX:
        return SizeBucket.MEDIUM
    return SizeBucket.LARGE


_BUCKET_RANGES: dict[SizeBucket | None, tuple[float, float]] = {
    None: (0.0, float("inf")),
    SizeBucket.SMALL: (0.0, _SMALL_AREA_MAX),
    SizeBucket.MEDIUM: (_SMALL_AREA_MAX, _MEDIUM_AREA_MAX),
    SizeBucket.LARGE: (_MEDIUM_AREA_MAX, float("inf")),
}


def prf1(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """Precision, recall and F1 from counts; 0 where the denominator is 0."""
    if tp < 0 or fp < 0 or fn < 0:
        raise DomainError("counts must be non-negative")
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 0.0
    return precision, recall, f1


def _det_order(dets: Sequence[ScoredBox]) -> list[int]:
    return sorted(range(len(dets)), key=lambda i: (-dets[i].score, dets[i].bbox))


def _greedy_match(
    dets: Sequence[ScoredBox],
    gts: Sequence[LabeledBox],
    iou_threshold: float,
    gt_ignored: Sequence[bool],
) -> tuple[list[str], list[int]]:
    """Match pre-sorted same-class detections against ground truths.

    Returns one status per detection ('tp', 'fp' or 'ignored') and the
    matched ground-truth index (-1 when unmatched).  A detection prefers
    the highest-IoU unmatched non-ignored ground truth; only when none
    qualifies may it consume an ignored one, which removes the detection
    from scoring instead of counting it.
    """
    taken = [False] * len(gts)
    statuses: list[str] = []
    matched: list[int] = []
    for det in dets:
        best_j, best_iou = -1, -1.0
        for j, gt in enumerate(gts):
            if taken[j] or gt_ignored[j]:
                continue
            value = iou(det.bbox, gt.bbox)
            if value >= iou_threshold and value > best_iou:
                best_j, best_iou = j, value
        if best_j < 0:
            for j, gt in enumerate(gts):
                if taken[j] or not gt_ignored[j]:
                    continue
                value = iou(det.bbox, gt.bbox)
                if value >= iou_threshold and value > best_iou:
                    best_j, best_iou = j, value
            if best_j >= 0:
                taken[best_j] = True
                statuses.append("ignored")
                matched.append(best_j)
            else:
                statuses.append("fp")
                matched.append(-1)
        else:
            taken[best_j] = True
            statuses.append("tp")
            matched.append(best_j)
    return statuses, matched


@dataclass(frozen=True)
class ClassMatch:
    tp: int
    fp: int
    fn: int
    pairs: tuple[tuple[int, int], ...]


@dataclass
class MatchResult:
    """Per-class greedy matching outcome for one image."""

    iou_threshold: float
    per_class: dict[str, ClassMatch]

    @property
    def tp(self) -> int:
        return sum(m.tp for m in self.per_class.values())

    @property
    def fp(self) -> int:
        return sum(m.fp for m in self.per_class.values())

    @property
    def fn(self) -> int:
        return sum(m.fn for m in self.per_class.values())


def match(
    detections: Sequence[ScoredBox],
    ground_truths: Sequence[LabeledBox],
    iou_threshold: float,
) -> MatchResult:
    """Greedily match one image's detections to its ground truths.

    Matching is per class: detections only ever match ground truths with
    the same label.  Pair indices refer to the input sequences.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise DomainError(f"iou_threshold {iou_threshold} outside (0, 1]")
    labels = sorted(
        {d.class_label for d in detections} | {g.class_label for g in ground_truths}
    )
    per_class: dict[str, ClassMatch] = {}
    for label in labels:
        det_idx = [i for i in range(len(detections)) if detections[i].class_label == label]
        det_idx.sort(key=lambda i: (-detections[i].score, detections[i].bbox))
        gt_idx = [j for j in range(len(ground_truths)) if ground_truths[j].class_label == label]
        dets = [detections[i] for i in det_idx]
        gts = [ground_truths[j] for j in gt_idx]
        statuses, matched = _greedy_match(dets, gts, iou_threshold, [False] * len(gts))
        pairs = tuple(
            (det_idx[k], gt_idx[matched[k]])
            for k in range(len(dets))
            if statuses[k] == "tp"
        )
        tp = len(pairs)
        per_class[label] = ClassMatch(
            tp=tp, fp=len(dets) - tp, fn=len(gts) - tp, pairs=pairs
        )
    return MatchResult(iou_threshold=iou_threshold, per_class=per_class)


@dataclass
class ImageEval:
    """One image's detections and ground truths, keyed for reporting."""

    image_ref: str
    detections: list[ScoredBox] = field(default_factory=list)
    ground_truths: list[LabeledBox] = field(default_factory=list)


@dataclass
class PRCurve:
    """Raw and interpolated precision/recall for one class and threshold."""

    class_label: str
    iou_threshold: float
    recalls: np.ndarray
    precisions: np.ndarray
    interpolated: np.ndarray

    def __post_init__(self) -> None:
        if len(self.recalls) != len(self.precisions):
            raise DomainError("recalls and precisions must have equal length")
        if len(self.interpolated) != RECALL_SAMPLES:
            raise DomainError(f"interpolated curve must have {RECALL_SAMPLES} samples")
        if np.any(np.diff(self.interpolated) > 1e-12):
            raise DomainError("interpolated precision must be non-increasing")


def average_precision(curve: PRCurve) -> float:
    """Mean of the interpolated precision over the 101-point recall grid."""
    return float(curve.interpolated.mean())


def average_recall(recalls: Sequence[float]) -> float:
    """Mean recall over a set of IoU thresholds; 0.0 for an empty set."""
    values = [float(r) for r in recalls]
    for value in values:
        if not 0.0 <= value <= 1.0:
            raise DomainError(f"recall {value} outside [0, 1]")
    if not values:
        return 0.0
    return sum(values) / len(values)


def dump_pr_curve_csv(curve: PRCurve, path: str | Path) -> None:
    """Write curve points as CSV rows ``kind,recall,precision``.

    ``raw`` rows are the cumulative points in score order; ``interpolated``
    rows are the monotone envelope sampled on the 101-point recall grid.
    """
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["kind", "recall", "precision"])
        for recall, precision in zip(curve.recalls, curve.precisions):
            writer.writerow(["raw", repr(float(recall)), repr(float(precision))])
        for recall, precision in zip(RECALL_GRID, curve.interpolated):
            writer.writerow(
                ["interpolated", repr(float(recall)), repr(float(precision))]
            )


def _capped_detections(image: ImageEval) -> list[ScoredBox]:
    order = _det_order(image.detections)
    return [image.detections[i] for i in order[:MAX_DETECTIONS_PER_IMAGE]]


def _class_records(
    images: Sequence[ImageEval],
    class_label: str,
    iou_threshold: float,
    bucket: SizeBucket | None,
) -> tuple[list[tuple[float, int, int, str]], int]:
    """Flatten matching over images into scored records plus the GT count.

    Records are ``(score, image_index, rank_in_image, status)`` so a
    global descending-score sort is deterministic.
    """
    lo, hi = _BUCKET_RANGES[bucket]
    records: list[tuple[float, int, int, str]] = []
    n_gt = 0
    for img_index, image in enumerate(images):
        dets = [d for d in _capped_detections(image) if d.class_label == class_label]
        gts = [g for g in image.ground_truths if g.class_label == class_label]
        gt_ignored = [not lo <= box_area(g.bbox) < hi for g in gts]
        n_gt += sum(1 for flag in gt_ignored if not flag)
        statuses, _ = _greedy_match(dets, gts, iou_threshold, gt_ignored)
        for rank, (det, status) in enumerate(zip(dets, statuses)):
            if status == "fp" and not lo <= box_area(det.bbox) < hi:
                status = "ignored"
            records.append((det.score, img_index, rank, status))
    return records, n_gt


def _curve_from_records(
    records: list[tuple[float, int, int, str]], n_gt: int
) -> tuple[np.ndarray, np.ndarray]:
    ordered = sorted(records, key=lambda r: (-r[0], r[1], r[2]))
    recalls, precisions = [], []
    tp = fp = 0
    for score, _, _, status in ordered:
        if status == "ignored":
            continue
        if status == "tp":
            tp += 1
        else:
            fp += 1
        recalls.append(tp / n_gt)
        precisions.append(tp / (tp + fp))
    return np.asarray(recalls), np.asarray(precisions)


def _interpolate(recalls: np.ndarray, precisions: np.ndarray) -> np.ndarray:
    if len(recalls) == 0:
        return np.zeros(RECALL_SAMPLES)
    envelope = np.maximum.accumulate(precisions[::-1])[::-1]
    positions = np.searchsorted(recalls, RECALL_GRID, side="left")
    clipped = np.minimum(positions, len(recalls) - 1)
    return np.where(positions < len(recalls), envelope[clipped], 0.0)


def build_pr_curve(
    images: Sequence[ImageEval], class_label: str, iou_threshold: float
) -> PRCurve:
    """Dataset-level PR curve for one class at one IoU threshold.

    Raises :class:`DomainError` when the class has no ground truth, since
    recall is undefined then.
    """
    records, n_gt = _class_records(images, class_label, iou_threshold, bucket=None)
    if n_gt == 0:
        raise DomainError(f"class {class_label!r} has no ground truth")
    recalls, precisions = _curve_from_records(records, n_gt)
    return PRCurve(
        class_label=class_label,
        iou_threshold=iou_threshold,
        recalls=recalls,
        precisions=precisions,
        interpolated=_interpolate(recalls, precisions),
    )


@dataclass
class ClassReport:
    """Per-class metrics block inside an :class:`EvalReport`."""

    class_label: str
    n_ground_truth: int
    ap50: float | None
    ap: float | None
    ar100: float | None
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float


@dataclass
class EvalReport:
    """Dataset-level evaluation summary.

    Mean metrics average over classes with ground truth; they are ``None``
    when no class qualifies (for the bucketed means, when no class has a
    ground truth box in that bucket).
    """

    classes: dict[str, ClassReport]
    mean_ap50: float | None
    mean_ap: float | None
    mean_ar100: float | None
    mean_ap_small: float | None
    mean_ap_medium: float | None
    mean_ap_large: float | None
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    score_threshold: float
    count_iou_threshold: float

    def to_dict(self) -> dict:
        return {
            "classes": {
                label: vars(report).copy() for label, report in self.classes.items()
            },
            "mean_ap50": self.mean_ap50,
            "mean_ap": self.mean_ap,
            "mean_ar100": self.mean_ar100,
            "mean_ap_small": self.mean_ap_small,
            "mean_ap_medium": self.mean_ap_medium,
            "mean_ap_large": self.mean_ap_large,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "score_threshold": self.score_threshold,
            "count_iou_threshold": self.count_iou_threshold,
        }

    def format_table(self) -> str:
        def fmt(value: float | None) -> str:
            return "n/a" if value is None else f"{value:.4f}"

        lines = [
            f"{'class':<24} {'AP50':>8} {'AP':>8} {'AR100':>8} "
            f"{'TP':>5} {'FP':>5} {'FN':>5} {'P':>8} {'R':>8} {'F1':>8}"
        ]
        for label in sorted(self.classes):
            r = self.classes[label]
            lines.append(
                f"{label:<24} {fmt(r.ap50):>8} {fmt(r.ap):>8} {fmt(r.ar100):>8} "
                f"{r.tp:>5} {r.fp:>5} {r.fn:>5} "
                f"{r.precision:>8.4f} {r.recall:>8.4f} {r.f1:>8.4f}"
            )
        lines.append(
            f"{'mean/total':<24} {fmt(self.mean_ap50):>8} {fmt(self.mean_ap):>8} "
            f"{fmt(self.mean_ar100):>8} {self.tp:>5} {self.fp:>5} {self.fn:>5} "
            f"{self.precision:>8.4f} {self.recall:>8.4f} {self.f1:>8.4f}"
        )
        return "\n".join(lines)


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def _class_ap_ar(
    images: Sequence[ImageEval], class_label: str, bucket: SizeBucket | None
) -> tuple[float | None, float | None, float | None]:
    """(AP50, AP, AR100) for one class, or Nones when it has no ground truth."""
    aps: list[float] = []
    recalls: list[float] = []
    ap50: float | None = None
    for threshold in IOU_THRESHOLDS:
        records, n_gt = _class_records(images, class_label, threshold, bucket)
        if n_gt == 0:
            return None, None, None
        rec, prec = _curve_from_records(records, n_gt)
        ap_t = float(_interpolate(rec, prec).mean())
        aps.append(ap_t)
        recalls.append(float(rec[-1]) if len(rec) else 0.0)
        if threshold == 0.5:
            ap50 = ap_t
    return ap50, _mean(aps), _mean(recalls)


def evaluate_detections(
    images: Sequence[ImageEval],
    classes: Iterable[str] | None = None,
    score_threshold: float = 0.5,
    count_iou_threshold: float = 0.5,
) -> EvalReport:
    """Full COCO-style evaluation of per-image detections.

    ``classes`` defaults to every class present in the ground truth.
    Count-based P/R/F1 use only detections scoring at least
    ``score_threshold``, matched at ``count_iou_threshold``.
    """
    if classes is None:
        class_list = sorted(
            {g.class_label for img in images for g in img.ground_truths}
        )
    else:
        class_list = sorted(set(classes))
    reports: dict[str, ClassReport] = {}
    total_tp = total_fp = total_fn = 0
    bucket_aps: dict[SizeBucket, list[float]] = {b: [] for b in SizeBucket}
    for label in class_list:
        ap50, ap, ar100 = _class_ap_ar(images, label, bucket=None)
        for bucket in SizeBucket:
            _, bucket_ap, _ = _class_ap_ar(images, label, bucket)
            if bucket_ap is not None:
                bucket_aps[bucket].append(bucket_ap)
        tp = fp = fn = n_gt = 0
        for image in images:
            dets = [
                d
                for d in _capped_detections(image)
                if d.class_label == label and d.score >= score_threshold
            ]
            gts = [g for g in image.ground_truths if g.class_label == label]
            statuses, _ = _greedy_match(
                dets, gts, count_iou_threshold, [False] * len(gts)
            )
            img_tp = statuses.count("tp")
            tp += img_tp
            fp += len(dets) - img_tp
            fn += len(gts) - img_tp
            n_gt += len(gts)
        precision, recall, f1 = prf1(tp, fp, fn)
        reports[label] = ClassReport(
            class_label=label,
            n_ground_truth=n_gt,
            ap50=ap50,
            ap=ap,
            ar100=ar100,
            tp=tp,
            fp=fp,
            fn=fn,
            precision=precision,
            recall=recall,
            f1=f1,
        )
        total_tp += tp
        total_fp += fp
        total_fn += fn
    with_gt = [r for r in reports.values() if r.ap is not None]
    precision, recall, f1 = prf1(total_tp, total_fp, total_fn)
    return EvalReport(
        classes=reports,
        mean_ap50=_mean([r.ap50 for r in with_gt]),
        mean_ap=_mean([r.ap for r in with_gt]),
        mean_ar100=_mean([r.ar100 for r in with_gt]),
        mean_ap_small=_mean(bucket_aps[SizeBucket.SMALL]),
        mean_ap_medium=_mean(bucket_aps[SizeBucket.MEDIUM]),
        mean_ap_large=_mean(bucket_aps[SizeBucket.LARGE]),
        tp=total_tp,
        fp=total_fp,
        fn=total_fn,
        precision=precision,
        recall=recall,
        f1=f1,
        score_threshold=score_threshold,
        count_iou_threshold=count_iou_threshold,
    )
