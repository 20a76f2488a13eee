"""Matching, PR curves, AP/AR, and count metrics against independent oracles."""

import csv
from dataclasses import dataclass

import numpy as np
import pytest

from detdsci.errors import DomainError
from detdsci.metrics import (
    IOU_THRESHOLDS,
    MAX_DETECTIONS_PER_IMAGE,
    RECALL_GRID,
    ImageEval,
    PRCurve,
    SizeBucket,
    average_precision,
    average_recall,
    build_pr_curve,
    dump_pr_curve_csv,
    evaluate_detections,
    iou,
    match,
    prf1,
    size_bucket,
)


@dataclass(frozen=True)
class DBox:
    class_label: str
    score: float
    bbox: tuple


@dataclass(frozen=True)
class GBox:
    class_label: str
    bbox: tuple


# --- test-local oracles, written against the metric definitions ---


def oracle_greedy_counts(dets, gts, threshold):
    """Greedy matching by descending score; highest-IoU free ground truth wins."""
    order = sorted(dets, key=lambda d: (-d.score, d.bbox))
    taken = [False] * len(gts)
    statuses = []
    for det in order:
        best_j, best_v = -1, -1.0
        for j, gt in enumerate(gts):
            if taken[j]:
                continue
            v = iou(det.bbox, gt.bbox)
            if v >= threshold and v > best_v:
                best_j, best_v = j, v
        if best_j >= 0:
            taken[best_j] = True
            statuses.append("tp")
        else:
            statuses.append("fp")
    tp = statuses.count("tp")
    return tp, len(dets) - tp, len(gts) - tp, [d.score for d in order], statuses


def oracle_max_matching(dets, gts, threshold):
    """Exhaustive maximum bipartite matching size under the IoU threshold."""
    feasible = [
        [iou(d.bbox, g.bbox) >= threshold for g in gts] for d in dets
    ]

    def best(i, used):
        if i == len(dets):
            return 0
        top = best(i + 1, used)
        for j in range(len(gts)):
            if feasible[i][j] and not used & (1 << j):
                top = max(top, 1 + best(i + 1, used | (1 << j)))
        return top

    return best(0, 0)


def oracle_envelope_ap(recalls, precisions):
    """AP as the grid mean of max precision among points with recall >= r."""
    total = 0.0
    for r in RECALL_GRID:
        candidates = [p for rec, p in zip(recalls, precisions) if rec >= r]
        total += max(candidates) if candidates else 0.0
    return total / len(RECALL_GRID)


def oracle_curve(images, threshold):
    """Dataset PR points for one class via per-image greedy matching."""
    flat = []
    n_gt = 0
    for dets, gts in images:
        n_gt += len(gts)
        _, _, _, scores, statuses = oracle_greedy_counts(dets, gts, threshold)
        flat.extend(zip(scores, statuses))
    flat.sort(key=lambda t: -t[0])
    recalls, precisions = [], []
    tp = fp = 0
    for _, status in flat:
        if status == "tp":
            tp += 1
        else:
            fp += 1
        recalls.append(tp / n_gt)
        precisions.append(tp / (tp + fp))
    return recalls, precisions


def random_case(rng, n_images=1, max_dets=6, max_gts=4):
    """Single-class case with globally distinct scores (order is unambiguous)."""
    images = []
    scores = list(rng.permutation(np.linspace(0.05, 0.95, n_images * max_dets)))
    for _ in range(n_images):
        n_det = int(rng.integers(0, max_dets + 1))
        n_gt = int(rng.integers(1, max_gts + 1))
        dets = []
        for _ in range(n_det):
            x, y = rng.uniform(0, 60, size=2)
            w, h = rng.uniform(2, 40, size=2)
            dets.append(
                DBox("obj", float(scores.pop()), (x, y, x + w, y + h))
            )
        gts = []
        for _ in range(n_gt):
            x, y = rng.uniform(0, 60, size=2)
            w, h = rng.uniform(2, 40, size=2)
            gts.append(GBox("obj", (x, y, x + w, y + h)))
        images.append((dets, gts))
    return images


# --- IoU and buckets ---


def test_iou_examples():
    assert iou((0, 0, 2, 1), (1, 0, 3, 1)) == pytest.approx(1 / 3)
    assert iou((0, 0, 1, 1), (0, 0, 1, 1)) == 1.0
    assert iou((0, 0, 1, 1), (5, 5, 6, 6)) == 0.0
    # Edge contact has zero intersection area.
    assert iou((0, 0, 1, 1), (1, 0, 2, 1)) == 0.0
    assert iou((0, 0, 4, 4), (1, 1, 3, 3)) == pytest.approx(4 / 16)
    with pytest.raises(DomainError, match="degenerate"):
        iou((0, 0, 0, 1), (0, 0, 1, 1))


def test_iou_is_symmetric():
    rng = np.random.default_rng(5)
    for _ in range(50):
        a = tuple(np.sort(rng.uniform(0, 50, 2))) + (0.0, 1.0)
        ax, bx, ay, by = a
        box_a = (ax, ay, bx + 1, by)
        c = tuple(np.sort(rng.uniform(0, 50, 2)))
        box_b = (c[0], 0.5, c[1] + 1, 2.0)
        assert iou(box_a, box_b) == iou(box_b, box_a)
        assert 0.0 <= iou(box_a, box_b) <= 1.0


def test_size_bucket_boundaries():
    assert size_bucket((0, 0, 31, 31)) is SizeBucket.SMALL
    assert size_bucket((0, 0, 32, 32)) is SizeBucket.MEDIUM
    assert size_bucket((0, 0, 95, 95)) is SizeBucket.MEDIUM
    assert size_bucket((0, 0, 96, 96)) is SizeBucket.LARGE
    # Buckets use area, not side length.
    assert size_bucket((0, 0, 1, 1023)) is SizeBucket.SMALL
    assert size_bucket((0, 0, 1, 1025)) is SizeBucket.MEDIUM


# --- count metrics ---


def test_prf1_published_triples():
    precision, recall, f1 = prf1(83, 24, 32)
    assert round(100 * precision, 2) == 77.57
    assert round(100 * recall, 2) == 72.17
    assert round(100 * f1, 2) == 74.77
    precision, recall, f1 = prf1(27, 3, 88)
    assert round(100 * precision, 2) == 90.00
    assert round(100 * recall, 2) == 23.48
    assert round(100 * f1, 2) == 37.24


def test_prf1_edge_cases_and_validation():
    assert prf1(0, 0, 0) == (0.0, 0.0, 0.0)
    assert prf1(5, 0, 0) == (1.0, 1.0, 1.0)
    assert prf1(0, 3, 0) == (0.0, 0.0, 0.0)
    assert prf1(0, 0, 7) == (0.0, 0.0, 0.0)
    with pytest.raises(DomainError, match="non-negative"):
        prf1(-1, 0, 0)


def test_prf1_is_scale_free():
    base = prf1(7, 3, 5)
    assert prf1(70, 30, 50) == pytest.approx(base)
    assert prf1(700, 300, 500) == pytest.approx(base)


def test_f1_is_harmonic_mean():
    rng = np.random.default_rng(13)
    for _ in range(100):
        tp, fp, fn = (int(v) for v in rng.integers(1, 500, 3))
        precision, recall, f1 = prf1(tp, fp, fn)
        assert f1 == pytest.approx(
            2 * precision * recall / (precision + recall), abs=1e-12
        )


# --- greedy matching ---


def test_match_hand_case_prefers_highest_iou():
    gt1 = GBox("obj", (0, 0, 10, 10))
    gt2 = GBox("obj", (8, 0, 18, 10))
    det_a = DBox("obj", 0.9, (2, 0, 12, 10))
    det_b = DBox("obj", 0.8, (0, 0, 10, 10))
    result = match([det_a, det_b], [gt1, gt2], iou_threshold=0.25)
    # det_a takes gt1 (IoU 2/3 beats 1/4), leaving det_b unmatched:
    # greedy scores one pair where the optimum would score two.
    cm = result.per_class["obj"]
    assert (cm.tp, cm.fp, cm.fn) == (1, 1, 1)
    assert cm.pairs == ((0, 0),)
    assert oracle_max_matching([det_a, det_b], [gt1, gt2], 0.25) == 2


def test_match_is_class_scoped():
    det = DBox("plane", 0.9, (0, 0, 10, 10))
    gt = GBox("bridge", (0, 0, 10, 10))
    result = match([det], [gt], iou_threshold=0.5)
    assert result.per_class["plane"].fp == 1
    assert result.per_class["bridge"].fn == 1
    assert result.tp == 0 and result.fp == 1 and result.fn == 1


def test_match_pairs_reference_input_indices():
    dets = [
        DBox("obj", 0.2, (100, 100, 110, 110)),
        DBox("obj", 0.9, (0, 0, 10, 10)),
    ]
    gts = [GBox("obj", (0, 0, 10, 10)), GBox("obj", (100, 100, 110, 110))]
    result = match(dets, gts, iou_threshold=0.5)
    assert set(result.per_class["obj"].pairs) == {(1, 0), (0, 1)}


def test_match_threshold_validation():
    match([], [], iou_threshold=1.0)
    for bad in (0.0, -0.5, 1.5):
        with pytest.raises(DomainError, match="iou_threshold"):
            match([], [], bad)


def test_match_count_identities_random():
    rng = np.random.default_rng(23)
    for _ in range(60):
        (case,) = random_case(rng)
        dets, gts = case
        for threshold in (0.3, 0.5, 0.75):
            result = match(dets, gts, threshold)
            cm = result.per_class.get("obj")
            if cm is None:
                assert not dets and not gts
                continue
            assert cm.tp + cm.fn == len(gts)
            assert cm.tp + cm.fp == len(dets)
            tp, fp, fn, _, _ = oracle_greedy_counts(dets, gts, threshold)
            assert (cm.tp, cm.fp, cm.fn) == (tp, fp, fn)
            assert cm.tp <= oracle_max_matching(dets, gts, threshold)


# --- PR curves and AP ---


def hand_case_images():
    gts = [GBox("plane", (0, 0, 10, 10)), GBox("plane", (100, 0, 110, 10))]
    dets = [
        DBox("plane", 0.9, (0, 0, 10, 10)),
        DBox("plane", 0.8, (50, 50, 60, 60)),
        DBox("plane", 0.7, (100, 0, 110, 10)),
    ]
    return [ImageEval(image_ref="img0", detections=dets, ground_truths=gts)]


def test_hand_frozen_ap_value():
    curve = build_pr_curve(hand_case_images(), "plane", iou_threshold=0.5)
    assert list(curve.recalls) == pytest.approx([0.5, 0.5, 1.0])
    assert list(curve.precisions) == pytest.approx([1.0, 0.5, 2 / 3])
    expected = (51 * 1.0 + 50 * (2 / 3)) / 101
    assert average_precision(curve) == pytest.approx(expected, abs=1e-12)
    assert oracle_envelope_ap(curve.recalls, curve.precisions) == pytest.approx(
        expected, abs=1e-12
    )


def test_perfect_and_zero_ap():
    gts = [GBox("plane", (0, 0, 10, 10))]
    perfect = [
        ImageEval(
            image_ref="a",
            detections=[DBox("plane", 0.9, (0, 0, 10, 10))],
            ground_truths=gts,
        )
    ]
    assert average_precision(build_pr_curve(perfect, "plane", 0.5)) == 1.0
    empty = [ImageEval(image_ref="b", detections=[], ground_truths=gts)]
    assert average_precision(build_pr_curve(empty, "plane", 0.5)) == 0.0


def test_build_pr_curve_requires_ground_truth():
    images = [
        ImageEval(
            image_ref="a",
            detections=[DBox("plane", 0.9, (0, 0, 10, 10))],
            ground_truths=[],
        )
    ]
    with pytest.raises(DomainError, match="no ground truth"):
        build_pr_curve(images, "plane", 0.5)


def test_pr_curve_validation():
    flat = np.ones(RECALL_GRID.shape)
    with pytest.raises(DomainError, match="equal length"):
        PRCurve("c", 0.5, np.array([0.1]), np.array([1.0, 0.5]), flat)
    with pytest.raises(DomainError, match="101 samples"):
        PRCurve("c", 0.5, np.array([0.1]), np.array([1.0]), np.ones(50))
    rising = np.linspace(0.0, 1.0, 101)
    with pytest.raises(DomainError, match="non-increasing"):
        PRCurve("c", 0.5, np.array([0.1]), np.array([1.0]), rising)


def test_ap_matches_envelope_oracle_random():
    rng = np.random.default_rng(31)
    for case_index in range(60):
        n_images = int(rng.integers(1, 4))
        case = random_case(rng, n_images=n_images)
        images = [
            ImageEval(image_ref=f"img{i}", detections=d, ground_truths=g)
            for i, (d, g) in enumerate(case)
        ]
        for threshold in (0.3, 0.5):
            curve = build_pr_curve(images, "obj", threshold)
            expected_points = oracle_curve(case, threshold)
            assert list(curve.recalls) == pytest.approx(expected_points[0])
            assert list(curve.precisions) == pytest.approx(expected_points[1])
            oracle = oracle_envelope_ap(*expected_points)
            assert average_precision(curve) == pytest.approx(
                oracle, abs=1e-9
            ), (case_index, threshold)


def test_ap_invariant_under_input_permutation():
    rng = np.random.default_rng(37)
    gts = [GBox("obj", (i * 30.0, 0.0, i * 30.0 + 20.0, 20.0)) for i in range(3)]
    dets = [
        DBox("obj", 0.5, (0.0, 0.0, 20.0, 20.0)),
        DBox("obj", 0.5, (30.0, 0.0, 50.0, 20.0)),
        DBox("obj", 0.5, (31.0, 0.0, 50.0, 20.0)),
        DBox("obj", 0.5, (200.0, 0.0, 220.0, 20.0)),
    ]
    reference = None
    for _ in range(10):
        shuffled = list(dets)
        rng.shuffle(shuffled)
        images = [ImageEval(image_ref="a", detections=shuffled, ground_truths=gts)]
        ap = average_precision(build_pr_curve(images, "obj", 0.5))
        if reference is None:
            reference = ap
        assert ap == reference


# --- average recall and CSV dump ---


def test_average_recall():
    assert average_recall([1.0, 0.5, 0.0]) == pytest.approx(0.5)
    assert average_recall([]) == 0.0
    with pytest.raises(DomainError, match="outside"):
        average_recall([0.5, 1.2])


def test_dump_pr_curve_csv_round_trip(tmp_path):
    curve = build_pr_curve(hand_case_images(), "plane", 0.5)
    path = tmp_path / "curve.csv"
    dump_pr_curve_csv(curve, path)
    with open(path, newline="") as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["kind", "recall", "precision"]
    raw = [r for r in rows[1:] if r[0] == "raw"]
    interp = [r for r in rows[1:] if r[0] == "interpolated"]
    assert len(raw) == len(curve.recalls)
    assert len(interp) == 101
    assert [float(r[1]) for r in raw] == list(curve.recalls)
    assert [float(r[2]) for r in raw] == list(curve.precisions)
    assert [float(r[2]) for r in interp] == list(curve.interpolated)


# --- dataset-level evaluation ---


def small_dataset():
    img1 = ImageEval(
        image_ref="img1",
        detections=[
            DBox("plane", 0.9, (0, 0, 10, 10)),
            DBox("plane", 0.4, (50, 50, 60, 60)),
        ],
        ground_truths=[GBox("plane", (0, 0, 10, 10))],
    )
    img2 = ImageEval(
        image_ref="img2",
        detections=[],
        ground_truths=[GBox("bridge", (0, 0, 100, 100))],
    )
    return [img1, img2]


def test_evaluate_detections_summary():
    report = evaluate_detections(small_dataset())
    assert sorted(report.classes) == ["bridge", "plane"]
    plane = report.classes["plane"]
    # The 0.4 detection is below the counting threshold but still feeds AP,
    # where a false positive after full recall does not lower the envelope.
    assert (plane.tp, plane.fp, plane.fn) == (1, 0, 0)
    assert plane.ap50 == 1.0
    assert plane.ap == 1.0
    assert plane.ar100 == 1.0
    bridge = report.classes["bridge"]
    assert (bridge.tp, bridge.fp, bridge.fn) == (0, 0, 1)
    assert bridge.ap == 0.0
    assert report.mean_ap50 == pytest.approx(0.5)
    assert report.mean_ap == pytest.approx(0.5)
    assert report.mean_ar100 == pytest.approx(0.5)
    assert (report.tp, report.fp, report.fn) == (1, 0, 1)
    assert report.precision == 1.0
    assert report.recall == pytest.approx(0.5)
    assert report.f1 == pytest.approx(2 / 3)


def test_evaluate_detections_bucketed_means():
    report = evaluate_detections(small_dataset())
    # plane ground truth is small (area 100), bridge large (area 10000).
    assert report.mean_ap_small == 1.0
    assert report.mean_ap_medium is None
    assert report.mean_ap_large == 0.0


def test_bucket_ignores_out_of_bucket_false_positives():
    images = [
        ImageEval(
            image_ref="a",
            detections=[
                DBox("plane", 0.95, (200, 200, 400, 400)),
                DBox("plane", 0.9, (0, 0, 10, 10)),
            ],
            ground_truths=[GBox("plane", (0, 0, 10, 10))],
        )
    ]
    report = evaluate_detections(images)
    # Unmatched large box ahead of the hit halves the unbucketed envelope,
    # but is invisible to the small bucket.
    assert report.classes["plane"].ap50 == pytest.approx(0.5)
    assert report.mean_ap_small == 1.0
    assert report.mean_ap_large is None


def test_score_threshold_only_affects_counts():
    images = small_dataset()
    strict = evaluate_detections(images, score_threshold=0.95)
    assert (strict.tp, strict.fp, strict.fn) == (0, 0, 2)
    assert strict.classes["plane"].ap50 == 1.0
    lax = evaluate_detections(images, score_threshold=0.0)
    assert (lax.tp, lax.fp, lax.fn) == (1, 1, 1)


def test_count_iou_threshold_affects_counts():
    images = [
        ImageEval(
            image_ref="a",
            detections=[DBox("plane", 0.9, (0, 0, 10, 10))],
            ground_truths=[GBox("plane", (0, 5, 10, 15))],
        )
    ]
    # Overlap IoU is 1/3: a hit at 0.3, a miss at 0.5.
    loose = evaluate_detections(images, count_iou_threshold=0.3)
    assert (loose.tp, loose.fp, loose.fn) == (1, 0, 0)
    tight = evaluate_detections(images, count_iou_threshold=0.5)
    assert (tight.tp, tight.fp, tight.fn) == (0, 1, 1)


def test_ar100_caps_detections_per_image():
    gt = [GBox("plane", (0.0, 0.0, 50.0, 50.0))]
    hit = DBox("plane", 0.1, (0.0, 0.0, 50.0, 50.0))

    def misses(n):
        return [
            DBox("plane", 0.9, (1000.0 + i * 60, 0.0, 1050.0 + i * 60, 50.0))
            for i in range(n)
        ]

    crowded = [
        ImageEval(
            image_ref="a",
            detections=misses(MAX_DETECTIONS_PER_IMAGE) + [hit],
            ground_truths=gt,
        )
    ]
    report = evaluate_detections(crowded, score_threshold=0.0)
    assert report.classes["plane"].ar100 == 0.0
    roomy = [
        ImageEval(
            image_ref="a",
            detections=misses(MAX_DETECTIONS_PER_IMAGE - 1) + [hit],
            ground_truths=gt,
        )
    ]
    report = evaluate_detections(roomy, score_threshold=0.0)
    assert report.classes["plane"].ar100 == 1.0


def test_explicit_class_list_reports_absent_classes():
    report = evaluate_detections(small_dataset(), classes=["plane", "harbour"])
    assert sorted(report.classes) == ["harbour", "plane"]
    harbour = report.classes["harbour"]
    assert harbour.n_ground_truth == 0
    assert harbour.ap is None
    # Classes without ground truth stay out of the means.
    assert report.mean_ap == 1.0


def test_report_serialisation_and_table():
    report = evaluate_detections(small_dataset())
    doc = report.to_dict()
    assert doc["tp"] == 1 and doc["fn"] == 1
    assert doc["classes"]["plane"]["ap50"] == 1.0
    table = report.format_table()
    lines = table.splitlines()
    assert lines[0].split()[:4] == ["class", "AP50", "AP", "AR100"]
    assert lines[-1].startswith("mean/total")
    assert any(line.startswith("bridge") for line in lines)
    assert "n/a" not in table
    no_gt = evaluate_detections(small_dataset(), classes=["harbour"])
    assert "n/a" in no_gt.format_table()


def test_ar_is_mean_over_iou_thresholds():
    # One detection matching at IoU 0.75 exactly: a hit for the five
    # thresholds up to 0.75, a miss above.
    images = [
        ImageEval(
            image_ref="a",
            detections=[DBox("plane", 0.9, (0.0, 0.0, 100.0, 75.0))],
            ground_truths=[GBox("plane", (0.0, 0.0, 100.0, 100.0))],
        )
    ]
    report = evaluate_detections(images)
    matched = sum(1 for t in IOU_THRESHOLDS if 0.75 >= t)
    assert report.classes["plane"].ar100 == pytest.approx(
        matched / len(IOU_THRESHOLDS)
    )
    assert report.classes["plane"].ap == pytest.approx(
        matched / len(IOU_THRESHOLDS)
    )
