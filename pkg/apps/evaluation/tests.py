import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from openpyxl import load_workbook

from apps.core.exceptions import ConfigurationError, DimensionError, TargetIndexError
from apps.detection.services import Segment
from apps.evaluation.metrics import (
    accuracy,
    classification_report,
    confusion_matrix,
    detection_report,
    global_frame_iou,
    match_and_ap,
    mean_ap,
    temporal_iou,
)
from apps.evaluation.reports import read_confusion_csv, read_metrics_csv, write_report


def brute_force_ap(detections, truths, threshold=0.5):
    """AP from precision/recall enumerated at every confidence threshold."""
    if not truths:
        return 0.0 if detections else 1.0
    ranked = sorted(detections, key=lambda d: (-d.confidence, d.begin))
    free = set(range(len(truths)))
    hits = []
    for detection in ranked:
        best = max(((temporal_iou(detection, truths[j]), -j) for j in free), default=None)
        if best is not None and best[0] >= threshold:
            free.remove(-best[1])
            hits.append(True)
        else:
            hits.append(False)
    points = []
    for k in range(1, len(hits) + 1):
        tp = sum(hits[:k])
        points.append((tp / len(truths), tp / k))
    ap, previous = 0.0, 0.0
    for level in sorted({r for r, _ in points if r > 0}):
        ap += (level - previous) * max(p for r, p in points if r >= level)
        previous = level
    return ap


def random_instance(rng):
    truths = [Segment(int(b), int(b + rng.integers(20, 120)), 1, 1.0)
              for b in rng.integers(0, 1000, rng.integers(0, 11))]
    detections = [Segment(int(b), int(b + rng.integers(20, 120)), 1, float(rng.random()))
                  for b in rng.integers(0, 1000, rng.integers(0, 21))]
    return detections, truths


class ClassificationMetricTests(SimpleTestCase):
    def test_accuracy(self):
        self.assertEqual(accuracy([1, 2, 3], [1, 2, 3]), 1.0)
        self.assertEqual(accuracy([0, 0], [1, 1]), 0.0)
        self.assertEqual(accuracy([1, 2, 3, 4], [1, 2, 3, 0]), 0.75)

    def test_accuracy_errors(self):
        with self.assertRaises(DimensionError):
            accuracy([1, 2], [1])
        with self.assertRaises(ConfigurationError):
            accuracy([], [])

    def test_single_sample_confusion(self):
        matrix = confusion_matrix([5], [2], [f"c{i}" for i in range(6)])
        self.assertEqual(matrix.counts[2, 5], 1)
        self.assertEqual(matrix.total, 1)

    def test_perfect_predictions_are_diagonal(self):
        labels = [0, 1, 2, 2, 1]
        counts = confusion_matrix(labels, labels, ["a", "b", "c"]).counts
        self.assertEqual(np.count_nonzero(counts - np.diag(np.diag(counts))), 0)

    def test_trace_matches_accuracy(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            truth = rng.integers(0, 4, 30)
            predicted = rng.integers(0, 4, 30)
            matrix = confusion_matrix(predicted, truth, ["a", "b", "c", "d"])
            self.assertAlmostEqual(matrix.accuracy(), accuracy(predicted, truth))

    def test_out_of_range_label(self):
        with self.assertRaises(TargetIndexError):
            confusion_matrix([3], [0], ["a", "b", "c"])

    def test_normalised_rows(self):
        matrix = confusion_matrix([0, 1, 1], [0, 0, 1], ["a", "b", "c"])
        np.testing.assert_allclose(matrix.normalised(), [[0.5, 0.5, 0], [0, 1, 0], [0, 0, 0]])


class TemporalIoUTests(SimpleTestCase):
    def test_examples(self):
        a = Segment(0, 100, 1, 1.0)
        self.assertEqual(temporal_iou(a, a), 1.0)
        self.assertEqual(temporal_iou(a, Segment(101, 200, 1, 1.0)), 0.0)
        self.assertEqual(temporal_iou(a, Segment(50, 150, 1, 1.0)), 51 / 151)

    def test_symmetric_and_bounded(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            a, b = (Segment(int(x), int(x + y), 1, 1.0) for x, y in rng.integers(0, 50, (2, 2)))
            self.assertEqual(temporal_iou(a, b), temporal_iou(b, a))
            self.assertTrue(0.0 <= temporal_iou(a, b) <= 1.0)


class AveragePrecisionTests(SimpleTestCase):
    truths = [Segment(0, 99, 1, 1.0), Segment(200, 299, 1, 1.0)]

    def test_worked_example(self):
        detections = [Segment(0, 59, 1, 0.9), Segment(200, 239, 1, 0.8), Segment(200, 279, 1, 0.7)]
        ap, matches = match_and_ap(detections, self.truths)
        self.assertAlmostEqual(ap, 0.5 + 0.5 * 2 / 3, delta=1e-4)
        self.assertEqual([(d, g) for d, g, _ in matches], [(0, 0), (2, 1)])

    def test_perfect_detections(self):
        ap, _ = match_and_ap([Segment(0, 99, 1, 0.3), Segment(200, 299, 1, 0.6)], self.truths)
        self.assertEqual(ap, 1.0)

    def test_degenerate_sets(self):
        self.assertEqual(match_and_ap([Segment(0, 9, 1, 0.5)], [])[0], 0.0)
        self.assertEqual(match_and_ap([], [])[0], 1.0)
        self.assertEqual(match_and_ap([], self.truths)[0], 0.0)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(500):
            detections, truths = random_instance(rng)
            self.assertAlmostEqual(match_and_ap(detections, truths)[0], brute_force_ap(detections, truths), delta=1e-9)

    def test_monotone_confidence_transform(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            detections, truths = random_instance(rng)
            squashed = [Segment(d.begin, d.end, d.label, float(np.exp(3 * d.confidence) - 7)) for d in detections]
            self.assertAlmostEqual(match_and_ap(detections, truths)[0], match_and_ap(squashed, truths)[0], delta=1e-12)


class MeanAPTests(SimpleTestCase):
    def test_two_classes(self):
        truths = {"v": [Segment(0, 99, 1, 1.0), Segment(300, 399, 2, 1.0)]}
        detections = {"v": [Segment(0, 99, 1, 0.9), Segment(500, 599, 2, 0.9), Segment(300, 399, 2, 0.5)]}
        self.assertAlmostEqual(mean_ap(detections, truths), 0.75)

    def test_single_class_equals_its_ap(self):
        rng = np.random.default_rng(4)
        detections, truths = random_instance(rng)
        truths = truths or [Segment(0, 50, 1, 1.0)]
        self.assertAlmostEqual(mean_ap({"v": detections}, {"v": truths}), match_and_ap(detections, truths)[0])

    def test_matching_stays_within_a_video(self):
        truths = {"a": [Segment(0, 99, 1, 1.0)], "b": []}
        self.assertEqual(mean_ap({"b": [Segment(0, 99, 1, 0.9)]}, truths), 0.0)

    def test_classes_without_ground_truth_are_skipped(self):
        truths = {"v": [Segment(0, 99, 1, 1.0)]}
        detections = {"v": [Segment(0, 99, 1, 0.9), Segment(200, 299, 3, 0.95)]}
        self.assertEqual(mean_ap(detections, truths), 1.0)

    def test_no_ground_truth(self):
        with self.assertRaises(ConfigurationError):
            mean_ap({"v": [Segment(0, 9, 1, 0.5)]}, {"v": []})


class GlobalIoUTests(SimpleTestCase):
    def test_examples(self):
        truth = {"v": [Segment(50, 149, 1, 1.0)]}
        self.assertEqual(global_frame_iou(truth, truth), 1.0)
        self.assertEqual(global_frame_iou({}, truth), 0.0)
        self.assertAlmostEqual(global_frame_iou({"v": [Segment(0, 99, 1, 0.5)]}, truth), 50 / 150)

    def test_empty_video_scores_one(self):
        truth = {"v": [Segment(0, 99, 1, 1.0)], "w": []}
        self.assertEqual(global_frame_iou({"v": [Segment(0, 99, 1, 0.9)]}, truth), 1.0)


class ReportFileTests(SimpleTestCase):
    def test_classification_report_files(self):
        report = classification_report([0, 1, 2, 2], [0, 1, 1, 2], ["negative", "move_a", "move_b"])
        with tempfile.TemporaryDirectory() as tmp:
            write_report(report, tmp)
            metrics = read_metrics_csv(Path(tmp) / "metrics.csv")
            names, rows = read_confusion_csv(Path(tmp) / "confusion.csv")
            text = (Path(tmp) / "report.txt").read_text()
            workbook = load_workbook(Path(tmp) / "report.xlsx")
        self.assertAlmostEqual(metrics["accuracy"], 0.75, delta=1e-9)
        self.assertEqual(names, ("negative", "move_a", "move_b"))
        self.assertEqual([sum(row) for row in rows], [1, 2, 1])
        self.assertIn("Confusion matrix", text)
        self.assertEqual(workbook.sheetnames, ["Metrics", "Confusion"])

    def test_detection_report_round_trip(self):
        truths = {"v": [Segment(0, 99, 1, 1.0), Segment(200, 299, 1, 1.0)]}
        detections = {"v": [Segment(0, 59, 1, 0.9), Segment(200, 239, 1, 0.8), Segment(200, 279, 1, 0.7)]}
        report = detection_report(detections, truths, ["negative", "stroke"])
        with tempfile.TemporaryDirectory() as tmp:
            write_report(report, tmp, excel=False)
            metrics = read_metrics_csv(Path(tmp) / "metrics.csv")
            text = (Path(tmp) / "report.txt").read_text()
        self.assertAlmostEqual(metrics["mean_ap"], report.mean_ap, delta=1e-9)
        self.assertEqual((metrics["true_positives"], metrics["false_positives"]), (2, 1))
        self.assertIn("ap_stroke", metrics)
        self.assertIn("internal conventions", text)

    def test_empty_detections_still_write_headers(self):
        report = detection_report({}, {"v": [Segment(0, 99, 1, 1.0)]}, ["negative", "stroke"])
        with tempfile.TemporaryDirectory() as tmp:
            write_report(report, tmp, excel=False)
            lines = (Path(tmp) / "metrics.csv").read_text().splitlines()
        self.assertEqual(lines[0], "metric,value")
        self.assertIn("mean_ap,0", lines)
