import math
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from apps.core.exceptions import ConfigurationError, DimensionError
from apps.dataset.annotations import parse_annotation_xml
from apps.dataset.rawvideo import RawVideo
from apps.dataset.transforms import ExtractionError
from apps.detection.outputs import read_detections_csv, write_detection_xml, write_detections_csv
from apps.detection.services import (
    DetectionConfig,
    ScoreTimeline,
    Segment,
    classify_trimmed,
    detect_video,
    frame_decision,
    fuse_frame_scores,
    fuse_windows,
    gaussian_weights,
    proposal_candidates,
    score_windows,
    segments_from_frames,
    slide_window_scores,
    widen_region,
)
from apps.numeric.tensor import Tensor


class BrightnessModel:
    """Scores a window as a stroke when its mean brightness exceeds one half."""

    def __init__(self, clip_length, num_classes=2, gain=20.0, always_negative=False):
        self.clip_length = clip_length
        self.num_classes = num_classes
        self.gain = gain
        self.always_negative = always_negative

    def forward(self, batch):
        brightness = np.asarray(batch, dtype=np.float64).mean(axis=(1, 2, 3, 4))
        logits = np.zeros((len(brightness), self.num_classes))
        if self.always_negative:
            logits[:, 0] = 10.0
        else:
            logits[:, 0] = self.gain * (0.5 - brightness)
            logits[:, 1] = self.gain * (brightness - 0.5)
        return Tensor(logits, dtype=np.float64)


def flat_video(frames, bright=()):
    data = np.zeros((frames, 2, 2, 3), dtype=np.uint8)
    for begin, end in bright:
        data[begin:end + 1] = 255
    return RawVideo.from_frames(data)


def random_timeline(rng, frame_count=60, length=8, classes=4):
    scores = rng.dirichlet(np.ones(classes), size=frame_count - length + 1)
    return ScoreTimeline(np.arange(frame_count - length + 1), scores, length, frame_count)


class SlidingWindowTests(SimpleTestCase):
    def test_window_counts(self):
        model = BrightnessModel(96)
        self.assertEqual(len(slide_window_scores(model, flat_video(96)).window_starts), 1)
        timeline = slide_window_scores(model, flat_video(100))
        self.assertEqual(timeline.window_starts.tolist(), [0, 1, 2, 3, 4])
        np.testing.assert_allclose(timeline.scores.sum(axis=1), 1.0, atol=1e-5)

    def test_short_video(self):
        with self.assertRaises(ExtractionError):
            slide_window_scores(BrightnessModel(96), flat_video(95))

    def test_thread_pool_matches_single_worker(self):
        model = BrightnessModel(8)
        video = flat_video(64, bright=[(20, 40)])
        starts = np.arange(57)
        serial = score_windows(model, video, starts, batch_size=5, workers=1)
        pooled = score_windows(model, video, starts, batch_size=5, workers=3)
        np.testing.assert_array_equal(serial, pooled)


class FusionTests(SimpleTestCase):
    def test_constant_timeline(self):
        p = np.array([0.2, 0.5, 0.3])
        timeline = ScoreTimeline(np.arange(5), np.tile(p, (5, 1)), 4, 8)
        for method in ("mean", "gaussian"):
            np.testing.assert_allclose(fuse_frame_scores(timeline, method), np.tile(p, (8, 1)), atol=1e-12)
        np.testing.assert_array_equal(fuse_frame_scores(timeline, "vote"), np.tile([0, 1, 0], (8, 1)))

    def test_two_windows_average(self):
        timeline = ScoreTimeline(np.array([0, 1]), np.array([[1.0, 0.0], [0.0, 1.0]]), 2, 3)
        np.testing.assert_allclose(fuse_frame_scores(timeline, "mean")[1], [0.5, 0.5])

    def test_gaussian_weight_at_one_sigma(self):
        self.assertAlmostEqual(gaussian_weights(16.0, 16.0) / gaussian_weights(0.0, 16.0), math.exp(-0.5))
        self.assertAlmostEqual(float(gaussian_weights(16.0, 16.0)), 0.6065, places=4)

    def test_wide_gaussian_matches_mean(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            timeline = random_timeline(rng)
            mean = fuse_frame_scores(timeline, "mean")
            wide = fuse_frame_scores(timeline, "gaussian", sigma=1e9)
            self.assertLess(np.abs(mean - wide).max(), 1e-6)

    def test_fused_vectors_are_normalised(self):
        timeline = random_timeline(np.random.default_rng(1))
        for method in ("vote", "mean", "gaussian"):
            np.testing.assert_allclose(fuse_frame_scores(timeline, method).sum(axis=1), 1.0, atol=1e-5)

    def test_single_window_coverage_agrees(self):
        rng = np.random.default_rng(2)
        timeline = ScoreTimeline(np.array([0]), rng.dirichlet(np.ones(3), size=1), 10, 10)
        decisions = [frame_decision(fuse_frame_scores(timeline, m), "neg_vs_all")[0] for m in ("vote", "mean", "gaussian")]
        np.testing.assert_array_equal(decisions[0], decisions[1])
        np.testing.assert_array_equal(decisions[1], decisions[2])

    def test_uncovered_frames(self):
        timeline = ScoreTimeline(np.array([0]), np.array([[0.5, 0.5]]), 4, 6)
        with self.assertRaises(DimensionError):
            fuse_frame_scores(timeline, "mean")

    def test_no_window_is_not_a_frame_fusion(self):
        with self.assertRaises(ConfigurationError):
            fuse_frame_scores(random_timeline(np.random.default_rng(3)), "no_window")


class RegionDecisionTests(SimpleTestCase):
    def test_majority_vote(self):
        scores = np.array([[0.1, 0.9, 0.0], [0.2, 0.7, 0.1], [0.1, 0.1, 0.8]])
        self.assertEqual(int(fuse_windows(scores, [0, 1, 2], 1, "vote").argmax()), 1)

    def test_vote_ties_go_to_lower_index(self):
        scores = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0]])
        self.assertEqual(int(fuse_windows(scores, [0, 1], 0.5, "vote").argmax()), 1)

    def test_infinite_sigma_limit(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            scores = rng.dirichlet(np.ones(5), size=12)
            centres = np.arange(12) + 3.5
            wide = fuse_windows(scores, centres, 9.0, "gaussian", sigma=1e9)
            np.testing.assert_allclose(wide, fuse_windows(scores, centres, 9.0, "mean"), atol=1e-9)

    def test_exact_length_region_agrees_across_methods(self):
        model = BrightnessModel(16, num_classes=2)
        video = flat_video(40, bright=[(10, 30)])
        results = {method: classify_trimmed(model, video, 12, 27, method)[0] for method in
                   ("no_window", "vote", "mean", "gaussian")}
        self.assertEqual(len(set(results.values())), 1)

    def test_short_region(self):
        with self.assertRaises(ExtractionError):
            classify_trimmed(BrightnessModel(16), flat_video(40), 0, 10, "mean")

    def test_widen_region(self):
        self.assertEqual(widen_region(100, 109, 16, 400), (97, 112))
        self.assertEqual(widen_region(0, 3, 16, 400), (0, 15))
        self.assertEqual(widen_region(10, 90, 16, 400), (10, 90))


class FrameDecisionTests(SimpleTestCase):
    def test_approaches_diverge_on_definition_case(self):
        p = np.array([[0.4, 0.35, 0.25]])
        self.assertFalse(frame_decision(p, "neg_vs_all")[0][0])
        self.assertTrue(frame_decision(p, "neg_vs_sum")[0][0])
        self.assertAlmostEqual(frame_decision(p, "neg_vs_sum")[1][0], 0.6)

    def test_certain_negative(self):
        p = np.array([[1.0, 0.0, 0.0]])
        for approach in ("neg_vs_all", "neg_vs_sum"):
            self.assertFalse(frame_decision(p, approach)[0][0])

    def test_two_class_approaches_agree(self):
        p_neg = np.arange(101) / 100
        vectors = np.stack([p_neg, 1 - p_neg], axis=1)
        np.testing.assert_array_equal(frame_decision(vectors, "neg_vs_all")[0], frame_decision(vectors, "neg_vs_sum")[0])

    def test_raising_negative_probability_never_adds_strokes(self):
        rng = np.random.default_rng(5)
        vectors = rng.dirichlet(np.ones(4), size=200)
        boosted = vectors.copy()
        boosted[:, 0] += 0.3
        boosted /= boosted.sum(axis=1, keepdims=True)
        for approach in ("neg_vs_all", "neg_vs_sum"):
            before, _ = frame_decision(vectors, approach)
            after, _ = frame_decision(boosted, approach)
            self.assertFalse(np.any(after & ~before))

    def test_negative_index_out_of_range(self):
        with self.assertRaises(ConfigurationError):
            frame_decision(np.array([[0.5, 0.5]]), "neg_vs_all", negative_index=2)


class SegmentationTests(SimpleTestCase):
    def segments(self, mask, vectors=None):
        mask = np.asarray(mask, dtype=bool)
        vectors = np.tile([0.2, 0.8], (len(mask), 1)) if vectors is None else vectors
        return segments_from_frames(mask, 1 - vectors[:, 0], vectors, min_length=30)

    def test_empty_mask(self):
        self.assertEqual(self.segments(np.zeros(100)), [])

    def test_minimum_length(self):
        self.assertEqual(self.segments([0] + [1] * 29 + [0]), [])
        kept = self.segments([0] + [1] * 30 + [0])
        self.assertEqual([(s.begin, s.end, s.label) for s in kept], [(1, 30, 1)])
        self.assertAlmostEqual(kept[0].confidence, 0.8)

    def test_split_runs(self):
        found = self.segments([1] * 40 + [0] + [1] * 40)
        self.assertEqual([(s.begin, s.end) for s in found], [(0, 39), (41, 80)])

    def test_multi_class_label_from_positive_mean(self):
        vectors = np.tile([0.1, 0.3, 0.6], (35, 1))
        found = segments_from_frames(np.ones(35, dtype=bool), 1 - vectors[:, 0], vectors, min_length=30)
        self.assertEqual(found[0].label, 2)

    def test_filter_is_idempotent(self):
        rng = np.random.default_rng(6)
        mask = rng.random(500) < 0.9
        first = self.segments(mask)
        refiltered = np.zeros(500, dtype=bool)
        for segment in first:
            refiltered[segment.begin:segment.end + 1] = True
        self.assertEqual([(s.begin, s.end) for s in self.segments(refiltered)], [(s.begin, s.end) for s in first])


class ProposalTests(SimpleTestCase):
    def test_counts(self):
        self.assertEqual(len(proposal_candidates(450)), 3)
        self.assertEqual(proposal_candidates(500)[-1], (300, 449))
        self.assertEqual(proposal_candidates(100), [])


class DetectVideoTests(SimpleTestCase):
    def test_all_negative_model(self):
        model = BrightnessModel(16, always_negative=True)
        self.assertEqual(detect_video(model, flat_video(200, bright=[(50, 150)]), DetectionConfig()), [])

    def test_embedded_stroke_is_found(self):
        video = flat_video(400, bright=[(140, 259)])
        found = detect_video(BrightnessModel(16), video, DetectionConfig(sigma=3.0))
        self.assertEqual(len(found), 1)
        segment = found[0]
        overlap = min(segment.end, 259) - max(segment.begin, 140) + 1
        union = max(segment.end, 259) - min(segment.begin, 140) + 1
        self.assertGreaterEqual(overlap / union, 0.5)
        self.assertGreaterEqual(segment.length, 30)

    def test_proposal_mode(self):
        video = flat_video(450, bright=[(150, 299)])
        for fusion in ("no_window", "vote", "mean", "gaussian"):
            config = DetectionConfig(mode="proposals", fusion=fusion, proposal_length=150)
            found = detect_video(BrightnessModel(16), video, config)
            self.assertEqual([(s.begin, s.end, s.label) for s in found], [(150, 299, 1)])

    def test_sliding_no_window_rejected(self):
        config = DetectionConfig(mode="sliding", fusion="no_window")
        with self.assertRaises(ConfigurationError):
            detect_video(BrightnessModel(16), flat_video(100), config)


class OutputFileTests(SimpleTestCase):
    def test_csv_and_xml(self):
        detections = {"v1": [Segment(10, 50, 1, 0.75)], "v2": []}
        names = ("negative", "stroke")
        with tempfile.TemporaryDirectory() as tmp:
            path = write_detections_csv(Path(tmp) / "detections.csv", detections, names)
            self.assertEqual(path.read_text().splitlines(), ["video_id,begin,end,label,score", "v1,10,50,stroke,0.750000"])
            self.assertEqual(read_detections_csv(path, names), {"v1": [Segment(10, 50, 1, 0.75)]})
            xml_path = write_detection_xml(tmp, "v1", detections["v1"], names)
            video_id, annotations = parse_annotation_xml(xml_path.read_text())
        self.assertEqual(video_id, "v1")
        self.assertEqual((annotations[0].label, annotations[0].score), ("stroke", 0.75))
