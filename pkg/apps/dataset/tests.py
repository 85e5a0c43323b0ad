import filecmp
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from apps.core.exceptions import ConfigurationError
from apps.dataset.annotations import (
    AnnotationParseError,
    AnnotationSchema,
    AnnotationSet,
    StrokeAnnotation,
    parse_annotation_xml,
    write_annotation_file,
    write_annotation_xml,
)
from apps.dataset.clips import ClipDataset, load_split, read_annotation_set, read_split_manifest
from apps.dataset.factories import annotation_list
from apps.dataset.labels import LabelMap
from apps.dataset.rawvideo import (
    RawVideo,
    VideoFormatError,
    encode_raw_video,
    read_raw_video,
    resize_video,
    write_raw_video,
)
from apps.dataset.synth import SynthConfig, synth_dataset
from apps.dataset.transforms import (
    ExtractionError,
    apply_spatial_transform,
    augment_clip,
    extract_clip,
    mine_negative_segments,
)


def noise_video(frames=120, height=6, width=8, seed=0):
    rng = np.random.default_rng(seed)
    return RawVideo.from_frames(rng.integers(0, 256, (frames, height, width, 3), dtype=np.uint8))


class AnnotationXmlTests(SimpleTestCase):
    def test_empty_video(self):
        self.assertEqual(parse_annotation_xml('<video name="v1"></video>'), ("v1", []))

    def test_single_action(self):
        video_id, annotations = parse_annotation_xml(
            '<video name="v1"><action begin="120" end="240" move="serve"/></video>'
        )
        self.assertEqual(video_id, "v1")
        self.assertEqual(annotations, [StrokeAnnotation(120, 240, "serve")])

    def test_missing_move_defaults_to_stroke(self):
        _, annotations = parse_annotation_xml('<video name="v"><action begin="1" end="2"/></video>')
        self.assertEqual(annotations[0].label, "stroke")

    def test_actions_are_sorted(self):
        _, annotations = parse_annotation_xml(
            '<video name="v"><action begin="50" end="60"/><action begin="1" end="2"/></video>'
        )
        self.assertEqual([a.begin for a in annotations], [1, 50])

    def test_overlap_reports_line(self):
        document = '<video name="v">\n<action begin="10" end="20"/>\n<action begin="15" end="30"/>\n</video>'
        with self.assertRaises(AnnotationParseError) as ctx:
            parse_annotation_xml(document)
        self.assertEqual(ctx.exception.line, 3)

    def test_begin_after_end(self):
        with self.assertRaises(AnnotationParseError):
            parse_annotation_xml('<video name="v"><action begin="9" end="3"/></video>')

    def test_missing_attribute(self):
        with self.assertRaises(AnnotationParseError):
            parse_annotation_xml('<video name="v"><action begin="9"/></video>')

    def test_malformed_xml(self):
        with self.assertRaises(AnnotationParseError) as ctx:
            parse_annotation_xml('<video name="v">\n<action begin="1" end="2">\n</video>')
        self.assertEqual(ctx.exception.line, 3)

    def test_frames_past_video_end(self):
        with self.assertRaises(AnnotationParseError):
            parse_annotation_xml('<video name="v"><action begin="1" end="100"/></video>', frame_count=100)

    def test_empty_list_writes_childless_root(self):
        document = write_annotation_xml("v1", [])
        self.assertEqual(document.strip(), '<video name="v1" />')

    def test_write_then_parse_is_identity(self):
        for size in (1, 3, 8):
            annotations = annotation_list(size)
            self.assertEqual(parse_annotation_xml(write_annotation_xml("clip", annotations)), ("clip", annotations))

    def test_scores_have_six_decimals(self):
        document = write_annotation_xml("v", [StrokeAnnotation(0, 40, "stroke", score=0.5)])
        self.assertIn('score="0.500000"', document)

    def test_custom_schema(self):
        schema = AnnotationSchema(root="clip", name="id", element="stroke", label="class")
        document = write_annotation_xml("x", [StrokeAnnotation(3, 9, "push")], schema)
        self.assertEqual(parse_annotation_xml(document, schema), ("x", [StrokeAnnotation(3, 9, "push")]))


class AnnotationSetTests(SimpleTestCase):
    def test_videos_are_kept_sorted(self):
        annotations = AnnotationSet()
        annotations.add("b", [StrokeAnnotation(50, 60, "push"), StrokeAnnotation(1, 9, "serve")])
        annotations.add("a", [])
        self.assertEqual([a.begin for a in annotations["b"]], [1, 50])
        self.assertEqual(len(annotations), 2)
        self.assertEqual(annotations.labels(), ["push", "serve"])

    def test_overlap_rejected(self):
        with self.assertRaises(AnnotationParseError):
            AnnotationSet().add("v", [StrokeAnnotation(0, 20), StrokeAnnotation(20, 30)])

    def test_frames_past_video_end(self):
        with self.assertRaises(AnnotationParseError):
            AnnotationSet().add("v", [StrokeAnnotation(0, 100)], frame_count=100)

    def test_duplicate_video(self):
        annotations = AnnotationSet()
        annotations.add("v", [StrokeAnnotation(0, 5)])
        with self.assertRaises(AnnotationParseError):
            annotations.add("v", [])

    def test_manifest_listing_a_video_twice(self):
        with tempfile.TemporaryDirectory() as tmp:
            root = Path(tmp)
            write_annotation_file(root / "annotations" / "v.xml", "v", [StrokeAnnotation(3, 9, "serve")])
            entry = "videos/v.rvid\tannotations/v.xml\ttest\n"
            (root / "splits.tsv").write_text(entry, encoding="utf-8")
            self.assertEqual(read_annotation_set(root, "test")["v"], [StrokeAnnotation(3, 9, "serve")])
            self.assertEqual(len(read_annotation_set(root, "train")), 0)
            (root / "splits.tsv").write_text(entry * 2, encoding="utf-8")
            with self.assertRaises(AnnotationParseError):
                read_annotation_set(root, "test")


class RawVideoTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / "clip.rvid"

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip(self):
        video = noise_video()
        write_raw_video(video, self.path)
        again = read_raw_video(self.path)
        self.assertEqual(again.frames.tobytes(), video.frames.tobytes())
        self.assertEqual((again.width, again.height, again.frame_count), (8, 6, 120))

    def test_zero_frame_video(self):
        video = RawVideo.from_frames(np.zeros((0, 4, 4, 3), dtype=np.uint8))
        write_raw_video(video, self.path)
        self.assertEqual(read_raw_video(self.path).frame_count, 0)

    def test_frame_count_inconsistent_with_payload(self):
        self.path.write_bytes(encode_raw_video(noise_video(frames=3))[:-1])
        with self.assertRaises(VideoFormatError):
            read_raw_video(self.path)

    def test_bad_magic(self):
        self.path.write_bytes(b"MPEG" + encode_raw_video(noise_video(frames=1))[4:])
        with self.assertRaises(VideoFormatError):
            read_raw_video(self.path)


class ResizeTests(SimpleTestCase):
    def test_full_hd_to_320(self):
        video = RawVideo.from_frames(np.zeros((1, 1080, 1920, 3), dtype=np.uint8))
        resized = resize_video(video, 320)
        self.assertEqual((resized.width, resized.height), (320, 180))

    def test_same_width_is_unchanged(self):
        video = noise_video(frames=2, height=10, width=320)
        self.assertIs(resize_video(video, 320), video)

    def test_constant_colour_survives(self):
        frames = np.empty((2, 40, 64, 3), dtype=np.uint8)
        frames[...] = (12, 200, 77)
        resized = resize_video(RawVideo.from_frames(frames), 32)
        self.assertTrue(np.all(resized.frames == np.array((12, 200, 77), dtype=np.uint8)))

    def test_upscaling_rejected(self):
        with self.assertRaises(ConfigurationError):
            resize_video(noise_video(width=8), 16)


class ClipTests(SimpleTestCase):
    def test_centred_placement(self):
        video = noise_video(frames=400, height=2, width=2)
        clip = extract_clip(video, StrokeAnnotation(100, 195))
        self.assertEqual(clip.source[1], 100)
        self.assertEqual(clip.tensor.shape, (3, 96, 2, 2))

    def test_jitter_is_clamped(self):
        video = noise_video(frames=120, height=2, width=2)
        self.assertEqual(extract_clip(video, StrokeAnnotation(50, 60), jitter=-500).source[1], 0)
        self.assertEqual(extract_clip(video, StrokeAnnotation(50, 60), jitter=500).source[1], 24)

    def test_values_scaled_to_unit_range(self):
        clip = extract_clip(noise_video(frames=96), StrokeAnnotation(0, 95))
        self.assertEqual(clip.tensor.dtype, np.float32)
        self.assertGreaterEqual(clip.tensor.min(), 0.0)
        self.assertLessEqual(clip.tensor.max(), 1.0)
        self.assertEqual(clip.length, 96)

    def test_short_video_rejected(self):
        with self.assertRaises(ExtractionError):
            extract_clip(noise_video(frames=95), StrokeAnnotation(0, 10))

    def test_configurable_clip_length(self):
        clip = extract_clip(noise_video(frames=50), StrokeAnnotation(20, 29), clip_length=16)
        self.assertEqual(clip.source[1], 24 - 7)
        self.assertEqual(clip.length, 16)


class AugmentationTests(SimpleTestCase):
    def setUp(self):
        self.clip = extract_clip(noise_video(frames=16, height=9, width=11), StrokeAnnotation(0, 15), clip_length=16)

    def test_flip_mirrors_columns(self):
        flipped = apply_spatial_transform(self.clip.tensor, flip=True, angle=0.0)
        np.testing.assert_array_equal(flipped, self.clip.tensor[..., ::-1])

    def test_identity_transform(self):
        np.testing.assert_array_equal(apply_spatial_transform(self.clip.tensor, False, 0.0), self.clip.tensor)

    def test_equal_seeds_give_equal_outputs(self):
        first = augment_clip(self.clip, 42)
        second = augment_clip(self.clip, 42)
        np.testing.assert_array_equal(first.tensor, second.tensor)

    def test_shape_and_label_preserved(self):
        for seed in range(5):
            out = augment_clip(self.clip, seed)
            self.assertEqual(out.tensor.shape, self.clip.tensor.shape)
            self.assertEqual(out.label, self.clip.label)
            self.assertTrue(0.0 <= out.tensor.min() and out.tensor.max() <= 1.0)


class NegativeMiningTests(SimpleTestCase):
    def test_fully_annotated_video_yields_nothing(self):
        self.assertEqual(mine_negative_segments(300, [StrokeAnnotation(0, 299)], 3), [])

    def test_negatives_avoid_annotations(self):
        annotation = StrokeAnnotation(200, 300)
        mined = mine_negative_segments(1000, [annotation], 5, seed=3)
        self.assertEqual(len(mined), 5)
        for negative in mined:
            self.assertFalse(negative.overlaps(annotation))
            self.assertEqual(negative.length, 96)
            self.assertEqual(negative.label, "negative")
        for first, second in zip(mined, mined[1:]):
            self.assertFalse(first.overlaps(second))

    def test_fixed_seed_is_reproducible(self):
        annotations = annotation_list(3)
        self.assertEqual(
            mine_negative_segments(800, annotations, 4, seed=9),
            mine_negative_segments(800, annotations, 4, seed=9),
        )

    def test_returns_fewer_when_gaps_run_out(self):
        mined = mine_negative_segments(200, [], 5, min_gap=96)
        self.assertLessEqual(len(mined), 2)


class LabelMapTests(SimpleTestCase):
    def test_classification_puts_negative_first(self):
        labels = LabelMap.classification(["serve", "push", "serve"])
        self.assertEqual(labels.names, ("negative", "push", "serve"))
        self.assertEqual(labels.index("serve"), 2)

    def test_detection_maps_every_move_to_stroke(self):
        labels = LabelMap.detection()
        self.assertEqual(labels.index("backhand"), 1)
        self.assertEqual(labels.index("negative"), 0)

    def test_unknown_label(self):
        with self.assertRaises(ConfigurationError):
            LabelMap.classification(["serve"]).index("lob")


class SynthDatasetTests(SimpleTestCase):
    config = SynthConfig(num_classes=5, train_videos=2, validation_videos=1, test_videos=1,
                         width=16, height=12, strokes_per_video=3, seed=7)

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_equal_seeds_give_identical_files(self):
        synth_dataset(self.config, self.root / "a")
        synth_dataset(self.config, self.root / "b")
        comparison = filecmp.dircmp(self.root / "a", self.root / "b")
        self.assertEqual(comparison.diff_files, [])
        for sub in ("videos", "annotations"):
            names = sorted(p.name for p in (self.root / "a" / sub).iterdir())
            _, mismatch, errors = filecmp.cmpfiles(self.root / "a" / sub, self.root / "b" / sub, names, shallow=False)
            self.assertEqual((mismatch, errors), ([], []))

    def test_annotations_valid_and_gapped(self):
        manifest = synth_dataset(self.config, self.root)
        entries = read_split_manifest(manifest)
        self.assertEqual([e.split for e in entries], ["train", "train", "validation", "test"])
        for split in ("train", "validation", "test"):
            for loaded in load_split(manifest, split, resize_width=16):
                self.assertEqual(len(loaded.annotations), 3)
                for annotation in loaded.annotations:
                    self.assertTrue(0 <= annotation.begin <= annotation.end < loaded.video.frame_count)
                    self.assertTrue(60 <= annotation.length <= 180)
                for first, second in zip(loaded.annotations, loaded.annotations[1:]):
                    self.assertGreaterEqual(second.begin - first.end - 1, 30)

    def test_clip_dataset_serves_fixed_length_clips(self):
        manifest = synth_dataset(self.config, self.root)
        videos = load_split(manifest, "train", resize_width=16)
        labels = LabelMap.classification(self.config.class_names())
        dataset = ClipDataset.from_videos(videos, labels, clip_length=16, jitter=4, negatives_per_video=2, seed=1)
        self.assertEqual(len(dataset), 2 * 3 + 2 * 2)
        batch, targets = dataset.batch(range(len(dataset)), rng=np.random.default_rng(0))
        self.assertEqual(batch.shape, (10, 3, 16, 12, 16))
        self.assertEqual(targets.count(0), 4)
