import tempfile
from contextlib import redirect_stderr
from io import StringIO
from pathlib import Path

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from apps.detection.outputs import read_detections_csv, read_predictions_csv
from apps.evaluation.reports import read_metrics_csv
from apps.experiments.cli import run_command
from apps.experiments.config import (
    ExperimentConfig,
    ExperimentConfigError,
    apply_overrides,
    dump_config,
    parse_config,
    parse_config_text,
)

SMALL_EXPERIMENT = """
# tiny synthetic experiment
[experiment]
seed = 3
label_mode = detection

[data]
resize_width = 32
clip_length = 16
jitter = 2
negatives_per_video = 3

[model]
channel_plan = 4, 8
hidden_fc = 16

[train]
epochs = 20
lr = 0.001
momentum = 0.9
weight_decay = 0
batch_size = 8

[detection]
sigma = 4.0

[synth]
num_classes = 2
train_videos = 3
validation_videos = 1
test_videos = 2
width = 32
height = 32
noise = 8
"""


def strokebench(*args):
    out = StringIO()
    call_command("strokebench", *[str(a) for a in args], stdout=out)
    return out.getvalue()


def snapshot(directory):
    return {
        path.relative_to(directory).as_posix(): path.read_bytes()
        for path in sorted(Path(directory).rglob("*")) if path.is_file()
    }


class ConfigTests(SimpleTestCase):
    def test_empty_file_gives_defaults(self):
        config = parse_config_text("")
        self.assertEqual(config, ExperimentConfig())
        self.assertEqual(config.model, "v2")
        train = config.train
        self.assertEqual((train.epochs, train.lr, train.momentum, train.weight_decay), (2000, 1e-4, 0.5, 0.005))

    def test_negative_epochs(self):
        with self.assertRaises(ExperimentConfigError) as ctx:
            parse_config_text("[train]\nepochs = -1\n")
        self.assertEqual((ctx.exception.key, ctx.exception.line), ("train.epochs", 2))

    def test_unknown_key_and_section(self):
        with self.assertRaises(ExperimentConfigError) as ctx:
            parse_config_text("[train]\n# comment\nepochs = 3\nepoch = 4\n")
        self.assertEqual((ctx.exception.key, ctx.exception.line), ("train.epoch", 4))
        with self.assertRaises(ExperimentConfigError):
            parse_config_text("[training]\nepochs = 3\n")

    def test_type_error(self):
        with self.assertRaises(ExperimentConfigError) as ctx:
            parse_config_text("[experiment]\nseed = 1\n[train]\nlr = fast\n")
        self.assertEqual((ctx.exception.key, ctx.exception.line), ("train.lr", 4))

    def test_bad_choice(self):
        with self.assertRaises(ExperimentConfigError) as ctx:
            parse_config_text("[experiment]\nmodel = v3\n")
        self.assertEqual(ctx.exception.key, "experiment.model")

    def test_dump_round_trip(self):
        config = parse_config_text(SMALL_EXPERIMENT)
        self.assertEqual(config.channel_plan, (4, 8))
        self.assertEqual(config.train.seed, 3)
        self.assertEqual(parse_config_text(dump_config(config)), config)
        self.assertEqual(parse_config_text(dump_config(ExperimentConfig())), ExperimentConfig())

    def test_no_window_fusion_parses_in_either_mode(self):
        config = parse_config_text("[detection]\nfusion = no_window\nmode = proposals\n")
        self.assertEqual(config.detection.fusion, "no_window")
        config = apply_overrides(ExperimentConfig(), {("detection", "fusion"): "no_window"})
        self.assertEqual((config.detection.mode, config.detection.fusion), ("sliding", "no_window"))

    def test_invalid_detection_value_names_key_and_line(self):
        with self.assertRaises(ExperimentConfigError) as ctx:
            parse_config_text("[detection]\nmode = sliding\nsigma = 0\n")
        self.assertEqual((ctx.exception.key, ctx.exception.line), ("detection.sigma", 3))

    def test_overrides_win_over_file(self):
        config = apply_overrides(parse_config_text(SMALL_EXPERIMENT), {("train", "epochs"): "7"})
        self.assertEqual(config.train.epochs, 7)
        self.assertEqual(config.train.lr, 0.001)

    def test_missing_file(self):
        with self.assertRaises(ExperimentConfigError):
            parse_config("/nonexistent/experiment.ini")


class CommandTests(SimpleTestCase):
    def test_shapes(self):
        self.assertIn("feature map (256, 3, 2, 2)", strokebench("shapes", "--model", "v2"))
        self.assertIn("feature map (256, 6, 2, 5)", strokebench("shapes", "--model", "v1"))

    def test_unknown_subcommand_is_a_usage_error(self):
        with redirect_stderr(StringIO()) as err:
            self.assertEqual(run_command(["bogus"]), 2)
        self.assertIn("usage", err.getvalue())

    def test_domain_error_exit_code(self):
        with tempfile.TemporaryDirectory() as tmp, redirect_stderr(StringIO()) as err:
            self.assertEqual(run_command(["train", "--out", tmp]), 1)
        self.assertIn("dataset", err.getvalue())

    def test_sliding_detection_with_no_window_fusion(self):
        with redirect_stderr(StringIO()) as err:
            self.assertEqual(run_command(["detect", "--checkpoint", "best.ckpt", "--fusion", "no_window"]), 1)
        self.assertIn("detection.fusion", err.getvalue())

    def test_missing_input_file_fails_before_running(self):
        with tempfile.TemporaryDirectory() as tmp, redirect_stderr(StringIO()) as err:
            missing = Path(tmp) / "missing.ckpt"
            self.assertEqual(run_command(["classify", "--data", tmp, "--checkpoint", str(missing), "--out", tmp]), 1)
            self.assertFalse((Path(tmp) / "run_manifest.json").exists())
        self.assertIn("--checkpoint", err.getvalue())

    def test_unwritable_output_is_an_io_error(self):
        with tempfile.TemporaryDirectory() as tmp, redirect_stderr(StringIO()) as err:
            blocker = Path(tmp) / "file"
            blocker.write_text("not a directory", encoding="utf-8")
            self.assertEqual(run_command(["synth", "--out", str(blocker / "data")]), 1)
        self.assertIn("I/O error", err.getvalue())

    def test_bad_override(self):
        with self.assertRaises(CommandError):
            strokebench("shapes", "--set", "train.epochs=-1")

    def test_synth_is_reproducible(self):
        with tempfile.TemporaryDirectory() as tmp:
            data = Path(tmp) / "d"
            strokebench("synth", "--seed", 7, "--out", data, "--set", "synth.width=16", "--set", "synth.height=16")
            first = snapshot(data)
            strokebench("synth", "--seed", 7, "--out", data, "--set", "synth.width=16", "--set", "synth.height=16")
            second = snapshot(data)
        self.assertIn("splits.tsv", first)
        self.assertIn("run_manifest.json", first)
        self.assertEqual(first, second)


class PipelineTests(SimpleTestCase):
    """Synthesise, train, detect and evaluate end to end at toy scale."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.config = self.root / "experiment.ini"
        self.config.write_text(SMALL_EXPERIMENT, encoding="utf-8")
        self.data = self.root / "data"
        strokebench("synth", "--config", self.config, "--out", self.data)

    def tearDown(self):
        self.tmp.cleanup()

    def detection_run(self, name):
        run = self.root / name
        common = ["--config", self.config, "--data", self.data]
        strokebench("train", *common, "--out", run / "train")
        strokebench("detect", *common, "--checkpoint", run / "train" / "best.ckpt", "--out", run / "detect")
        strokebench("eval-detect", *common, "--detections", run / "detect" / "detections.csv", "--out", run / "eval")
        return run

    def test_detection_metrics_are_byte_identical(self):
        first = self.detection_run("a")
        second = self.detection_run("b")
        self.assertEqual((first / "eval" / "metrics.csv").read_bytes(), (second / "eval" / "metrics.csv").read_bytes())
        metrics = read_metrics_csv(first / "eval" / "metrics.csv")
        self.assertTrue(0.0 <= metrics["mean_ap"] <= 1.0)
        self.assertTrue(0.0 <= metrics["global_iou"] <= 1.0)
        for name in ("best.ckpt", "labels.txt", "stats.csv", "run_manifest.json"):
            self.assertTrue((first / "train" / name).exists(), name)
        self.assertTrue((first / "eval" / "report.xlsx").exists())

    def test_classification_pipeline(self):
        run = self.root / "cls"
        common = ["--config", self.config, "--data", self.data]
        strokebench("train", *common, "--label-mode", "classification", "--epochs", 3, "--out", run / "train")
        strokebench("classify", *common, "--checkpoint", run / "train" / "best.ckpt", "--fusion", "vote",
                    "--out", run / "classify")
        rows = read_predictions_csv(run / "classify" / "predictions.csv")
        strokebench("classify", *common, "--checkpoint", run / "train" / "best.ckpt", "--fusion", "no_window",
                    "--out", run / "classify-single")
        self.assertEqual(len(read_predictions_csv(run / "classify-single" / "predictions.csv")), len(rows))
        self.assertEqual(len(rows), sum(1 for _ in (self.data / "annotations").glob("test_*.xml")) * 3)
        strokebench("eval-classify", "--predictions", run / "classify" / "predictions.csv", "--out", run / "eval")
        names = (run / "eval" / "confusion.csv").read_text().splitlines()[0].split(",")
        labels = (run / "train" / "labels.txt").read_text().split()
        self.assertEqual(names, labels)
        self.assertEqual(labels[0], "negative")
        self.assertTrue(0.0 <= read_metrics_csv(run / "eval" / "metrics.csv")["accuracy"] <= 1.0)


class DetectionQualityTests(SimpleTestCase):
    """A detector trained on synthetic strokes recovers most stroke frames."""

    def test_trained_detector(self):
        with tempfile.TemporaryDirectory() as tmp:
            root = Path(tmp)
            config = root / "experiment.ini"
            config.write_text(SMALL_EXPERIMENT, encoding="utf-8")
            overrides = ["--set", "synth.train_videos=8", "--set", "synth.test_videos=4",
                         "--set", "model.channel_plan=8,16", "--set", "model.hidden_fc=32",
                         "--set", "data.negatives_per_video=4"]
            common = ["--config", config, "--data", root / "data", *overrides]
            strokebench("synth", "--config", config, "--out", root / "data", *overrides)
            strokebench("train", *common, "--epochs", 60, "--out", root / "train")
            strokebench("detect", *common, "--checkpoint", root / "train" / "best.ckpt", "--fusion", "gaussian",
                        "--out", root / "detect")
            strokebench("eval-detect", *common, "--detections", root / "detect" / "detections.csv",
                        "--out", root / "eval")
            metrics = read_metrics_csv(root / "eval" / "metrics.csv")
            detections = read_detections_csv(root / "detect" / "detections.csv", ("negative", "stroke"))

        self.assertGreaterEqual(metrics["global_iou"], 0.5)
        for segments in detections.values():
            self.assertTrue(all(segment.length >= 30 for segment in segments))
