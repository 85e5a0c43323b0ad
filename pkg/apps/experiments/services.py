"""
Experiment pipelines behind the strokebench subcommands.

Each pipeline reads its inputs, writes its artifacts plus a
run_manifest.json into the output directory and returns the paths it
produced.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from apps.core.exceptions import ConfigurationError
from apps.core.utils import get_setting, package_versions
from apps.dataset.clips import ClipDataset, load_split, read_annotation_set, read_split_manifest
from apps.dataset.labels import LabelMap
from apps.dataset.synth import synth_dataset
from apps.detection.outputs import (
    read_detections_csv,
    read_predictions_csv,
    write_detection_xml,
    write_detections_csv,
    write_predictions_csv,
)
from apps.detection.services import (
    Segment,
    check_detection_fusion,
    classify_trimmed,
    detect_video,
    widen_region,
)
from apps.evaluation.metrics import classification_report, detection_report
from apps.evaluation.reports import write_report
from apps.experiments.config import ExperimentConfigError, config_snapshot
from apps.training.services import train
from apps.zoo.checkpoint import load_checkpoint, save_checkpoint
from apps.zoo.networks import BUILDERS, SPEC_BUILDERS, feature_shape, infer_shapes

logger = logging.getLogger(__name__)

RUN_MANIFEST = "run_manifest.json"
LABELS_FILE = "labels.txt"
CHECKPOINT_FILE = "best.ckpt"
STATS_FILE = "stats.csv"
PREDICTIONS_FILE = "predictions.csv"
DETECTIONS_FILE = "detections.csv"
DETECTION_XML_DIR = "detections"


@dataclass
class RunResult:
    output_dir: Path
    artifacts: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)


# subcommand -> option naming the file it reads
INPUT_FILES = {
    "classify": "checkpoint",
    "detect": "checkpoint",
    "eval-classify": "predictions",
    "eval-detect": "detections",
}
DATASET_COMMANDS = ("train", "classify", "detect", "eval-detect")


def check_run_inputs(subcommand, config, inputs=None):
    """
    Reject a run before any work when its settings or inputs cannot be used.

    Args:
        inputs: {option name: path} as given on the command line

    Raises:
        ExperimentConfigError: naming the offending key or option
    """
    inputs = inputs or {}
    if subcommand == "detect":
        try:
            check_detection_fusion(config.detection)
        except ConfigurationError as exc:
            raise ExperimentConfigError(str(exc), key="detection.fusion") from exc
    if subcommand in DATASET_COMMANDS:
        config.require_dataset()
    option = INPUT_FILES.get(subcommand)
    if option is not None and not Path(inputs.get(option) or "").is_file():
        raise ExperimentConfigError(f"{inputs.get(option)} is not a file", key=f"--{option}")


def output_dir(config):
    directory = Path(config.output_dir or "runs")
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def write_run_manifest(directory, config, command, inputs=None):
    """
    Record what produced a directory: command, config snapshot, seed and versions.

    Holds no timestamps, so equal runs write equal manifests.
    """
    manifest = {
        "command": command,
        "seed": config.seed,
        "config": config_snapshot(config),
        "inputs": {name: str(path) for name, path in (inputs or {}).items()},
        "packages": package_versions(),
        "deterministic": bool(get_setting("STROKEBENCH_DETERMINISTIC", True)),
    }
    path = Path(directory) / RUN_MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_labels(directory, labels):
    path = Path(directory) / LABELS_FILE
    path.write_text(labels.to_text(), encoding="utf-8")
    return path


def read_labels(directory):
    path = Path(directory) / LABELS_FILE
    try:
        return LabelMap.from_text(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigurationError(f"Cannot read class names from {path}: {exc}") from exc


def load_trained(checkpoint_path):
    """Checkpointed model and the label map stored next to it."""
    checkpoint_path = Path(checkpoint_path)
    model = load_checkpoint(checkpoint_path)
    labels = read_labels(checkpoint_path.parent)
    if len(labels) != model.num_classes:
        raise ConfigurationError(
            f"{LABELS_FILE} lists {len(labels)} classes but the checkpoint has {model.num_classes} outputs"
        )
    return model, labels


def build_experiment_model(config, input_shape, num_classes):
    kwargs = {
        "input_shape": tuple(input_shape),
        "channel_plan": list(config.channel_plan) or None,
        "num_classes": num_classes,
        "seed": config.seed,
        "hidden_fc": config.hidden_fc,
    }
    if config.model == "v1":
        kwargs["spatial_pool_blocks"] = config.spatial_pool_blocks
    return BUILDERS[config.model](**kwargs)


def ground_truth_segments(manifest_path, split, labels):
    """Annotated strokes of one split as Segments with class indices."""
    annotations = read_annotation_set(manifest_path, split)
    return {
        video_id: [Segment(a.begin, a.end, labels.index(a.label), 1.0) for a in items]
        for video_id, items in annotations
    }


# =============================================================================
# PIPELINES
# =============================================================================


def run_synth(config):
    """Write a synthetic dataset into the configured dataset directory."""
    if config.dataset_dir is None:
        raise ConfigurationError("synth needs a dataset directory")
    directory = Path(config.dataset_dir)
    manifest = synth_dataset(config.synth, directory)
    written = write_run_manifest(directory, config, "synth")
    return RunResult(directory, [manifest, written], {"videos": len(read_split_manifest(manifest))})


def run_train(config):
    """Train on the train split, selecting the best epoch on validation."""
    dataset_dir = config.require_dataset()
    train_videos = load_split(dataset_dir, "train", config.resize_width)
    validation_videos = load_split(dataset_dir, "validation", config.resize_width)
    moves = {a.label for loaded in train_videos + validation_videos for a in loaded.annotations}
    labels = LabelMap.for_mode(config.label_mode, moves)

    train_set = ClipDataset.from_videos(
        train_videos, labels, config.clip_length, config.jitter, config.negatives_per_video, config.seed
    )
    validation_set = ClipDataset.from_videos(
        validation_videos, labels, config.clip_length, 0, config.negatives_per_video, config.seed + 1
    )
    if len(train_set) == 0 or len(validation_set) == 0:
        raise ConfigurationError("Training needs non-empty train and validation splits")
    logger.info(f"Training on {len(train_set)} clips, validating on {len(validation_set)}, {len(labels)} classes")

    directory = output_dir(config)
    model = build_experiment_model(config, train_set.input_shape(), len(labels))
    checkpoint = directory / CHECKPOINT_FILE
    best, stats = train(model, train_set, validation_set, config.train,
                        checkpoint_path=checkpoint, stats_path=directory / STATS_FILE)
    save_checkpoint(best, checkpoint)
    artifacts = [checkpoint, write_labels(directory, labels)]
    if stats:
        artifacts.append(directory / STATS_FILE)
    artifacts.append(write_run_manifest(directory, config, "train", {"dataset": dataset_dir}))

    summary = {"epochs": len(stats)}
    if stats:
        summary["best_val_loss"] = min(s.val_loss for s in stats)
    return RunResult(directory, artifacts, summary)


def run_classify(config, checkpoint_path):
    """Classify every annotated stroke of the test split."""
    dataset_dir = config.require_dataset()
    model, labels = load_trained(checkpoint_path)
    rows = []
    for loaded in load_split(dataset_dir, "test", config.resize_width):
        for annotation in loaded.annotations:
            begin, end = widen_region(annotation.begin, annotation.end, model.clip_length, loaded.video.frame_count)
            label, confidence = classify_trimmed(
                model, loaded.video, begin, end, config.detection.fusion, config.detection.sigma
            )
            truth = labels.name(labels.index(annotation.label))
            rows.append((loaded.video_id, annotation.begin, annotation.end, truth, labels.name(label), confidence))

    directory = output_dir(config)
    artifacts = [
        write_predictions_csv(directory / PREDICTIONS_FILE, rows),
        write_labels(directory, labels),
        write_run_manifest(directory, config, "classify", {"dataset": dataset_dir, "checkpoint": checkpoint_path}),
    ]
    logger.info(f"Classified {len(rows)} strokes with {config.detection.fusion} fusion")
    return RunResult(directory, artifacts, {"strokes": len(rows)})


def run_detect(config, checkpoint_path):
    """Detect strokes in every test video."""
    dataset_dir = config.require_dataset()
    model, labels = load_trained(checkpoint_path)
    directory = output_dir(config)
    detections = {}
    artifacts = []
    for loaded in load_split(dataset_dir, "test", config.resize_width):
        segments = detect_video(model, loaded.video, config.detection)
        detections[loaded.video_id] = segments
        artifacts.append(write_detection_xml(directory / DETECTION_XML_DIR, loaded.video_id, segments, labels.names))

    artifacts += [
        write_detections_csv(directory / DETECTIONS_FILE, detections, labels.names),
        write_labels(directory, labels),
        write_run_manifest(directory, config, "detect", {"dataset": dataset_dir, "checkpoint": checkpoint_path}),
    ]
    total = sum(len(segments) for segments in detections.values())
    return RunResult(directory, artifacts, {"videos": len(detections), "segments": total})


def run_eval_classify(config, predictions_path):
    """Accuracy and confusion matrix of a predictions file."""
    predictions_path = Path(predictions_path)
    labels = read_labels(predictions_path.parent)
    rows = read_predictions_csv(predictions_path)
    truth = [labels.names.index(row[3]) for row in rows]
    predicted = [labels.names.index(row[4]) for row in rows]
    report = classification_report(predicted, truth, labels.names)

    directory = output_dir(config)
    artifacts = write_report(report, directory)
    artifacts.append(write_run_manifest(directory, config, "eval-classify", {"predictions": predictions_path}))
    return RunResult(directory, artifacts, {"accuracy": report.accuracy})


def run_eval_detect(config, detections_path):
    """mAP and global frame IoU of a detections file against the test split."""
    dataset_dir = config.require_dataset()
    detections_path = Path(detections_path)
    labels = read_labels(detections_path.parent)
    detections = read_detections_csv(detections_path, labels.names)
    truths = ground_truth_segments(dataset_dir, "test", labels)
    report = detection_report(detections, truths, labels.names, config.iou_threshold)

    directory = output_dir(config)
    artifacts = write_report(report, directory)
    artifacts.append(write_run_manifest(directory, config, "eval-detect",
                                        {"dataset": dataset_dir, "detections": detections_path}))
    return RunResult(directory, artifacts, {"mean_ap": report.mean_ap, "global_iou": report.global_iou})


def run_shapes(config, input_shape, num_classes):
    """
    Per-layer output shapes of the configured architecture.

    Returns:
        (list of LayerShape, feature map shape before flatten)
    """
    kwargs = {
        "input_shape": tuple(input_shape),
        "channel_plan": list(config.channel_plan) or None,
        "num_classes": num_classes,
        "hidden_fc": config.hidden_fc,
    }
    if config.model == "v1":
        kwargs["spatial_pool_blocks"] = config.spatial_pool_blocks
    spec = SPEC_BUILDERS[config.model](**kwargs)
    return infer_shapes(spec), feature_shape(spec)
