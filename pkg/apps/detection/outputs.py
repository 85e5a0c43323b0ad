"""
Prediction and detection files.
"""

import csv
import logging
from pathlib import Path

from apps.core.exceptions import ConfigurationError
from apps.dataset.annotations import write_annotation_file
from apps.detection.services import Segment

logger = logging.getLogger(__name__)

DETECTION_HEADER = ("video_id", "begin", "end", "label", "score")
PREDICTION_HEADER = ("video_id", "begin", "end", "truth", "prediction", "confidence")


def write_detections_csv(path, detections, label_names):
    """
    Write `video_id,begin,end,label,score` rows, videos in the given order.

    Args:
        detections: dict mapping video id to a Segment list
        label_names: Class names indexed by Segment.label
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(DETECTION_HEADER)
        for video_id, segments in detections.items():
            for segment in segments:
                writer.writerow([
                    video_id, segment.begin, segment.end, label_names[segment.label], f"{segment.confidence:.6f}"
                ])
    logger.info(f"Wrote {sum(len(s) for s in detections.values())} detections to {path}")
    return path


def read_detections_csv(path, label_names):
    """Inverse of write_detections_csv; returns dict video id -> Segment list."""
    detections = {}
    with Path(path).open(newline="", encoding="utf-8") as handle:
        for number, row in enumerate(csv.DictReader(handle), start=2):
            try:
                segment = Segment(
                    int(row["begin"]), int(row["end"]), label_names.index(row["label"]), float(row["score"])
                )
            except (KeyError, ValueError) as exc:
                raise ConfigurationError(f"{path}:{number}: unreadable detection row: {exc}") from exc
            detections.setdefault(row["video_id"], []).append(segment)
    return detections


def write_detection_xml(directory, video_id, segments, label_names):
    """Per-video annotation XML carrying a score attribute."""
    return write_annotation_file(Path(directory) / f"{video_id}.xml", video_id, segments, label_names=label_names)


def write_predictions_csv(path, rows):
    """
    Write trimmed-classification results.

    Args:
        rows: iterables of (video_id, begin, end, truth name, predicted name, confidence)
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(PREDICTION_HEADER)
        for video_id, begin, end, truth, prediction, confidence in rows:
            writer.writerow([video_id, begin, end, truth, prediction, f"{confidence:.6f}"])
    return path


def read_predictions_csv(path):
    with Path(path).open(newline="", encoding="utf-8") as handle:
        return [
            (row["video_id"], int(row["begin"]), int(row["end"]), row["truth"], row["prediction"],
             float(row["confidence"]))
            for row in csv.DictReader(handle)
        ]
