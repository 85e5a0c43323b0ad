"""
Report files: metrics CSV, confusion CSV and a plain-text summary.
"""

import csv
import logging
from pathlib import Path

from apps.core.utils import get_setting
from apps.evaluation.excel_generator import EvaluationExcelReport

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"
CONFUSION_FILE = "confusion.csv"
TEXT_FILE = "report.txt"
EXCEL_FILE = "report.xlsx"

DEFAULT_CONVENTIONS = (
    "internal conventions: one-to-one greedy matching at temporal IoU >= threshold, "
    "all-point interpolated AP, global IoU = per-video union-of-frames IoU averaged over videos"
)


def format_value(value):
    if isinstance(value, float):
        return f"{value:.9g}"
    return str(value)


def write_metrics_csv(report, path):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["metric", "value"])
        for name, value in report.metric_rows():
            writer.writerow([name, format_value(value)])
    return path


def read_metrics_csv(path):
    """Metrics as a dict of floats, in file order."""
    with Path(path).open(newline="", encoding="utf-8") as handle:
        return {row["metric"]: float(row["value"]) for row in csv.DictReader(handle)}


def write_confusion_csv(matrix, path):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(matrix.class_names)
        writer.writerows(matrix.counts.tolist())
    return path


def read_confusion_csv(path):
    """(class names, count rows)."""
    with Path(path).open(newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    return tuple(rows[0]), [[int(v) for v in row] for row in rows[1:]]


def render_text(report):
    lines = [f"{name}: {format_value(value)}" for name, value in report.metric_rows()]
    if report.mean_ap is not None or report.global_iou is not None:
        lines += ["", get_setting("METRIC_CONVENTIONS", DEFAULT_CONVENTIONS)]
    if report.confusion is not None:
        lines += ["", "Confusion matrix (row-normalised %)", report.confusion.render()]
    return "\n".join(lines) + "\n"


def write_report(report, directory, excel=True):
    """
    Write every report file into `directory`.

    Returns:
        list of written paths
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = [write_metrics_csv(report, directory / METRICS_FILE)]
    if report.confusion is not None:
        written.append(write_confusion_csv(report.confusion, directory / CONFUSION_FILE))
    text_path = directory / TEXT_FILE
    text_path.write_text(render_text(report), encoding="utf-8")
    written.append(text_path)
    if excel:
        written.append(EvaluationExcelReport(report).save(directory / EXCEL_FILE))
    logger.info(f"Wrote {len(written)} report files to {directory}")
    return written
