"""
Classification and detection metrics.

Detection metrics use internal conventions: one-to-one greedy matching
by descending confidence (ties by earlier begin) at a temporal IoU
threshold, all-point interpolated AP, and a global IoU computed per video
on the union of stroke frames and averaged over videos.
"""

import logging
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np

from apps.core.exceptions import ConfigurationError, DimensionError, TargetIndexError

logger = logging.getLogger(__name__)

DEFAULT_IOU_THRESHOLD = 0.5

# Segment tagged with the video it belongs to; matching never crosses videos
VideoSegment = namedtuple("VideoSegment", ["video_id", "begin", "end", "label", "confidence"])


# =============================================================================
# CLASSIFICATION
# =============================================================================


def _check_pair(predictions, ground_truth):
    predictions = np.asarray(predictions)
    ground_truth = np.asarray(ground_truth)
    if predictions.shape != ground_truth.shape:
        raise DimensionError(f"{len(predictions)} predictions for {len(ground_truth)} ground-truth labels")
    if len(predictions) == 0:
        raise ConfigurationError("Cannot score an empty prediction set")
    return predictions, ground_truth


def accuracy(predictions, ground_truth):
    """Fraction of predictions equal to the ground truth."""
    predictions, ground_truth = _check_pair(predictions, ground_truth)
    return float(np.mean(predictions == ground_truth))


@dataclass
class ConfusionMatrix:
    """Counts with ground truth on rows and predictions on columns."""

    counts: np.ndarray
    class_names: tuple

    @property
    def total(self):
        return int(self.counts.sum())

    def row_sums(self):
        return self.counts.sum(axis=1)

    def accuracy(self):
        return float(np.trace(self.counts) / self.total) if self.total else 0.0

    def normalised(self):
        """Row-normalised view; rows without samples stay zero."""
        sums = self.row_sums()[:, None].astype(np.float64)
        return np.divide(self.counts, sums, out=np.zeros(self.counts.shape), where=sums > 0)

    def render(self):
        """Fixed-width text table of row-normalised percentages."""
        width = max(8, max(len(name) for name in self.class_names) + 1)
        lines = ["truth \\ pred".ljust(width) + "".join(name[:width - 1].rjust(width) for name in self.class_names)]
        for name, row in zip(self.class_names, self.normalised()):
            lines.append(name[:width - 1].ljust(width) + "".join(f"{100 * v:.1f}".rjust(width) for v in row))
        return "\n".join(lines)


def confusion_matrix(predictions, ground_truth, class_names):
    """
    Count (truth, prediction) pairs.

    Args:
        class_names: Names of the N classes; labels must lie in [0, N)

    Raises:
        TargetIndexError: a label is outside [0, N)
    """
    predictions, ground_truth = _check_pair(predictions, ground_truth)
    n = len(class_names)
    for labels in (predictions, ground_truth):
        bad = (labels < 0) | (labels >= n)
        if np.any(bad):
            raise TargetIndexError(f"Label {int(labels[bad][0])} outside [0, {n})")
    counts = np.zeros((n, n), dtype=np.int64)
    np.add.at(counts, (ground_truth, predictions), 1)
    return ConfusionMatrix(counts, tuple(class_names))


# =============================================================================
# DETECTION
# =============================================================================


def temporal_iou(a, b):
    """IoU of two inclusive frame intervals."""
    inter = min(a.end, b.end) - max(a.begin, b.begin) + 1
    if inter <= 0:
        return 0.0
    union = (a.end - a.begin + 1) + (b.end - b.begin + 1) - inter
    return inter / union


def _ranked(detections):
    return sorted(range(len(detections)), key=lambda i: (-detections[i].confidence, detections[i].begin))


def match_detections(detections, ground_truths, iou_threshold=DEFAULT_IOU_THRESHOLD):
    """
    Greedy one-to-one matching.

    Detections are visited by descending confidence (ties by earlier begin);
    each takes the unmatched ground truth of the same video with the highest
    IoU when that IoU reaches the threshold.

    Returns:
        (ranked detection indices, TP flags in ranked order, list of (det, gt, iou))
    """
    order = _ranked(detections)
    taken = np.zeros(len(ground_truths), dtype=bool)
    flags = []
    matches = []
    for i in order:
        detection = detections[i]
        best, best_iou = -1, -1.0
        for j, truth in enumerate(ground_truths):
            if taken[j] or getattr(truth, "video_id", None) != getattr(detection, "video_id", None):
                continue
            iou = temporal_iou(detection, truth)
            if iou > best_iou:
                best, best_iou = j, iou
        if best >= 0 and best_iou >= iou_threshold:
            taken[best] = True
            flags.append(True)
            matches.append((i, best, best_iou))
        else:
            flags.append(False)
    return order, np.array(flags, dtype=bool), matches


def average_precision(tp_flags, num_ground_truths):
    """All-point interpolated AP from TP flags in ranked order."""
    if num_ground_truths == 0:
        return 0.0 if len(tp_flags) else 1.0
    if len(tp_flags) == 0:
        return 0.0
    tp = np.cumsum(tp_flags)
    fp = np.cumsum(~tp_flags)
    recall = np.concatenate([[0.0], tp / num_ground_truths])
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    return float(np.sum(np.diff(recall) * envelope))


def match_and_ap(detections, ground_truths, iou_threshold=DEFAULT_IOU_THRESHOLD):
    """
    AP of one class.

    Args:
        detections: Objects with begin, end and confidence (and optionally video_id)
        ground_truths: Objects with begin and end (and optionally video_id)

    Returns:
        (AP, list of (detection index, ground-truth index, iou))
    """
    _, flags, matches = match_detections(detections, ground_truths, iou_threshold)
    return average_precision(flags, len(ground_truths)), matches


@dataclass(frozen=True)
class ClassAP:
    label: object
    ap: float
    true_positives: int
    false_positives: int
    false_negatives: int


def _tag(by_video):
    return [
        VideoSegment(video_id, s.begin, s.end, s.label, getattr(s, "confidence", getattr(s, "score", None)) or 0.0)
        for video_id, segments in by_video.items()
        for s in segments
    ]


def per_class_ap(detections, ground_truths, classes=None, iou_threshold=DEFAULT_IOU_THRESHOLD):
    """
    AP of every class present in the ground truth.

    Args:
        detections: dict video id -> segments with label and confidence
        ground_truths: dict video id -> segments with label
        classes: Restrict to these labels (still only those with ground truth)

    Returns:
        list of ClassAP sorted by label

    Raises:
        ConfigurationError: there is no ground truth at all
    """
    truths = _tag(ground_truths)
    found = _tag(detections)
    present = sorted({t.label for t in truths})
    if classes is not None:
        present = [label for label in present if label in set(classes)]
    if not present:
        raise ConfigurationError("Mean AP needs at least one ground-truth segment")

    results = []
    for label in present:
        class_truths = [t for t in truths if t.label == label]
        class_found = [d for d in found if d.label == label]
        _, flags, _ = match_detections(class_found, class_truths, iou_threshold)
        tp = int(flags.sum())
        results.append(ClassAP(label, average_precision(flags, len(class_truths)), tp, len(flags) - tp,
                               len(class_truths) - tp))
    skipped = {d.label for d in found} - set(present)
    if skipped:
        logger.info(f"Ignoring detections of classes without ground truth: {sorted(skipped)}")
    return results


def mean_ap(detections, ground_truths, classes=None, iou_threshold=DEFAULT_IOU_THRESHOLD):
    """Mean of per-class AP over classes present in the ground truth."""
    return float(np.mean([c.ap for c in per_class_ap(detections, ground_truths, classes, iou_threshold)]))


def _frame_mask(segments, length):
    mask = np.zeros(length, dtype=bool)
    for s in segments:
        mask[s.begin:s.end + 1] = True
    return mask


def global_frame_iou(predictions, ground_truths):
    """
    Mean over videos of the IoU between predicted and true stroke frames.

    A video where both are empty scores 1; videos missing from one side
    count as empty there.
    """
    videos = sorted(set(predictions) | set(ground_truths))
    if not videos:
        return 1.0
    scores = []
    for video_id in videos:
        predicted = predictions.get(video_id, [])
        truth = ground_truths.get(video_id, [])
        length = max([s.end + 1 for s in list(predicted) + list(truth)], default=0)
        a, b = _frame_mask(predicted, length), _frame_mask(truth, length)
        union = int((a | b).sum())
        scores.append(1.0 if union == 0 else int((a & b).sum()) / union)
    return float(np.mean(scores))


# =============================================================================
# REPORT
# =============================================================================


@dataclass
class EvalReport:
    """Metrics of one evaluation run; absent metrics stay None."""

    accuracy: float = None
    mean_ap: float = None
    global_iou: float = None
    class_aps: list = field(default_factory=list)
    confusion: ConfusionMatrix = None
    iou_threshold: float = DEFAULT_IOU_THRESHOLD
    class_names: tuple = ()
    samples: int = 0

    def class_name(self, label):
        if isinstance(label, (int, np.integer)) and 0 <= label < len(self.class_names):
            return self.class_names[label]
        return str(label)

    def metric_rows(self):
        """(name, value) pairs in a fixed order; None metrics are skipped."""
        rows = [("samples", self.samples)]
        if self.accuracy is not None:
            rows.append(("accuracy", self.accuracy))
        if self.mean_ap is not None:
            rows += [
                ("iou_threshold", self.iou_threshold),
                ("mean_ap", self.mean_ap),
                ("true_positives", sum(c.true_positives for c in self.class_aps)),
                ("false_positives", sum(c.false_positives for c in self.class_aps)),
                ("false_negatives", sum(c.false_negatives for c in self.class_aps)),
            ]
            rows += [(f"ap_{self.class_name(c.label)}", c.ap) for c in self.class_aps]
        if self.global_iou is not None:
            rows.append(("global_iou", self.global_iou))
        return rows


def classification_report(predictions, ground_truth, class_names):
    matrix = confusion_matrix(predictions, ground_truth, class_names)
    return EvalReport(
        accuracy=accuracy(predictions, ground_truth),
        confusion=matrix,
        class_names=tuple(class_names),
        samples=matrix.total,
    )


def detection_report(detections, ground_truths, class_names, iou_threshold=DEFAULT_IOU_THRESHOLD):
    """
    mAP, per-class AP, matching counts and global frame IoU.

    Args:
        detections: dict video id -> Segment list (integer labels)
        ground_truths: dict video id -> Segment list (integer labels)
    """
    class_aps = per_class_ap(detections, ground_truths, iou_threshold=iou_threshold)
    report = EvalReport(
        mean_ap=float(np.mean([c.ap for c in class_aps])),
        global_iou=global_frame_iou(detections, ground_truths),
        class_aps=class_aps,
        iou_threshold=iou_threshold,
        class_names=tuple(class_names),
        samples=sum(len(v) for v in ground_truths.values()),
    )
    logger.info(f"Detection mAP {report.mean_ap:.4f}, global IoU {report.global_iou:.4f}")
    return report
