"""
Window scoring, fusion and segmentation for stroke classification and detection.

A window of length L starting at frame s covers frames [s, s + L) and is
centred at s + (L - 1) / 2.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from apps.core.exceptions import ConfigurationError, DimensionError
from apps.core.utils import get_inference_batch_size, get_worker_count
from apps.dataset.transforms import ExtractionError, centred_start, clip_array
from apps.numeric.functional import softmax
from apps.zoo.networks import model_forward

logger = logging.getLogger(__name__)

FUSION_METHODS = ("no_window", "vote", "mean", "gaussian")
DECISION_APPROACHES = ("neg_vs_all", "neg_vs_sum")
DETECTION_MODES = ("sliding", "proposals")


@dataclass(frozen=True)
class DetectionConfig:
    mode: str = "sliding"
    fusion: str = "gaussian"
    sigma: float = 16.0
    approach: str = "neg_vs_all"
    negative_index: int = 0
    min_segment_length: int = 30
    proposal_length: int = 150

    def __post_init__(self):
        if self.mode not in DETECTION_MODES:
            raise ConfigurationError(f"Unknown detection mode {self.mode!r}; expected one of {DETECTION_MODES}")
        if self.fusion not in FUSION_METHODS:
            raise ConfigurationError(f"Unknown fusion method {self.fusion!r}; expected one of {FUSION_METHODS}")
        if self.approach not in DECISION_APPROACHES:
            raise ConfigurationError(f"Unknown decision approach {self.approach!r}")
        if not self.sigma > 0:
            raise ConfigurationError(f"sigma must be > 0, got {self.sigma}")
        if self.min_segment_length < 1 or self.proposal_length < 1:
            raise ConfigurationError("min_segment_length and proposal_length must be >= 1")


@dataclass
class ScoreTimeline:
    """Softmax vectors of windows sorted by start frame."""

    window_starts: np.ndarray
    scores: np.ndarray
    window_length: int
    frame_count: int

    @property
    def num_classes(self):
        return self.scores.shape[1]

    def centres(self):
        return self.window_starts + (self.window_length - 1) / 2

    def within(self, begin, end):
        """Windows lying entirely inside [begin, end]."""
        keep = (self.window_starts >= begin) & (self.window_starts + self.window_length - 1 <= end)
        return ScoreTimeline(self.window_starts[keep], self.scores[keep], self.window_length, self.frame_count)


@dataclass(frozen=True, order=True)
class Segment:
    """Detected interval, both ends inclusive."""

    begin: int
    end: int
    label: int
    confidence: float

    @property
    def length(self):
        return self.end - self.begin + 1


# =============================================================================
# WINDOW SCORING
# =============================================================================


def score_windows(model, video, starts, batch_size=None, workers=None):
    """
    Softmax vectors for the windows of a video starting at `starts`.

    Batches run in order on one worker in deterministic mode, otherwise
    on a thread pool; the output order never depends on scheduling.
    """
    length = model.clip_length
    batch_size = batch_size or get_inference_batch_size()
    workers = workers or get_worker_count()
    starts = np.asarray(starts, dtype=np.int64)
    chunks = [starts[i:i + batch_size] for i in range(0, len(starts), batch_size)]

    def run(chunk):
        batch = np.stack([clip_array(video, s, length) for s in chunk])
        return softmax(model_forward(model, batch)).data

    if not chunks:
        return np.zeros((0, model.num_classes), dtype=np.float64)
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(chunk) for chunk in chunks]
    return np.concatenate(results).astype(np.float64)


def slide_window_scores(model, video, batch_size=None, workers=None):
    """
    Score every window with stride 1.

    Raises:
        ExtractionError: the video is shorter than one window
    """
    length = model.clip_length
    if video.frame_count < length:
        raise ExtractionError(f"A {video.frame_count}-frame video is shorter than one {length}-frame window")
    starts = np.arange(video.frame_count - length + 1)
    scores = score_windows(model, video, starts, batch_size, workers)
    logger.debug(f"Scored {len(starts)} windows over {video.frame_count} frames")
    return ScoreTimeline(starts, scores, length, video.frame_count)


# =============================================================================
# FUSION
# =============================================================================


def gaussian_weights(offsets, sigma):
    return np.exp(-np.square(offsets) / (2.0 * sigma * sigma))


def one_hot_votes(scores):
    """Argmax of each row as a one-hot vector; ties go to the lower class index."""
    votes = np.zeros_like(scores)
    votes[np.arange(len(scores)), scores.argmax(axis=1)] = 1.0
    return votes


def fuse_windows(scores, centres, target, method, sigma=16.0):
    """
    Combine window vectors into one decision vector for a region centred at `target`.

    vote returns the normalised histogram of window argmaxes, mean the
    average vector and gaussian the average weighted by
    exp(-d^2 / 2 sigma^2), d being the window centre's offset from target.
    """
    if len(scores) == 0:
        raise DimensionError("No window covers the region")
    if method == "vote":
        return one_hot_votes(scores).mean(axis=0)
    if method == "mean":
        return scores.mean(axis=0)
    if method == "gaussian":
        weights = gaussian_weights(np.asarray(centres, dtype=np.float64) - target, sigma)
        return weights @ scores / weights.sum()
    if method == "no_window":
        if len(scores) != 1:
            raise ConfigurationError("no_window decisions take exactly one window")
        return scores[0]
    raise ConfigurationError(f"Unknown fusion method {method!r}")


def fuse_frame_scores(timeline, method, sigma=16.0):
    """
    Per-frame class vectors from every window covering each frame.

    The weight of a window at frame f depends only on f's offset inside
    the window, so fusion accumulates one offset at a time.

    Returns:
        (frame_count, num_classes) array whose rows sum to 1

    Raises:
        DimensionError: some frame is covered by no window
    """
    if method not in ("vote", "mean", "gaussian"):
        raise ConfigurationError(f"Frame fusion supports vote, mean and gaussian, not {method!r}")
    length = timeline.window_length
    scores = one_hot_votes(timeline.scores) if method == "vote" else timeline.scores
    offsets = np.arange(length) - (length - 1) / 2
    weights = gaussian_weights(offsets, sigma) if method == "gaussian" else np.ones(length)

    totals = np.zeros((timeline.frame_count, timeline.num_classes))
    mass = np.zeros(timeline.frame_count)
    for k in range(length):
        frames = timeline.window_starts + k
        totals[frames] += weights[k] * scores
        mass[frames] += weights[k]
    if np.any(mass == 0):
        raise DimensionError(f"{int((mass == 0).sum())} frames are covered by no window")
    return totals / mass[:, None]


# =============================================================================
# DECISIONS AND SEGMENTS
# =============================================================================


def frame_decision(frame_vectors, approach, negative_index=0):
    """
    Binary stroke mask and stroke score (1 - p_neg) per frame.

    neg_vs_all marks a stroke when the argmax is not the negative class;
    neg_vs_sum when p_neg < 0.5.
    """
    frame_vectors = np.atleast_2d(frame_vectors)
    if not 0 <= negative_index < frame_vectors.shape[1]:
        raise ConfigurationError(f"Negative index {negative_index} outside [0, {frame_vectors.shape[1]})")
    p_neg = frame_vectors[:, negative_index]
    if approach == "neg_vs_all":
        mask = frame_vectors.argmax(axis=1) != negative_index
    elif approach == "neg_vs_sum":
        mask = (1.0 - p_neg) > p_neg
    else:
        raise ConfigurationError(f"Unknown decision approach {approach!r}")
    return mask, 1.0 - p_neg


def positive_label(vector, negative_index=0):
    """Most likely non-negative class of a vector (or mean of vectors)."""
    vector = np.array(vector, dtype=np.float64)
    vector[negative_index] = -np.inf
    return int(vector.argmax())


def runs(mask):
    """(begin, end) of each maximal run of True, inclusive."""
    padded = np.concatenate([[0], np.asarray(mask, dtype=np.int8), [0]])
    edges = np.diff(padded)
    begins = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    return list(zip(begins.tolist(), ends.tolist()))


def segments_from_frames(mask, stroke_scores, frame_vectors, min_length=30, negative_index=0):
    """
    Turn a frame mask into sorted, disjoint segments of at least min_length frames.

    Labels come from the mean positive-class probabilities over the run;
    confidence is the mean stroke score.
    """
    frame_vectors = np.asarray(frame_vectors)
    stroke_scores = np.asarray(stroke_scores)
    segments = []
    for begin, end in runs(mask):
        if end - begin + 1 < min_length:
            continue
        label = positive_label(frame_vectors[begin:end + 1].mean(axis=0), negative_index)
        confidence = float(stroke_scores[begin:end + 1].mean())
        segments.append(Segment(begin, end, label, confidence))
    return segments


def proposal_candidates(frame_count, proposal_length=150):
    """Successive non-overlapping intervals; an incomplete tail is dropped."""
    if proposal_length < 1:
        raise ConfigurationError(f"proposal_length must be >= 1, got {proposal_length}")
    return [
        (begin, begin + proposal_length - 1)
        for begin in range(0, frame_count - proposal_length + 1, proposal_length)
    ]


# =============================================================================
# TRIMMED CLASSIFICATION
# =============================================================================


def widen_region(begin, end, clip_length, frame_count):
    """Grow [begin, end] symmetrically to at least clip_length frames, inside the video."""
    if end - begin + 1 >= clip_length:
        return begin, end
    start = centred_start(begin, end, frame_count, clip_length)
    return start, start + clip_length - 1


def region_windows(begin, end, clip_length, method, frame_count):
    """Window starts used to decide a region."""
    if end - begin + 1 < clip_length:
        raise ExtractionError(f"Region [{begin}, {end}] is shorter than one {clip_length}-frame window")
    if method == "no_window":
        return np.array([centred_start(begin, end, frame_count, clip_length)])
    return np.arange(begin, end - clip_length + 2)


def decide_region(scores, starts, begin, end, clip_length, method, sigma=16.0):
    """Fused class vector of a region from its window scores."""
    centres = np.asarray(starts) + (clip_length - 1) / 2
    return fuse_windows(scores, centres, (begin + end) / 2, method, sigma)


def classify_trimmed(model, video, begin, end, method="gaussian", sigma=16.0):
    """
    Classify one region of a video.

    Returns:
        (class index, confidence) where confidence is the fused score of the class

    Raises:
        ExtractionError: the region is shorter than one window
    """
    length = model.clip_length
    starts = region_windows(begin, end, length, method, video.frame_count)
    vector = decide_region(score_windows(model, video, starts), starts, begin, end, length, method, sigma)
    label = int(vector.argmax())
    return label, float(vector[label])


# =============================================================================
# DETECTION
# =============================================================================


def detect_proposals(model, video, config, timeline=None):
    """Classify fixed-length proposals and keep the ones decided as strokes."""
    length = model.clip_length
    if config.proposal_length < length:
        raise ConfigurationError(f"Proposals of {config.proposal_length} frames cannot hold a {length}-frame window")
    proposals = proposal_candidates(video.frame_count, config.proposal_length)
    if not proposals:
        return []
    if config.fusion != "no_window" and timeline is None:
        timeline = slide_window_scores(model, video)

    segments = []
    for begin, end in proposals:
        if config.fusion == "no_window":
            starts = region_windows(begin, end, length, "no_window", video.frame_count)
            scores = score_windows(model, video, starts)
        else:
            inside = timeline.within(begin, end)
            starts, scores = inside.window_starts, inside.scores
        vector = decide_region(scores, starts, begin, end, length, config.fusion, config.sigma)
        mask, stroke_score = frame_decision(vector[None, :], config.approach, config.negative_index)
        if mask[0]:
            segments.append(Segment(begin, end, positive_label(vector, config.negative_index), float(stroke_score[0])))
    return segments


def check_detection_fusion(config):
    """no_window decides a region from one window, so sliding detection cannot use it."""
    if config.mode == "sliding" and config.fusion == "no_window":
        raise ConfigurationError("no_window fusion needs proposals; sliding detection fuses several windows")


def detect_video(model, video, config):
    """
    Detect strokes in an untrimmed video.

    sliding: score every window, fuse per frame, decide per frame and keep
    runs of at least min_segment_length frames. proposals: classify
    successive fixed-length proposals.

    Returns:
        Sorted, disjoint Segment list

    Raises:
        ConfigurationError: sliding mode with no_window fusion
    """
    check_detection_fusion(config)
    if config.mode == "proposals":
        return detect_proposals(model, video, config)
    timeline = slide_window_scores(model, video)
    frame_vectors = fuse_frame_scores(timeline, config.fusion, config.sigma)
    mask, stroke_scores = frame_decision(frame_vectors, config.approach, config.negative_index)
    segments = segments_from_frames(
        mask, stroke_scores, frame_vectors, config.min_segment_length, config.negative_index
    )
    logger.info(f"Detected {len(segments)} segments in a {video.frame_count}-frame video")
    return segments
