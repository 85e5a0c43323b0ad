"""
Clip extraction, spatial augmentation and negative mining.
"""

import logging
from dataclasses import dataclass, replace

import numpy as np
from PIL import Image

from apps.core.exceptions import StrokeBenchError
from apps.dataset.annotations import NEGATIVE_LABEL, StrokeAnnotation

logger = logging.getLogger(__name__)

CLIP_LENGTH = 96
MAX_ROTATION_DEGREES = 10.0
FLIP_PROBABILITY = 0.5


class ExtractionError(StrokeBenchError, ValueError):
    """Exception raised when a video cannot supply a clip."""
    pass


@dataclass
class Clip:
    """
    A (3, L, H, W) float32 array in [0, 1] with its class index.

    source is (video id, first frame).
    """

    tensor: np.ndarray
    label: int
    source: tuple

    @property
    def length(self):
        return self.tensor.shape[1]


def centred_start(begin, end, frame_count, clip_length=CLIP_LENGTH, shift=0):
    """
    First frame of the clip placed on an interval.

    The window starts at floor(midpoint) - (L - 1) // 2, is shifted by
    `shift`, and is clamped to [0, frame_count - L].
    """
    if frame_count < clip_length:
        raise ExtractionError(f"A {frame_count}-frame video cannot supply a {clip_length}-frame clip")
    midpoint = (begin + end) // 2
    start = midpoint - (clip_length - 1) // 2 + shift
    return int(min(max(start, 0), frame_count - clip_length))


def clip_array(video, start, clip_length=CLIP_LENGTH):
    """Frames [start, start + L) as a (3, L, H, W) float32 array scaled to [0, 1]."""
    frames = video.frames[start:start + clip_length]
    return np.ascontiguousarray(frames.transpose(3, 0, 1, 2), dtype=np.float32) / np.float32(255)


def extract_clip(video, annotation, jitter=0, clip_length=CLIP_LENGTH, label=0, video_id=""):
    """
    Cut the clip centred on an annotation.

    Args:
        video: RawVideo, already resized
        annotation: Interval the clip is centred on
        jitter: Shift in frames applied before clamping
        label: Class index stored on the clip

    Raises:
        ExtractionError: the video is shorter than clip_length
    """
    start = centred_start(annotation.begin, annotation.end, video.frame_count, clip_length, jitter)
    return Clip(clip_array(video, start, clip_length), label, (video_id, start))


def apply_spatial_transform(tensor, flip, angle):
    """
    Apply one horizontal flip and rotation to every frame of a (C, L, H, W) array.

    Rotation is about the frame centre with zero fill; angle 0 leaves frames untouched.
    """
    out = tensor[..., ::-1] if flip else tensor
    out = np.array(out, dtype=np.float32)
    if angle == 0:
        return out
    channels, length = out.shape[:2]
    for c in range(channels):
        for t in range(length):
            plane = Image.fromarray(out[c, t])
            rotated = plane.rotate(angle, resample=Image.Resampling.BILINEAR, fillcolor=0.0)
            out[c, t] = np.asarray(rotated, dtype=np.float32)
    return np.clip(out, 0.0, 1.0, out=out)


def augment_clip(clip, seed):
    """Random flip (p=0.5) and rotation in [-10, 10] degrees, drawn from `seed`."""
    rng = np.random.default_rng(seed)
    flip = bool(rng.random() < FLIP_PROBABILITY)
    angle = float(rng.uniform(-MAX_ROTATION_DEGREES, MAX_ROTATION_DEGREES))
    return replace(clip, tensor=apply_spatial_transform(clip.tensor, flip, angle))


def mine_negative_segments(frame_count, annotations, count, min_gap=CLIP_LENGTH, seed=0):
    """
    Draw up to `count` disjoint intervals of length `min_gap` outside every annotation.

    Each start is drawn uniformly among the starts still eligible, so the
    result is fully determined by the seed. Fewer intervals are returned
    when the gaps run out.

    Returns:
        Sorted StrokeAnnotation list labelled "negative"
    """
    covered = np.zeros(frame_count, dtype=bool)
    for annotation in annotations:
        covered[max(annotation.begin, 0):annotation.end + 1] = True

    rng = np.random.default_rng(seed)
    mined = []
    for _ in range(count):
        if frame_count < min_gap:
            break
        # windows whose frames are all uncovered
        hits = np.concatenate([[0], np.cumsum(covered, dtype=np.int64)])
        busy = hits[min_gap:] - hits[:-min_gap]
        eligible = np.flatnonzero(busy == 0)
        if eligible.size == 0:
            break
        start = int(rng.choice(eligible))
        covered[start:start + min_gap] = True
        mined.append(StrokeAnnotation(start, start + min_gap - 1, NEGATIVE_LABEL))

    if len(mined) < count:
        logger.warning(f"Mined {len(mined)} of {count} requested negatives from a {frame_count}-frame video")
    return sorted(mined)
