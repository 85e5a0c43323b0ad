"""
Synthetic untrimmed stroke videos.

Each class is a moving bar with its own colour, orientation and speed
over a noisy grey background. The signature survives horizontal flips
and small rotations, so augmented clips keep their class.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from apps.core.exceptions import ConfigurationError
from apps.dataset.annotations import StrokeAnnotation, write_annotation_file
from apps.dataset.clips import MANIFEST_NAME, SplitEntry, write_split_manifest
from apps.dataset.rawvideo import RawVideo, write_raw_video

logger = logging.getLogger(__name__)

STROKE_LENGTH_RANGE = (60, 180)
GAP_RANGE = (30, 120)
BACKGROUND_LEVEL = 96

# Distinct saturated colours, cycled when there are more classes
PALETTE = (
    (230, 40, 40), (40, 200, 60), (50, 80, 240), (240, 210, 30), (200, 50, 220),
    (30, 210, 220), (250, 130, 20), (255, 255, 255), (120, 60, 20), (0, 0, 0),
)


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 5
    train_videos: int = 4
    validation_videos: int = 2
    test_videos: int = 2
    width: int = 64
    height: int = 36
    strokes_per_video: int = 3
    noise: float = 12.0
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 1:
            raise ConfigurationError(f"num_classes must be >= 1, got {self.num_classes}")
        if min(self.train_videos, self.validation_videos, self.test_videos) < 0:
            raise ConfigurationError("Video counts must be >= 0")
        if self.width < 8 or self.height < 8:
            raise ConfigurationError(f"Frames must be at least 8x8, got {self.width}x{self.height}")
        if self.strokes_per_video < 0 or self.noise < 0:
            raise ConfigurationError("strokes_per_video and noise must be >= 0")

    def class_names(self):
        return [f"move_{k:02d}" for k in range(self.num_classes)]


@dataclass(frozen=True)
class BarPattern:
    """Visual signature of one class."""

    colour: tuple
    vertical: bool
    speed: float


def class_pattern(index):
    """Orientation alternates with the class index; speed steps every two classes."""
    return BarPattern(
        colour=PALETTE[index % len(PALETTE)],
        vertical=index % 2 == 1,
        speed=1.0 + 1.5 * (index // 2),
    )


def _bar_position(frame, extent, thickness, speed):
    # bounces between 0 and extent - thickness
    span = max(extent - thickness, 1)
    travel = (frame * speed) % (2 * span)
    return int(travel if travel <= span else 2 * span - travel)


def render_video(config, strokes, frame_count, rng):
    """Draw a noisy background and the bar of every stroke."""
    shape = (frame_count, config.height, config.width, 3)
    frames = rng.normal(BACKGROUND_LEVEL, config.noise, size=shape) if config.noise else np.full(shape, BACKGROUND_LEVEL)
    frames = np.clip(np.rint(frames), 0, 255).astype(np.uint8)
    for stroke, class_index in strokes:
        pattern = class_pattern(class_index)
        extent = config.width if pattern.vertical else config.height
        thickness = max(2, extent // 8)
        for offset, frame in enumerate(range(stroke.begin, stroke.end + 1)):
            position = _bar_position(offset, extent, thickness, pattern.speed)
            if pattern.vertical:
                frames[frame, :, position:position + thickness] = pattern.colour
            else:
                frames[frame, position:position + thickness, :] = pattern.colour
    return RawVideo.from_frames(frames)


def generate_video(config, video_index):
    """
    Lay out strokes with gaps of at least 30 frames and render them.

    Returns:
        (RawVideo, StrokeAnnotation list)
    """
    rng = np.random.default_rng([config.seed, video_index])
    names = config.class_names()
    cursor = int(rng.integers(GAP_RANGE[0], GAP_RANGE[1] + 1))
    strokes = []
    for _ in range(config.strokes_per_video):
        length = int(rng.integers(STROKE_LENGTH_RANGE[0], STROKE_LENGTH_RANGE[1] + 1))
        class_index = int(rng.integers(0, config.num_classes))
        strokes.append((StrokeAnnotation(cursor, cursor + length - 1, names[class_index]), class_index))
        cursor += length + int(rng.integers(GAP_RANGE[0], GAP_RANGE[1] + 1))
    video = render_video(config, strokes, cursor, rng)
    return video, [stroke for stroke, _ in strokes]


def synth_dataset(config, out_dir):
    """
    Write videos/, annotations/ and splits.tsv under out_dir.

    Byte-identical for equal configs.

    Returns:
        Path of the split manifest
    """
    out_dir = Path(out_dir)
    (out_dir / "videos").mkdir(parents=True, exist_ok=True)
    (out_dir / "annotations").mkdir(parents=True, exist_ok=True)

    plan = (
        [("train", i) for i in range(config.train_videos)]
        + [("validation", i) for i in range(config.validation_videos)]
        + [("test", i) for i in range(config.test_videos)]
    )
    entries = []
    for video_index, (split, number) in enumerate(plan):
        video_id = f"{split}_{number:03d}"
        video, annotations = generate_video(config, video_index)
        video_path = write_raw_video(video, out_dir / "videos" / f"{video_id}.rvid")
        annotation_path = write_annotation_file(out_dir / "annotations" / f"{video_id}.xml", video_id, annotations)
        entries.append(SplitEntry(video_path, annotation_path, split))
        logger.debug(f"Synthesised {video_id}: {video.frame_count} frames, {len(annotations)} strokes")

    manifest = write_split_manifest(out_dir / MANIFEST_NAME, entries)
    logger.info(f"Wrote {len(entries)} synthetic videos to {out_dir}")
    return manifest
