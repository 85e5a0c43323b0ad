"""
Uncompressed RGB video container.

Layout (little-endian):
    b"RVID"   magic
    u32       version (1)
    u32       width
    u32       height
    u32       frame_count
    u32       channels (3)
    u8 * frame_count * height * width * 3, RGB, row-major within a frame
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from apps.core.exceptions import ConfigurationError, StrokeBenchError

logger = logging.getLogger(__name__)

MAGIC = b"RVID"
VERSION = 1
CHANNELS = 3
_HEADER = struct.Struct("<4sIIIII")


class VideoFormatError(StrokeBenchError, ValueError):
    """Exception raised for unreadable raw video files."""
    pass


@dataclass
class RawVideo:
    """Decoded frames, shape (frame_count, height, width, 3), uint8."""

    width: int
    height: int
    frame_count: int
    frames: np.ndarray

    def __post_init__(self):
        expected = (self.frame_count, self.height, self.width, CHANNELS)
        if self.frames.dtype != np.uint8 or self.frames.shape != expected:
            raise VideoFormatError(
                f"Frame buffer {self.frames.dtype}{self.frames.shape} does not match uint8{expected}"
            )

    @classmethod
    def from_frames(cls, frames):
        frames = np.ascontiguousarray(frames, dtype=np.uint8)
        count, height, width, _ = frames.shape
        return cls(width=width, height=height, frame_count=count, frames=frames)


def encode_raw_video(video):
    header = _HEADER.pack(MAGIC, VERSION, video.width, video.height, video.frame_count, CHANNELS)
    return header + np.ascontiguousarray(video.frames).tobytes()


def decode_raw_video(payload):
    if len(payload) < _HEADER.size:
        raise VideoFormatError("Video is truncated before its header ends")
    magic, version, width, height, frame_count, channels = _HEADER.unpack_from(payload, 0)
    if magic != MAGIC:
        raise VideoFormatError(f"Not a raw video (magic {magic!r})")
    if version != VERSION:
        raise VideoFormatError(f"Unsupported raw video version {version}")
    if channels != CHANNELS:
        raise VideoFormatError(f"Raw videos carry {CHANNELS} channels, header says {channels}")
    expected = frame_count * height * width * CHANNELS
    body = payload[_HEADER.size:]
    if len(body) != expected:
        raise VideoFormatError(
            f"Header declares {frame_count} frames of {width}x{height} ({expected} bytes), payload has {len(body)}"
        )
    frames = np.frombuffer(body, dtype=np.uint8).reshape(frame_count, height, width, CHANNELS).copy()
    return RawVideo(width=width, height=height, frame_count=frame_count, frames=frames)


def read_raw_video(path):
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as exc:
        raise VideoFormatError(f"Cannot read video {path}: {exc}") from exc
    return decode_raw_video(payload)


def write_raw_video(video, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_raw_video(video))
    return path


def resized_height(width, height, target_width):
    """Aspect-preserving height, rounded to the nearest even integer."""
    return max(2, 2 * round(height * target_width / width / 2))


def resize_video(video, target_width=320):
    """
    Bilinearly resize every frame to target_width, keeping the aspect ratio.

    Raises:
        ConfigurationError: target_width exceeds the source width
    """
    if target_width > video.width:
        raise ConfigurationError(f"Cannot upscale a {video.width}-pixel-wide video to {target_width}")
    if target_width == video.width:
        return video
    target_height = resized_height(video.width, video.height, target_width)
    frames = np.empty((video.frame_count, target_height, target_width, CHANNELS), dtype=np.uint8)
    for index, frame in enumerate(video.frames):
        image = Image.fromarray(frame).resize(
            (target_width, target_height), resample=Image.Resampling.BILINEAR
        )
        frames[index] = np.asarray(image)
    logger.debug(f"Resized {video.width}x{video.height} -> {target_width}x{target_height}")
    return RawVideo(width=target_width, height=target_height, frame_count=video.frame_count, frames=frames)
