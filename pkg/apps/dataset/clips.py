"""
Split manifests, loaded videos and the clip datasets fed to training.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from apps.core.exceptions import ConfigurationError
from apps.dataset.annotations import DEFAULT_SCHEMA, AnnotationSet, read_annotation_file
from apps.dataset.rawvideo import read_raw_video, resize_video
from apps.dataset.transforms import CLIP_LENGTH, augment_clip, extract_clip, mine_negative_segments

logger = logging.getLogger(__name__)

SPLITS = ("train", "validation", "test")
MANIFEST_NAME = "splits.tsv"


@dataclass(frozen=True)
class SplitEntry:
    video_path: Path
    annotation_path: Path
    split: str

    @property
    def video_id(self):
        return self.video_path.stem


def read_split_manifest(path):
    """
    Parse `video_path<TAB>annotation_path<TAB>split` lines.

    Relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"Cannot read split manifest {path}: {exc}") from exc
    entries = []
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3 or fields[2] not in SPLITS:
            raise ConfigurationError(f"{path}:{number}: expected video<TAB>annotation<TAB>split, got {line!r}")
        entries.append(SplitEntry(path.parent / fields[0], path.parent / fields[1], fields[2]))
    return entries


def write_split_manifest(path, entries):
    path = Path(path)
    lines = [
        f"{entry.video_path.relative_to(path.parent).as_posix()}\t"
        f"{entry.annotation_path.relative_to(path.parent).as_posix()}\t{entry.split}"
        for entry in entries
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@dataclass
class LoadedVideo:
    video_id: str
    video: object
    annotations: list


def read_annotation_set(manifest_path, split, schema=DEFAULT_SCHEMA):
    """Ground truth of one split without decoding the videos."""
    annotations = AnnotationSet()
    for entry in read_split_manifest(manifest_path):
        if entry.split == split:
            annotations.add(*read_annotation_file(entry.annotation_path, schema))
    return annotations


def load_split(manifest_path, split, resize_width=320, schema=DEFAULT_SCHEMA):
    """Read, resize and annotate every video of one split."""
    loaded = []
    seen = AnnotationSet()
    for entry in read_split_manifest(manifest_path):
        if entry.split != split:
            continue
        video = read_raw_video(entry.video_path)
        video_id, annotations = read_annotation_file(entry.annotation_path, schema, video.frame_count)
        seen.add(video_id, annotations, video.frame_count)
        width = min(resize_width, video.width)
        loaded.append(LoadedVideo(video_id, resize_video(video, width), annotations))
    logger.info(f"Loaded {len(loaded)} {split} videos from {manifest_path}")
    return loaded


@dataclass(frozen=True)
class ClipItem:
    video_id: str
    begin: int
    end: int
    label: int


class ClipDataset:
    """
    Labelled intervals over resized videos, served as fixed-length clips.

    Positives come from annotations; negatives are mined per video.
    """

    def __init__(self, videos, items, clip_length=CLIP_LENGTH, jitter=0):
        self.videos = {loaded.video_id: loaded.video for loaded in videos}
        self.items = list(items)
        self.clip_length = clip_length
        self.jitter = jitter

    @classmethod
    def from_videos(cls, videos, label_map, clip_length=CLIP_LENGTH, jitter=0, negatives_per_video=0, seed=0):
        items = []
        for position, loaded in enumerate(videos):
            for annotation in loaded.annotations:
                items.append(ClipItem(loaded.video_id, annotation.begin, annotation.end,
                                      label_map.index(annotation.label)))
            if negatives_per_video:
                negatives = mine_negative_segments(
                    loaded.video.frame_count, loaded.annotations, negatives_per_video,
                    min_gap=clip_length, seed=[seed, position],
                )
                items += [
                    ClipItem(loaded.video_id, n.begin, n.end, label_map.negative_index) for n in negatives
                ]
        return cls(videos, items, clip_length, jitter)

    def __len__(self):
        return len(self.items)

    @property
    def labels(self):
        return np.array([item.label for item in self.items], dtype=np.int64)

    def centred_clip(self, index):
        item = self.items[index]
        return extract_clip(self.videos[item.video_id], item, 0, self.clip_length, item.label, item.video_id)

    def training_clip(self, index, rng):
        """Jittered and augmented clip; draws from rng in a fixed order."""
        item = self.items[index]
        shift = int(rng.integers(-self.jitter, self.jitter + 1)) if self.jitter else 0
        clip = extract_clip(self.videos[item.video_id], item, shift, self.clip_length, item.label, item.video_id)
        return augment_clip(clip, int(rng.integers(0, 2**32)))

    def batch(self, indices, rng=None):
        """Stack clips into (B, 3, L, H, W) plus their labels; rng switches on augmentation."""
        if rng is None:
            clips = [self.centred_clip(i) for i in indices]
        else:
            clips = [self.training_clip(i, rng) for i in indices]
        return np.stack([clip.tensor for clip in clips]), [clip.label for clip in clips]

    def input_shape(self):
        clip = self.centred_clip(0)
        return clip.tensor.shape
