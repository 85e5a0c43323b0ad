"""
Class-name <-> index mappings for the two label modes.
"""

from dataclasses import dataclass

from apps.core.exceptions import ConfigurationError, TargetIndexError
from apps.dataset.annotations import NEGATIVE_LABEL

LABEL_MODES = ("classification", "detection")
STROKE_LABEL = "stroke"


@dataclass(frozen=True)
class LabelMap:
    """Ordered class names; the negative class is always index 0."""

    names: tuple

    def __post_init__(self):
        if len(self.names) < 2:
            raise ConfigurationError(f"A label map needs at least 2 classes, got {list(self.names)}")
        if self.names[0] != NEGATIVE_LABEL:
            raise ConfigurationError(f"Class 0 must be {NEGATIVE_LABEL!r}, got {self.names[0]!r}")
        if len(set(self.names)) != len(self.names):
            raise ConfigurationError(f"Duplicate class names in {list(self.names)}")

    negative_index = 0

    @classmethod
    def classification(cls, moves):
        return cls((NEGATIVE_LABEL,) + tuple(sorted(set(moves) - {NEGATIVE_LABEL})))

    @classmethod
    def detection(cls):
        return cls((NEGATIVE_LABEL, STROKE_LABEL))

    @classmethod
    def for_mode(cls, mode, moves=()):
        if mode == "classification":
            return cls.classification(moves)
        if mode == "detection":
            return cls.detection()
        raise ConfigurationError(f"Unknown label mode {mode!r}; expected one of {LABEL_MODES}")

    @property
    def is_binary(self):
        return len(self.names) == 2

    def __len__(self):
        return len(self.names)

    def index(self, label):
        """Class index of an annotation label; any move maps to "stroke" in a binary map."""
        if label in self.names:
            return self.names.index(label)
        if self.names == (NEGATIVE_LABEL, STROKE_LABEL):
            return 1
        raise ConfigurationError(f"Label {label!r} is not one of {list(self.names)}")

    def name(self, index):
        if not 0 <= index < len(self.names):
            raise TargetIndexError(f"Class index {index} outside [0, {len(self.names)})")
        return self.names[index]

    def to_text(self):
        return "\n".join(self.names) + "\n"

    @classmethod
    def from_text(cls, text):
        return cls(tuple(line.strip() for line in text.splitlines() if line.strip()))
