"""
Experiment configuration files.

An experiment file is INI-style UTF-8: `[section]` headers, `key = value`
lines and `#` comments. Every key is optional; command-line flags
override file values, which override the defaults below.
"""

import configparser
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

from apps.core.exceptions import ConfigurationError
from apps.dataset.labels import LABEL_MODES
from apps.dataset.synth import SynthConfig
from apps.detection.services import DetectionConfig
from apps.evaluation.metrics import DEFAULT_IOU_THRESHOLD
from apps.training.services import TrainConfig
from apps.zoo.networks import BUILDERS

logger = logging.getLogger(__name__)


class ExperimentConfigError(ConfigurationError):
    """Exception raised for unreadable or invalid experiment files."""

    def __init__(self, message, key=None, line=None):
        where = ""
        if line is not None:
            where += f"line {line}: "
        if key is not None:
            where += f"{key}: "
        super().__init__(where + message)
        self.key = key
        self.line = line


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    model: str = "v2"
    output_dir: Path = Path("runs")
    label_mode: str = "classification"
    dataset_dir: Path = None
    resize_width: int = 320
    clip_length: int = 96
    jitter: int = 8
    negatives_per_video: int = 4
    # empty = architecture default
    channel_plan: tuple = ()
    hidden_fc: int = 500
    spatial_pool_blocks: int = 2
    iou_threshold: float = DEFAULT_IOU_THRESHOLD
    train: TrainConfig = field(default_factory=TrainConfig)
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def require_dataset(self):
        """Dataset directory, which must exist."""
        if self.dataset_dir is None:
            raise ExperimentConfigError("no dataset directory configured", key="data.dataset_dir")
        if not Path(self.dataset_dir).is_dir():
            raise ExperimentConfigError(f"{self.dataset_dir} is not a directory", key="data.dataset_dir")
        return Path(self.dataset_dir)


# =============================================================================
# VALUE PARSERS
# =============================================================================


def _int(text):
    return int(text)


def _non_negative(text):
    value = int(text)
    if value < 0:
        raise ValueError(f"must be >= 0, got {value}")
    return value


def _positive(text):
    value = int(text)
    if value < 1:
        raise ValueError(f"must be >= 1, got {value}")
    return value


def _float(text):
    return float(text)


def _path(text):
    return Path(text) if text else None


def _int_list(text):
    return tuple(int(part) for part in text.split(",") if part.strip())


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {list(options)}, got {text!r}")
        return text
    return parse


def _probability(text):
    value = float(text)
    if not 0.0 < value <= 1.0:
        raise ValueError(f"must be in (0, 1], got {value}")
    return value


# section -> key -> parser; attribute paths follow the section layout
SCHEMA = {
    "experiment": {
        "seed": _int,
        "model": _choice(*BUILDERS),
        "output_dir": _path,
        "label_mode": _choice(*LABEL_MODES),
    },
    "data": {
        "dataset_dir": _path,
        "resize_width": _positive,
        "clip_length": _positive,
        "jitter": _non_negative,
        "negatives_per_video": _non_negative,
    },
    "model": {
        "channel_plan": _int_list,
        "hidden_fc": _positive,
        "spatial_pool_blocks": _non_negative,
    },
    "train": {
        "epochs": _int,
        "lr": _float,
        "momentum": _float,
        "weight_decay": _float,
        "batch_size": _int,
        "plateau_patience": _int,
        "plateau_factor": _float,
        "min_lr": _float,
    },
    "detection": {
        "mode": str,
        "fusion": str,
        "sigma": _float,
        "approach": str,
        "min_segment_length": _int,
        "proposal_length": _int,
        "iou_threshold": _probability,
    },
    "synth": {
        "num_classes": _int,
        "train_videos": _int,
        "validation_videos": _int,
        "test_videos": _int,
        "width": _int,
        "height": _int,
        "strokes_per_video": _int,
        "noise": _float,
    },
}

# Sections whose keys are fields of a nested config object
NESTED = {"train": TrainConfig, "detection": DetectionConfig, "synth": SynthConfig}


def _is_nested(section, key):
    return section in NESTED and key != "iou_threshold"


# =============================================================================
# PARSING
# =============================================================================

SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
KEY_RE = re.compile(r"^\s*([^#=\s][^=]*?)\s*=")


def _key_lines(text):
    """Line number of every section header and key, for error messages."""
    lines = {}
    section = None
    for number, line in enumerate(text.splitlines(), start=1):
        header = SECTION_RE.match(line)
        if header:
            section = header.group(1).strip()
            lines.setdefault((section, None), number)
            continue
        key = KEY_RE.match(line)
        if key and section is not None:
            lines.setdefault((section, key.group(1)), number)
    return lines


def _convert(section, key, raw, line=None):
    try:
        return SCHEMA[section][key](raw.strip())
    except ValueError as exc:
        raise ExperimentConfigError(str(exc), key=f"{section}.{key}", line=line) from exc


def _check_nested(section, key, value, line=None):
    """Validate one nested key on its own so errors name it."""
    try:
        NESTED[section](**{key: value})
    except ConfigurationError as exc:
        raise ExperimentConfigError(str(exc), key=f"{section}.{key}", line=line) from exc


def config_values(config):
    """Flat {(section, key): value} view of a config."""
    values = {}
    for section, keys in SCHEMA.items():
        for key in keys:
            owner = getattr(config, section) if _is_nested(section, key) else config
            values[(section, key)] = getattr(owner, key)
    return values


def _nested_config(section, values, lines, **extra):
    fields = {key: values[(section, key)] for key in SCHEMA[section] if _is_nested(section, key)}
    try:
        return NESTED[section](**fields, **extra)
    except ConfigurationError as exc:
        raise ExperimentConfigError(str(exc), key=section, line=lines.get((section, None))) from exc


def _assemble(values, lines):
    seed = values[("experiment", "seed")]
    return ExperimentConfig(
        **{key: values[(section, key)] for section in SCHEMA for key in SCHEMA[section]
           if not _is_nested(section, key)},
        train=_nested_config("train", values, lines, seed=seed),
        detection=_nested_config("detection", values, lines),
        synth=_nested_config("synth", values, lines, seed=seed),
    )


def apply_overrides(config, overrides, lines=None):
    """
    Return a copy of config with string values applied.

    Args:
        overrides: dict mapping (section, key) to the raw string value
        lines: Optional {(section, key): line number} for error messages
    """
    lines = lines or {}
    values = config_values(config)
    for (section, key), raw in overrides.items():
        line = lines.get((section, key))
        if section not in SCHEMA:
            raise ExperimentConfigError(f"unknown section [{section}]", key=section, line=lines.get((section, None)))
        if key not in SCHEMA[section]:
            raise ExperimentConfigError("unknown key", key=f"{section}.{key}", line=line)
        value = _convert(section, key, raw, line)
        if _is_nested(section, key):
            _check_nested(section, key, value, line)
        values[(section, key)] = value
    return _assemble(values, lines)


def parse_config_text(text):
    lines = _key_lines(text)
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",), empty_lines_in_values=False)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ExperimentConfigError(exc.message, line=getattr(exc, "lineno", None)) from exc
    overrides = {}
    for section in parser.sections():
        for key in parser[section]:
            overrides[(section, key)] = parser[section][key]
    return apply_overrides(ExperimentConfig(), overrides, lines)


def parse_config(path):
    """
    Read an experiment file; missing keys take their defaults.

    Raises:
        ExperimentConfigError: unreadable file, unknown section or key, or invalid value
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ExperimentConfigError(f"cannot read {path}: {exc}") from exc
    config = parse_config_text(text)
    logger.debug(f"Loaded experiment config from {path}")
    return config


def _render(value):
    if value is None:
        return ""
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(config):
    """INI text that parse_config_text reads back to an equal config."""
    values = config_values(config)
    blocks = []
    for section, keys in SCHEMA.items():
        body = "\n".join(f"{key} = {_render(values[(section, key)])}" for key in keys)
        blocks.append(f"[{section}]\n{body}\n")
    return "\n".join(blocks)


def config_snapshot(config):
    """JSON-ready nested dict of every setting."""
    snapshot = {}
    for (section, key), value in config_values(config).items():
        if isinstance(value, Path):
            value = str(value)
        elif isinstance(value, tuple):
            value = list(value)
        snapshot.setdefault(section, {})[key] = value
    return snapshot


