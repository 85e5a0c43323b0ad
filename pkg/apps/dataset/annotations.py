"""
Stroke annotation XML reading and writing.

Documents look like:

    <video name="v1">
        <action begin="120" end="240" move="serve"/>
    </video>

Frame indices are inclusive. Attribute and element names are configurable
through AnnotationSchema; detection outputs reuse the format with an
extra score attribute.
"""

import logging
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from pathlib import Path
from xml.parsers import expat

from apps.core.exceptions import StrokeBenchError

logger = logging.getLogger(__name__)

DEFAULT_LABEL = "stroke"
NEGATIVE_LABEL = "negative"


class AnnotationParseError(StrokeBenchError, ValueError):
    """Exception raised for malformed or inconsistent annotation documents."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class AnnotationSchema:
    """Element and attribute names used in annotation documents."""

    root: str = "video"
    name: str = "name"
    element: str = "action"
    begin: str = "begin"
    end: str = "end"
    label: str = "move"
    score: str = "score"


DEFAULT_SCHEMA = AnnotationSchema()


@dataclass(frozen=True, order=True)
class StrokeAnnotation:
    """One labelled frame interval, both ends inclusive."""

    begin: int
    end: int
    label: str = DEFAULT_LABEL
    score: float = None

    @property
    def length(self):
        return self.end - self.begin + 1

    def overlaps(self, other):
        return self.begin <= other.end and other.begin <= self.end


def validate_annotations(annotations, frame_count=None, lines=None):
    """
    Sort annotations by begin and check bounds and pairwise disjointness.

    Raises:
        AnnotationParseError: begin > end, negative frames, frames past the
            video end, or overlapping intervals
    """
    lines = lines or {}
    ordered = sorted(annotations, key=lambda a: (a.begin, a.end))
    for annotation in ordered:
        line = lines.get(id(annotation))
        if annotation.begin < 0:
            raise AnnotationParseError(f"begin {annotation.begin} is negative", line)
        if annotation.begin > annotation.end:
            raise AnnotationParseError(f"begin {annotation.begin} is after end {annotation.end}", line)
        if frame_count is not None and annotation.end >= frame_count:
            raise AnnotationParseError(
                f"end {annotation.end} is past the last frame of a {frame_count}-frame video", line
            )
    for previous, current in zip(ordered, ordered[1:]):
        if current.overlaps(previous):
            raise AnnotationParseError(
                f"action ({current.begin},{current.end}) overlaps ({previous.begin},{previous.end})",
                lines.get(id(current)),
            )
    return ordered


class _AnnotationHandler:
    """Collects expat events, remembering the line of every action."""

    def __init__(self, parser, schema):
        self.parser = parser
        self.schema = schema
        self.depth = 0
        self.video_id = None
        self.annotations = []
        self.lines = {}

    def start(self, tag, attrs):
        line = self.parser.CurrentLineNumber
        self.depth += 1
        if self.depth == 1:
            if tag != self.schema.root:
                raise AnnotationParseError(f"root element is <{tag}>, expected <{self.schema.root}>", line)
            if self.schema.name not in attrs:
                raise AnnotationParseError(f"<{tag}> has no {self.schema.name!r} attribute", line)
            self.video_id = attrs[self.schema.name]
        elif self.depth == 2 and tag == self.schema.element:
            annotation = self._annotation(attrs, line)
            self.annotations.append(annotation)
            self.lines[id(annotation)] = line

    def end(self, tag):
        self.depth -= 1

    def _annotation(self, attrs, line):
        schema = self.schema
        values = {}
        for key in (schema.begin, schema.end):
            if key not in attrs:
                raise AnnotationParseError(f"<{schema.element}> has no {key!r} attribute", line)
            try:
                values[key] = int(attrs[key])
            except ValueError:
                raise AnnotationParseError(f"{key}={attrs[key]!r} is not an integer", line)
        score = None
        if schema.score in attrs:
            try:
                score = float(attrs[schema.score])
            except ValueError:
                raise AnnotationParseError(f"{schema.score}={attrs[schema.score]!r} is not a number", line)
        return StrokeAnnotation(
            begin=values[schema.begin],
            end=values[schema.end],
            label=attrs.get(schema.label, DEFAULT_LABEL),
            score=score,
        )


def parse_annotation_xml(document, schema=DEFAULT_SCHEMA, frame_count=None):
    """
    Parse one annotation document.

    Args:
        document: XML text
        schema: Element and attribute names
        frame_count: When given, annotations must end before this frame

    Returns:
        (video id, sorted StrokeAnnotation list)

    Raises:
        AnnotationParseError: with the offending line when known
    """
    parser = expat.ParserCreate()
    handler = _AnnotationHandler(parser, schema)
    parser.StartElementHandler = handler.start
    parser.EndElementHandler = handler.end
    try:
        parser.Parse(document, True)
    except expat.ExpatError as exc:
        raise AnnotationParseError(f"malformed XML: {expat.ErrorString(exc.code)}", exc.lineno) from exc
    if handler.video_id is None:
        raise AnnotationParseError("document has no root element")
    annotations = validate_annotations(handler.annotations, frame_count, handler.lines)
    return handler.video_id, annotations


def write_annotation_xml(video_id, segments, schema=DEFAULT_SCHEMA, label_names=None):
    """
    Render segments in the annotation schema.

    Segments only need begin, end and label attributes; a score (or
    confidence) attribute is written with 6 decimals when present.
    Integer labels are translated through label_names when given.
    """
    root = ET.Element(schema.root, {schema.name: str(video_id)})
    for segment in segments:
        label = segment.label
        if label_names is not None and not isinstance(label, str):
            label = label_names[label]
        attrs = {
            schema.begin: str(int(segment.begin)),
            schema.end: str(int(segment.end)),
            schema.label: str(label),
        }
        score = getattr(segment, "score", None)
        if score is None:
            score = getattr(segment, "confidence", None)
        if score is not None:
            attrs[schema.score] = f"{float(score):.6f}"
        ET.SubElement(root, schema.element, attrs)
    if len(root):
        ET.indent(root)
    return ET.tostring(root, encoding="unicode") + "\n"


def read_annotation_file(path, schema=DEFAULT_SCHEMA, frame_count=None):
    path = Path(path)
    try:
        document = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise AnnotationParseError(f"cannot read {path}: {exc}") from exc
    return parse_annotation_xml(document, schema, frame_count)


def write_annotation_file(path, video_id, segments, schema=DEFAULT_SCHEMA, label_names=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(write_annotation_xml(video_id, segments, schema, label_names), encoding="utf-8")
    return path


class AnnotationSet:
    """Annotations of several videos keyed by video id."""

    def __init__(self):
        self.videos = {}

    def add(self, video_id, annotations, frame_count=None):
        if video_id in self.videos:
            raise AnnotationParseError(f"video {video_id!r} is annotated twice")
        self.videos[video_id] = validate_annotations(annotations, frame_count)

    def __getitem__(self, video_id):
        return self.videos[video_id]

    def __iter__(self):
        return iter(self.videos.items())

    def __len__(self):
        return len(self.videos)

    def labels(self):
        """Distinct stroke labels, sorted."""
        return sorted({a.label for annotations in self.videos.values() for a in annotations})
