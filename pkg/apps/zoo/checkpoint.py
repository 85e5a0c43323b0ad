"""
Binary checkpoint files for trained models.

Layout (little-endian):
    b"STCK"                      magic
    u16                          format version (1)
    u32 + UTF-8 bytes            network description (NetworkSpec.to_text)
    float32 * n                  parameters in layer order
"""

import logging
import struct
from pathlib import Path

import numpy as np

from apps.core.exceptions import ConfigurationError, StrokeBenchError
from apps.numeric.tensor import Param
from apps.zoo.networks import Model, NetworkSpec, parameter_shapes

logger = logging.getLogger(__name__)

MAGIC = b"STCK"
VERSION = 1
_HEADER = struct.Struct("<4sH")
_LENGTH = struct.Struct("<I")
_FLOAT_LE = np.dtype("<f4")


class CheckpointError(StrokeBenchError, ValueError):
    """Exception raised for unreadable or mismatched checkpoint files."""
    pass


def encode_checkpoint(model):
    """Serialise a model to checkpoint bytes."""
    spec_bytes = model.spec.to_text().encode("utf-8")
    chunks = [_HEADER.pack(MAGIC, VERSION), _LENGTH.pack(len(spec_bytes)), spec_bytes]
    for param in model.params:
        chunks.append(np.ascontiguousarray(param.data, dtype=_FLOAT_LE).tobytes())
    return b"".join(chunks)


def save_checkpoint(model, path):
    """Write a model to path, creating parent directories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(model))
    logger.info(f"Saved {model.spec.name} checkpoint to {path}")
    return path


def decode_checkpoint(payload, expected=None, rng_seed=0):
    """
    Rebuild a model from checkpoint bytes.

    Args:
        payload: Checkpoint file contents
        expected: Optional NetworkSpec (or architecture name) the file must match
        rng_seed: Seed recorded on the returned model

    Raises:
        CheckpointError: bad magic or version, truncation, trailing bytes,
            or a spec that differs from `expected`
    """
    if len(payload) < _HEADER.size + _LENGTH.size:
        raise CheckpointError("Checkpoint is truncated before its header ends")
    magic, version = _HEADER.unpack_from(payload, 0)
    if magic != MAGIC:
        raise CheckpointError(f"Not a checkpoint file (magic {magic!r})")
    if version != VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {version}")

    offset = _HEADER.size
    (spec_length,) = _LENGTH.unpack_from(payload, offset)
    offset += _LENGTH.size
    if offset + spec_length > len(payload):
        raise CheckpointError("Checkpoint is truncated inside its network description")
    try:
        spec = NetworkSpec.from_text(payload[offset:offset + spec_length].decode("utf-8"))
        shapes = parameter_shapes(spec)
    except (UnicodeDecodeError, ConfigurationError) as exc:
        raise CheckpointError(f"Checkpoint network description is invalid: {exc}") from exc
    offset += spec_length

    if expected is not None:
        _check_expected(spec, expected)

    total = sum(int(np.prod(shape)) for _, shape in shapes)
    body = payload[offset:]
    if len(body) != total * _FLOAT_LE.itemsize:
        raise CheckpointError(
            f"Checkpoint holds {len(body)} parameter bytes, {spec.name} needs {total * _FLOAT_LE.itemsize}"
        )

    values = np.frombuffer(body, dtype=_FLOAT_LE)
    params = []
    position = 0
    for name, shape in shapes:
        size = int(np.prod(shape))
        params.append(Param(values[position:position + size].reshape(shape), name=name, dtype=np.float32))
        position += size
    return Model(spec, params, rng_seed)


def load_checkpoint(path, expected=None):
    """Read a checkpoint written by save_checkpoint."""
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"Cannot read checkpoint {path}: {exc}") from exc
    model = decode_checkpoint(payload, expected=expected)
    logger.info(f"Loaded {model.spec.name} checkpoint from {path}")
    return model


def _check_expected(spec, expected):
    if isinstance(expected, str):
        if spec.name != expected:
            raise CheckpointError(f"Checkpoint holds a {spec.name} network, expected {expected}")
        return
    if spec.to_text() != expected.to_text():
        raise CheckpointError(
            f"Checkpoint network ({spec.name}) does not match the expected {expected.name} description"
        )
