"""
V1 and V2 spatio-temporal attention networks.

Kernel and pool triples are stored time x height x width. A block is
conv (+ReLU) -> pool -> optional attention; the head is
flatten -> linear(hidden_fc) (+ReLU) -> linear(num_classes).
"""

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from apps.core.exceptions import ConfigurationError, DimensionError, StateError
from apps.numeric.autograd import active_tape, no_grad
from apps.numeric.functional import attention_block, conv3d, flatten, linear, maxpool3d, relu
from apps.numeric.tensor import Param, Tensor

logger = logging.getLogger(__name__)

LAYER_KINDS = ("conv", "pool", "attention", "flatten", "linear")

DEFAULT_INPUT_SHAPE = (3, 96, 180, 320)
DEFAULT_HIDDEN_FC = 500
DEFAULT_NUM_CLASSES = 21

DEFAULT_CHANNEL_PLANS = {
    "v1": (16, 32, 64, 128, 256, 256),
    "v2": (16, 32, 64, 128, 256),
}


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a network description."""

    kind: str
    kernel: tuple = None
    window: tuple = None
    channels_out: int = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigurationError(f"Unknown layer kind {self.kind!r}")
        if self.kind == "conv":
            if self.kernel is None or len(self.kernel) != 3 or any(k < 1 or k % 2 == 0 for k in self.kernel):
                raise ConfigurationError(f"Conv kernels must be three odd extents, got {self.kernel}")
        if self.kind == "pool":
            if self.window is None or len(self.window) != 3 or any(p < 1 for p in self.window):
                raise ConfigurationError(f"Pool windows must be three extents >= 1, got {self.window}")
        if self.kind in ("conv", "linear") and (self.channels_out is None or self.channels_out < 1):
            raise ConfigurationError(f"{self.kind} layers need a positive channels_out")

    def describe(self):
        if self.kind == "conv":
            return f"conv:{'x'.join(map(str, self.kernel))}:{self.channels_out}"
        if self.kind == "pool":
            return f"pool:{'x'.join(map(str, self.window))}"
        if self.kind == "linear":
            return f"linear:{self.channels_out}"
        return self.kind

    @classmethod
    def parse(cls, text):
        parts = text.split(":")
        kind = parts[0]
        try:
            if kind == "conv":
                return cls("conv", kernel=_triple(parts[1]), channels_out=int(parts[2]))
            if kind == "pool":
                return cls("pool", window=_triple(parts[1]))
            if kind == "linear":
                return cls("linear", channels_out=int(parts[1]))
        except (IndexError, ValueError) as exc:
            raise ConfigurationError(f"Malformed layer description {text!r}") from exc
        return cls(kind)


def _triple(text):
    values = tuple(int(part) for part in text.split("x"))
    if len(values) != 3:
        raise ValueError(text)
    return values


@dataclass
class NetworkSpec:
    """Declarative layer list plus input and head sizes."""

    name: str
    blocks: list
    input_shape: tuple = DEFAULT_INPUT_SHAPE
    hidden_fc: int = DEFAULT_HIDDEN_FC
    num_classes: int = DEFAULT_NUM_CLASSES

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        if len(self.input_shape) != 4:
            raise ConfigurationError(f"Input shape must be (C, T, H, W), got {self.input_shape}")
        if self.num_classes < 2:
            raise ConfigurationError(f"Networks need at least 2 classes, got {self.num_classes}")

    @property
    def attention_count(self):
        return sum(1 for layer in self.blocks if layer.kind == "attention")

    def to_text(self):
        """Serialise as documented key=value lines."""
        lines = [
            f"name={self.name}",
            f"input_shape={','.join(map(str, self.input_shape))}",
            f"hidden_fc={self.hidden_fc}",
            f"num_classes={self.num_classes}",
            f"layers={';'.join(layer.describe() for layer in self.blocks)}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        values = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigurationError(f"Malformed network description line {line!r}")
            values[key.strip()] = value.strip()
        try:
            return cls(
                name=values["name"],
                blocks=[LayerSpec.parse(item) for item in values["layers"].split(";") if item],
                input_shape=tuple(int(v) for v in values["input_shape"].split(",")),
                hidden_fc=int(values["hidden_fc"]),
                num_classes=int(values["num_classes"]),
            )
        except (KeyError, ValueError) as exc:
            raise ConfigurationError(f"Incomplete network description: {exc}") from exc


@dataclass(frozen=True)
class LayerShape:
    index: int
    kind: str
    shape: tuple


def infer_shapes(spec):
    """
    Propagate (C, T, H, W) through the layer list.

    Returns:
        list of LayerShape, one per layer, the last being (num_classes,)

    Raises:
        ConfigurationError: a layer would produce a non-positive extent
    """
    shape = spec.input_shape
    shapes = []
    for index, layer in enumerate(spec.blocks):
        if layer.kind == "conv":
            if len(shape) != 4:
                raise ConfigurationError(f"Layer {index} (conv) follows a flattened layer", layer_index=index)
            shape = (layer.channels_out,) + shape[1:]
        elif layer.kind == "pool":
            if len(shape) != 4:
                raise ConfigurationError(f"Layer {index} (pool) follows a flattened layer", layer_index=index)
            pooled = tuple(dim // p for dim, p in zip(shape[1:], layer.window))
            if any(dim < 1 for dim in pooled):
                raise ConfigurationError(
                    f"Layer {index} (pool {layer.window}) exceeds its input extent {shape[1:]}",
                    layer_index=index,
                )
            shape = (shape[0],) + pooled
        elif layer.kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif layer.kind == "linear":
            if len(shape) != 1:
                raise ConfigurationError(f"Layer {index} (linear) needs a flattened input", layer_index=index)
            shape = (layer.channels_out,)
        if any(dim < 1 for dim in shape):
            raise ConfigurationError(f"Layer {index} ({layer.kind}) yields non-positive shape {shape}", layer_index=index)
        shapes.append(LayerShape(index, layer.kind, shape))
    if not shapes or shapes[-1].shape != (spec.num_classes,):
        raise ConfigurationError(f"Network {spec.name} does not end in {spec.num_classes} outputs")
    return shapes


def feature_shape(spec):
    """Shape of the feature map fed to flatten."""
    shapes = infer_shapes(spec)
    for layer_shape in shapes:
        if layer_shape.kind == "flatten":
            return shapes[layer_shape.index - 1].shape if layer_shape.index else spec.input_shape
    raise ConfigurationError(f"Network {spec.name} has no flatten layer")


# =============================================================================
# ARCHITECTURE SCHEDULES
# =============================================================================


@dataclass(frozen=True)
class BlockPlan:
    kernel: tuple
    window: tuple
    attention: bool


def v1_schedule(spatial_pool_blocks=2):
    """Six 3x3x3 blocks; the first ones pool space only, the first four carry attention."""
    if not 0 <= spatial_pool_blocks <= 6:
        raise ConfigurationError(f"spatial_pool_blocks must be in [0, 6], got {spatial_pool_blocks}")
    return [
        BlockPlan((3, 3, 3), (1, 2, 2) if index < spatial_pool_blocks else (2, 2, 2), index < 4)
        for index in range(6)
    ]


def v2_schedule():
    """Five attention blocks; the first two use wide kernels and 2x3x4 pools for square maps."""
    return [BlockPlan((3, 5, 7), (2, 3, 4), True)] * 2 + [BlockPlan((3, 3, 3), (2, 2, 2), True)] * 3


def _assemble(name, schedule, input_shape, channel_plan, hidden_fc, num_classes):
    channel_plan = tuple(channel_plan) if channel_plan else DEFAULT_CHANNEL_PLANS[name]
    if len(channel_plan) > len(schedule):
        raise ConfigurationError(
            f"{name} has {len(schedule)} blocks but the channel plan lists {len(channel_plan)}"
        )
    layers = []
    for block, channels in zip(schedule, channel_plan):
        layers.append(LayerSpec("conv", kernel=block.kernel, channels_out=int(channels)))
        layers.append(LayerSpec("pool", window=block.window))
        if block.attention:
            layers.append(LayerSpec("attention"))
    layers += [
        LayerSpec("flatten"),
        LayerSpec("linear", channels_out=hidden_fc),
        LayerSpec("linear", channels_out=num_classes),
    ]
    return NetworkSpec(name, layers, input_shape, hidden_fc, num_classes)


def v1_spec(input_shape=DEFAULT_INPUT_SHAPE, channel_plan=None, num_classes=DEFAULT_NUM_CLASSES,
            hidden_fc=DEFAULT_HIDDEN_FC, spatial_pool_blocks=2):
    return _assemble("v1", v1_schedule(spatial_pool_blocks), input_shape, channel_plan, hidden_fc, num_classes)


def v2_spec(input_shape=DEFAULT_INPUT_SHAPE, channel_plan=None, num_classes=DEFAULT_NUM_CLASSES,
            hidden_fc=DEFAULT_HIDDEN_FC):
    return _assemble("v2", v2_schedule(), input_shape, channel_plan, hidden_fc, num_classes)


def build_v1(input_shape=DEFAULT_INPUT_SHAPE, channel_plan=None, num_classes=DEFAULT_NUM_CLASSES, seed=0,
             hidden_fc=DEFAULT_HIDDEN_FC, spatial_pool_blocks=2, dtype=np.float32):
    """Build a V1 model (conv+pool+attention x4, conv+pool x2)."""
    spec = v1_spec(input_shape, channel_plan, num_classes, hidden_fc, spatial_pool_blocks)
    return build_model(spec, seed=seed, dtype=dtype)


def build_v2(input_shape=DEFAULT_INPUT_SHAPE, channel_plan=None, num_classes=DEFAULT_NUM_CLASSES, seed=0,
             hidden_fc=DEFAULT_HIDDEN_FC, dtype=np.float32):
    """Build a V2 model (conv+pool+attention x5)."""
    spec = v2_spec(input_shape, channel_plan, num_classes, hidden_fc)
    return build_model(spec, seed=seed, dtype=dtype)


BUILDERS = {"v1": build_v1, "v2": build_v2}
SPEC_BUILDERS = {"v1": v1_spec, "v2": v2_spec}


# =============================================================================
# MODEL
# =============================================================================


def parameter_shapes(spec):
    """(name, shape) of every parameter, in layer order."""
    shapes = infer_shapes(spec)
    current = spec.input_shape
    result = []
    for layer, layer_shape in zip(spec.blocks, shapes):
        prefix = f"layer{layer_shape.index}.{layer.kind}"
        if layer.kind == "conv":
            result.append((f"{prefix}.weight", (layer.channels_out, current[0]) + tuple(layer.kernel)))
            result.append((f"{prefix}.bias", (layer.channels_out,)))
        elif layer.kind == "attention":
            result.append((f"{prefix}.mask_weight", (1, current[0], 1, 1, 1)))
            result.append((f"{prefix}.mask_bias", (1,)))
        elif layer.kind == "linear":
            result.append((f"{prefix}.weight", (layer.channels_out, current[0])))
            result.append((f"{prefix}.bias", (layer.channels_out,)))
        current = layer_shape.shape
    return result


def _fan_in(shape):
    return int(np.prod(shape[1:])) if len(shape) > 1 else 1


def build_model(spec, seed=0, dtype=np.float32):
    """
    Initialise parameters for a spec: weights ~ N(0, 2/fan_in), biases zero.
    """
    rng = np.random.default_rng(seed)
    params = []
    for name, shape in parameter_shapes(spec):
        if name.endswith("bias"):
            value = np.zeros(shape)
        else:
            value = rng.standard_normal(shape) * np.sqrt(2.0 / _fan_in(shape))
        params.append(Param(value, name=name, dtype=dtype))
    logger.debug(f"Built {spec.name} with {sum(p.data.size for p in params)} parameters")
    return Model(spec, params, seed)


@dataclass
class Model:
    """A NetworkSpec plus its parameters in layer order."""

    spec: NetworkSpec
    params: list
    rng_seed: int = 0
    metadata: dict = field(default_factory=dict)

    @property
    def dtype(self):
        return self.params[0].dtype if self.params else np.dtype(np.float32)

    @property
    def num_classes(self):
        return self.spec.num_classes

    @property
    def clip_length(self):
        return self.spec.input_shape[1]

    def zero_grad(self):
        for param in self.params:
            param.zero_grad()

    def copy(self):
        params = [Param(p.data, name=p.name, dtype=p.dtype) for p in self.params]
        return Model(self.spec, params, self.rng_seed, dict(self.metadata))

    def astype(self, dtype):
        return Model(self.spec, [p.astype(dtype) for p in self.params], self.rng_seed, dict(self.metadata))

    def load_values(self, other):
        """Overwrite parameter values with another model's (same spec)."""
        for mine, theirs in zip(self.params, other.params):
            mine.data[...] = theirs.data

    def fingerprint(self):
        """SHA-256 over parameter bytes; changes iff any parameter value changes."""
        digest = hashlib.sha256()
        for param in self.params:
            digest.update(np.ascontiguousarray(param.data).tobytes())
        return digest.hexdigest()

    def forward(self, batch):
        """Logits for a (B, C, T, H, W) batch, recorded on the active tape if any."""
        data = batch.data if isinstance(batch, Tensor) else np.asarray(batch)
        if data.ndim != 5 or tuple(data.shape[1:]) != self.spec.input_shape:
            raise DimensionError(
                f"Model {self.spec.name} expects (B,) + {self.spec.input_shape}, got {tuple(data.shape)}"
            )
        x = batch if isinstance(batch, Tensor) and batch.dtype == self.dtype else Tensor(data, dtype=self.dtype)

        params = iter(self.params)
        layers = self.spec.blocks
        last_linear = max(i for i, layer in enumerate(layers) if layer.kind == "linear")
        for index, layer in enumerate(layers):
            if layer.kind == "conv":
                x = relu(conv3d(x, next(params), next(params)))
            elif layer.kind == "pool":
                x = maxpool3d(x, layer.window)
            elif layer.kind == "attention":
                x = attention_block(x, next(params), next(params))
            elif layer.kind == "flatten":
                x = flatten(x)
            elif layer.kind == "linear":
                x = linear(x, next(params), next(params))
                if index != last_linear:
                    x = relu(x)
        return x


def model_forward(model, batch, record_tape=False):
    """
    Run the model on a batch.

    Args:
        record_tape: When True the pass is recorded on the active Tape (one
            must be open); when False nothing is recorded.

    Returns:
        Tensor (B, num_classes) of logits
    """
    if record_tape:
        if active_tape() is None:
            raise StateError("record_tape requested but no Tape is active")
        return model.forward(batch)
    with no_grad():
        return model.forward(batch)
