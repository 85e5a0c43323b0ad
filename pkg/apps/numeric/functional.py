"""
Layer operations with their backward rules.

Every operation takes and returns Tensors. When a Tape is active and an
input requires gradients, the operation records a TapeNode whose closure
maps the output gradient to input gradients.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from apps.core.exceptions import (
    ConfigurationError,
    DimensionError,
    DTypeError,
    NumericError,
    TargetIndexError,
)
from apps.numeric.autograd import TapeNode, active_tape
from apps.numeric.tensor import Tensor

# Upper bound on elements in one im2col block; conv3d processes output time in chunks below it
CONV_CHUNK_ELEMENTS = 1 << 24


def _check_same_dtype(*tensors):
    dtypes = {tensor.dtype for tensor in tensors}
    if len(dtypes) > 1:
        names = ", ".join(sorted(str(dtype) for dtype in dtypes))
        raise DTypeError(f"Tensor arithmetic needs identical dtypes, got {names}")


def _record(op, array, inputs, backward_fn):
    """Wrap an output array and, when recording, attach its tape node."""
    requires_grad = any(tensor.requires_grad for tensor in inputs)
    output = Tensor.wrap(array, requires_grad=requires_grad)
    tape = active_tape()
    if tape is not None and requires_grad:
        tape.record(TapeNode(op, tuple(inputs), output, backward_fn))
    return output


def _as_tensor(value, like):
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=like.dtype)


# =============================================================================
# CONVOLUTION
# =============================================================================


def _same_padding(kernel):
    return [((k - 1) // 2, (k - 1) // 2) for k in kernel]


def _time_chunk(windows_per_step):
    return max(1, CONV_CHUNK_ELEMENTS // max(1, windows_per_step))


def _correlate_same(x, weight):
    """Same-padded, stride-1 3D cross-correlation of (B,Cin,T,H,W) with (Cout,Cin,kT,kH,kW)."""
    batch, _, frames, height, width = x.shape
    kernel = weight.shape[2:]
    padded = np.pad(x, [(0, 0), (0, 0)] + _same_padding(kernel))
    windows = sliding_window_view(padded, kernel, axis=(2, 3, 4))
    out = np.empty((batch, weight.shape[0], frames, height, width), dtype=x.dtype)
    step = _time_chunk(batch * height * width * weight.shape[1] * int(np.prod(kernel)))
    for start in range(0, frames, step):
        stop = min(frames, start + step)
        block = np.tensordot(windows[:, :, start:stop], weight, axes=([1, 5, 6, 7], [1, 2, 3, 4]))
        out[:, :, start:stop] = block.transpose(0, 4, 1, 2, 3)
    return out


def _weight_gradient(x, grad, kernel):
    """d(loss)/d(weight) for _correlate_same, summed over batch and positions."""
    batch, _, frames, height, width = x.shape
    padded = np.pad(x, [(0, 0), (0, 0)] + _same_padding(kernel))
    windows = sliding_window_view(padded, kernel, axis=(2, 3, 4))
    total = np.zeros((grad.shape[1], x.shape[1]) + tuple(kernel), dtype=x.dtype)
    step = _time_chunk(batch * height * width * x.shape[1] * int(np.prod(kernel)))
    for start in range(0, frames, step):
        stop = min(frames, start + step)
        total += np.tensordot(grad[:, :, start:stop], windows[:, :, start:stop], axes=([0, 2, 3, 4], [0, 2, 3, 4]))
    return total


def conv3d(x, weight, bias):
    """
    Same-padded, stride-1 3D convolution.

    Args:
        x: Tensor (B, Cin, T, H, W)
        weight: Tensor (Cout, Cin, kT, kH, kW), odd kernel extents
        bias: Tensor (Cout,)

    Returns:
        Tensor (B, Cout, T, H, W)
    """
    _check_same_dtype(x, weight, bias)
    if x.ndim != 5 or weight.ndim != 5:
        raise DimensionError(f"conv3d expects 5-D input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise DimensionError(
            f"conv3d input has {x.shape[1]} channels but weight expects {weight.shape[1]}"
        )
    if bias.shape != (weight.shape[0],):
        raise DimensionError(f"conv3d bias shape {bias.shape} does not match {weight.shape[0]} filters")
    kernel = weight.shape[2:]
    if any(k % 2 == 0 for k in kernel):
        raise ConfigurationError(f"conv3d kernel extents must be odd, got {kernel}")

    out = _correlate_same(x.data, weight.data) + bias.data.reshape(1, -1, 1, 1, 1)

    def backward(grad):
        grad_x = None
        if x.requires_grad:
            flipped = np.ascontiguousarray(weight.data[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4))
            grad_x = _correlate_same(grad, flipped)
        grad_w = _weight_gradient(x.data, grad, kernel) if weight.requires_grad else None
        grad_b = grad.sum(axis=(0, 2, 3, 4)) if bias.requires_grad else None
        return grad_x, grad_w, grad_b

    return _record("conv3d", out, (x, weight, bias), backward)


# =============================================================================
# POOLING
# =============================================================================


def maxpool3d(x, window):
    """
    Non-overlapping 3D max pooling; trailing partial windows are discarded.

    Ties resolve to the first cell in row-major order over (pT, pH, pW).

    Args:
        x: Tensor (B, C, T, H, W)
        window: (pT, pH, pW)

    Returns:
        Tensor (B, C, T//pT, H//pH, W//pW)
    """
    if x.ndim != 5:
        raise DimensionError(f"maxpool3d expects 5-D input, got {x.shape}")
    window = tuple(int(p) for p in window)
    if len(window) != 3 or any(p < 1 for p in window):
        raise ConfigurationError(f"Pool window must be three extents >= 1, got {window}")
    batch, channels, frames, height, width = x.shape
    if any(p > dim for p, dim in zip(window, (frames, height, width))):
        raise DimensionError(f"Pool window {window} exceeds input extent {(frames, height, width)}")

    p_t, p_h, p_w = window
    out_t, out_h, out_w = frames // p_t, height // p_h, width // p_w
    cropped = x.data[:, :, : out_t * p_t, : out_h * p_h, : out_w * p_w]
    blocks = (
        cropped.reshape(batch, channels, out_t, p_t, out_h, p_h, out_w, p_w)
        .transpose(0, 1, 2, 4, 6, 3, 5, 7)
        .reshape(batch, channels, out_t, out_h, out_w, p_t * p_h * p_w)
    )
    argmax = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, argmax[..., None], axis=-1)[..., 0]

    def backward(grad):
        routed = np.zeros(blocks.shape, dtype=grad.dtype)
        np.put_along_axis(routed, argmax[..., None], grad[..., None], axis=-1)
        routed = (
            routed.reshape(batch, channels, out_t, out_h, out_w, p_t, p_h, p_w)
            .transpose(0, 1, 2, 5, 3, 6, 4, 7)
            .reshape(batch, channels, out_t * p_t, out_h * p_h, out_w * p_w)
        )
        grad_x = np.zeros(x.shape, dtype=grad.dtype)
        grad_x[:, :, : out_t * p_t, : out_h * p_h, : out_w * p_w] = routed
        return (grad_x,)

    return _record("maxpool3d", np.ascontiguousarray(out), (x,), backward)


# =============================================================================
# ATTENTION
# =============================================================================


def sigmoid(values):
    """Numerically stable logistic function on a numpy array."""
    return np.exp(-np.logaddexp(0, -values)).astype(values.dtype, copy=False)


def attention_block(x, mask_weight, mask_bias):
    """
    Residual multiplicative attention: x * (1 + sigmoid(1x1x1 conv over channels)).

    Args:
        x: Tensor (B, C, T, H, W)
        mask_weight: Tensor (1, C, 1, 1, 1)
        mask_bias: Tensor (1,)
    """
    _check_same_dtype(x, mask_weight, mask_bias)
    if x.ndim != 5:
        raise DimensionError(f"attention_block expects 5-D input, got {x.shape}")
    if mask_weight.shape != (1, x.shape[1], 1, 1, 1) or mask_bias.shape != (1,):
        raise DimensionError(
            f"attention mask parameters {mask_weight.shape}/{mask_bias.shape} "
            f"do not match {x.shape[1]} channels"
        )

    logits = (x.data * mask_weight.data).sum(axis=1, keepdims=True) + mask_bias.data[0]
    mask = sigmoid(logits)
    out = x.data * (1 + mask)

    def backward(grad):
        through_mask = (grad * x.data).sum(axis=1, keepdims=True) * mask * (1 - mask)
        grad_x = grad * (1 + mask) + through_mask * mask_weight.data
        grad_w = (through_mask * x.data).sum(axis=(0, 2, 3, 4)).reshape(mask_weight.shape)
        grad_b = np.array([through_mask.sum()], dtype=grad.dtype)
        return grad_x, grad_w, grad_b

    return _record("attention", out, (x, mask_weight, mask_bias), backward)


# =============================================================================
# DENSE LAYERS
# =============================================================================


def relu(x):
    out = np.maximum(x.data, 0)

    def backward(grad):
        return (grad * (x.data > 0),)

    return _record("relu", out, (x,), backward)


def flatten(x):
    """Collapse every axis after the batch axis."""
    out = x.data.reshape(x.shape[0], -1)

    def backward(grad):
        return (grad.reshape(x.shape),)

    return _record("flatten", out.copy(), (x,), backward)


def linear(x, weight, bias):
    """
    Affine map of rows: x @ weight.T + bias.

    Args:
        x: Tensor (B, F)
        weight: Tensor (O, F)
        bias: Tensor (O,)
    """
    _check_same_dtype(x, weight, bias)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear cannot map input {x.shape} with weight {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise DimensionError(f"linear bias shape {bias.shape} does not match {weight.shape[0]} outputs")

    out = x.data @ weight.data.T + bias.data

    def backward(grad):
        grad_x = grad @ weight.data if x.requires_grad else None
        return grad_x, grad.T @ x.data, grad.sum(axis=0)

    return _record("linear", out, (x, weight, bias), backward)


# =============================================================================
# ELEMENTWISE HELPERS
# =============================================================================


def mul(a, b):
    b = _as_tensor(b, a)
    _check_same_dtype(a, b)
    out = a.data * b.data

    def backward(grad):
        return _unbroadcast(grad * b.data, a.shape), _unbroadcast(grad * a.data, b.shape)

    return _record("mul", out, (a, b), backward)


def scale(x, factor):
    out = x.data * x.dtype.type(factor)

    def backward(grad):
        return (grad * x.dtype.type(factor),)

    return _record("scale", out, (x,), backward)


def sum_all(x):
    out = np.array(x.data.sum(), dtype=x.dtype)

    def backward(grad):
        return (np.broadcast_to(grad, x.shape).copy(),)

    return _record("sum", out, (x,), backward)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# =============================================================================
# SOFTMAX AND LOSS
# =============================================================================


def _softmax_array(logits):
    if not np.all(np.isfinite(logits)):
        raise NumericError("softmax received non-finite logits")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def softmax(logits):
    """Row-wise softmax with max-subtraction; not recorded on the tape."""
    if logits.ndim != 2:
        raise DimensionError(f"softmax expects (B, N) logits, got {logits.shape}")
    return Tensor.wrap(_softmax_array(logits.data))


def cross_entropy_loss(logits, targets):
    """
    Sum over the batch of -log softmax(logits_b)[target_b].

    Args:
        logits: Tensor (B, N)
        targets: sequence of B class indices in [0, N)

    Returns:
        scalar Tensor
    """
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy_loss expects (B, N) logits, got {logits.shape}")
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    batch, classes = logits.shape
    if targets.shape[0] != batch:
        raise DimensionError(f"Got {targets.shape[0]} targets for a batch of {batch}")
    if np.any(targets < 0) or np.any(targets >= classes):
        raise TargetIndexError(f"Targets {targets.tolist()} fall outside [0, {classes})")

    data = logits.data
    if not np.all(np.isfinite(data)):
        raise NumericError("cross_entropy_loss received non-finite logits")
    shifted = data - data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(batch)
    loss = np.array((log_norm - shifted[rows, targets]).sum(), dtype=logits.dtype)

    def backward(grad):
        probs = _softmax_array(data)
        probs[rows, targets] -= 1
        return (probs * grad,)

    return _record("cross_entropy", loss, (logits,), backward)
