"""
Dense tensors and trainable parameters.

A Tensor wraps a numpy array in row-major order. Values produced by
operations are read-only; only Param values are mutated, and only by the
optimizer.
"""

import numpy as np

from apps.core.exceptions import DTypeError

SUPPORTED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


def check_dtype(dtype):
    """Validate and normalise a tensor dtype."""
    dtype = np.dtype(dtype)
    if dtype not in SUPPORTED_DTYPES:
        raise DTypeError(f"Unsupported tensor dtype {dtype}; expected float32 or float64")
    return dtype


class Tensor:
    """N-dimensional float32/float64 array that can take part in a recorded tape."""

    def __init__(self, data, dtype=None, requires_grad=False):
        array = np.array(data, dtype=dtype if dtype is not None else np.float32, copy=True)
        check_dtype(array.dtype)
        array.flags.writeable = False
        self.data = array
        self.requires_grad = requires_grad
        self.node = None

    @classmethod
    def wrap(cls, array, requires_grad=False):
        """Adopt an operation's freshly computed array without copying."""
        tensor = cls.__new__(cls)
        array.flags.writeable = False
        tensor.data = array
        tensor.requires_grad = requires_grad
        tensor.node = None
        return tensor

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def sum(self):
        from apps.numeric.functional import sum_all

        return sum_all(self)

    def __mul__(self, other):
        from apps.numeric.functional import mul

        return mul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"


class Param(Tensor):
    """
    Trainable tensor with its gradient and Nesterov velocity buffers.

    value, grad and velocity always share one shape.
    """

    def __init__(self, value, name="", dtype=None):
        array = np.array(value, dtype=dtype if dtype is not None else np.float32, copy=True)
        check_dtype(array.dtype)
        self.data = array
        self.requires_grad = True
        self.node = None
        self.name = name
        self.grad = np.zeros_like(array)
        self.velocity = np.zeros_like(array)

    @property
    def value(self):
        return self.data

    def zero_grad(self):
        self.grad.fill(0)

    def astype(self, dtype):
        """Copy of this parameter (value and optimizer state) in another dtype."""
        copy = Param(self.data, name=self.name, dtype=dtype)
        copy.velocity = self.velocity.astype(copy.data.dtype)
        return copy

    def __repr__(self):
        return f"Param(name={self.name!r}, shape={self.shape}, dtype={self.dtype})"
