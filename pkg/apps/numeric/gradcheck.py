"""
Finite-difference verification of recorded gradients.
"""

import logging

import numpy as np

from apps.core.exceptions import DTypeError
from apps.numeric.autograd import Tape

logger = logging.getLogger(__name__)


def gradient_check(forward, params, tolerance=1e-4, epsilon=1e-4, samples=None, seed=0):
    """
    Compare tape gradients against central finite differences.

    Args:
        forward: Callable returning a scalar loss Tensor computed from params
        params: Params to check; must be float64
        tolerance: Errors above this are logged as a warning
        epsilon: Finite-difference step
        samples: When set, check this many seeded random entries per parameter

    Returns:
        float: max over checked entries of |analytic - numeric| / max(|analytic|, |numeric|, 1e-12)
    """
    params = list(params)
    for param in params:
        if param.dtype != np.float64:
            raise DTypeError(f"Gradient checks need float64 parameters, {param.name!r} is {param.dtype}")
        param.zero_grad()

    with Tape() as tape:
        loss = forward()
    tape.backward(loss)
    analytic = [param.grad.copy() for param in params]

    rng = np.random.default_rng(seed)
    max_error = 0.0
    for param, grads in zip(params, analytic):
        flat = param.data.reshape(-1)
        indices = np.arange(flat.size)
        if samples is not None and samples < flat.size:
            indices = np.sort(rng.choice(flat.size, size=samples, replace=False))
        for index in indices:
            original = flat[index]
            flat[index] = original + epsilon
            plus = forward().item()
            flat[index] = original - epsilon
            minus = forward().item()
            flat[index] = original
            numeric = (plus - minus) / (2 * epsilon)
            exact = grads.reshape(-1)[index]
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-12)
            max_error = max(max_error, error)

    if max_error > tolerance:
        logger.warning(f"Gradient check error {max_error:.3e} exceeds tolerance {tolerance:.1e}")
    return max_error
