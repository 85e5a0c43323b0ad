"""
Nesterov-momentum SGD with decoupled lookahead, as used for training.
"""

from apps.core.exceptions import ConfigurationError


def sgd_nesterov_step(params, lr, momentum, weight_decay):
    """
    Apply one Nesterov update to every parameter in place.

    Per parameter:
        g' = grad + weight_decay * theta
        v  = momentum * v + g'
        theta = theta - lr * (g' + momentum * v)

    Raises:
        ConfigurationError: lr is not positive
    """
    if not lr > 0:
        raise ConfigurationError(f"Learning rate must be positive, got {lr}")
    for param in params:
        step = param.grad + weight_decay * param.data
        param.velocity *= momentum
        param.velocity += step
        param.data -= lr * (step + momentum * param.velocity)


class NesterovSGD:
    """Optimizer wrapper holding the mutable learning rate the plateau rule adjusts."""

    def __init__(self, params, lr, momentum=0.5, weight_decay=0.0):
        if not lr > 0:
            raise ConfigurationError(f"Learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay

    def zero_grad(self):
        for param in self.params:
            param.zero_grad()

    def step(self):
        sgd_nesterov_step(self.params, self.lr, self.momentum, self.weight_decay)
