"""
Reverse-mode differentiation over a recorded tape.

Operations executed while a Tape is active append one TapeNode each, in
execution order. Walking the tape backwards is therefore a reverse
topological order of the DAG, and every node is visited exactly once.
"""

import threading

import numpy as np

from apps.core.exceptions import StateError
from apps.numeric.tensor import Param

_local = threading.local()


def active_tape():
    """The innermost tape being recorded on this thread, if any."""
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class TapeNode:
    """One recorded operation: inputs, the output it produced, and its backward rule."""

    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op, inputs, output, backward_fn):
        self.op = op
        self.inputs = inputs
        self.output = output
        # Maps the output gradient to one gradient (or None) per input
        self.backward_fn = backward_fn

    def __repr__(self):
        return f"TapeNode(op={self.op!r}, inputs={len(self.inputs)})"


class Tape:
    """
    Records a forward pass so gradients can be pulled back into parameters.

    Usage:
        with Tape() as tape:
            loss = cross_entropy_loss(model_forward(...), targets)
        tape.backward(loss)
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _local.stack.pop()
        return False

    def record(self, node):
        self.nodes.append(node)
        node.output.node = node

    def backward(self, loss):
        """
        Accumulate d(loss)/d(param) into every Param.grad reachable from loss.

        The tape is consumed: intermediate nodes are released afterwards.

        Raises:
            StateError: nothing was recorded, or loss was not produced on this tape
        """
        if not self.nodes:
            raise StateError("Backward called on a tape with no recorded forward pass")
        if loss.node is None or loss.node not in self.nodes:
            raise StateError("Loss tensor was not produced on this tape")
        if loss.data.size != 1:
            raise StateError(f"Backward needs a scalar loss, got shape {loss.shape}")

        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            grad = grads.pop(id(node.output), None)
            if grad is None:
                continue
            input_grads = node.backward_fn(grad)
            for tensor, input_grad in zip(node.inputs, input_grads):
                if input_grad is None or not tensor.requires_grad:
                    continue
                if isinstance(tensor, Param):
                    tensor.grad += input_grad
                elif id(tensor) in grads:
                    grads[id(tensor)] = grads[id(tensor)] + input_grad
                else:
                    grads[id(tensor)] = input_grad

        self.release()

    def release(self):
        """Drop recorded nodes and the forward values they hold."""
        for node in self.nodes:
            node.output.node = None
        self.nodes = []


class no_grad:
    """Suspend recording on this thread, e.g. for evaluation passes."""

    def __enter__(self):
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(None)
        return self

    def __exit__(self, exc_type, exc, tb):
        _local.stack.pop()
        return False
