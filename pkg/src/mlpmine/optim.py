"""Parameter update rules: vanilla mini-batch SGD and Adam.

Both mutate the parameter buffers in place.  Penalty gradients, when used,
are added onto the data gradients before the step (coupled weight decay),
see losses.accumulate_penalty_grad.
"""

from array import array
from dataclasses import dataclass

from .backend import kernels as K
from .errors import ParameterError, ShapeError


@dataclass
class SgdConfig:
    learning_rate: float

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise ParameterError("learning rate must be > 0, got %r" % self.learning_rate)


@dataclass
class AdamConfig:
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise ParameterError("learning rate must be > 0, got %r" % self.learning_rate)
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ParameterError("Adam betas must lie in [0, 1)")


class AdamState:
    """Per-parameter first/second moment buffers plus the shared timestep."""

    def __init__(self, params, config):
        self.config = config
        self.m = [array("d", bytes(8 * len(p))) for p in params]
        self.v = [array("d", bytes(8 * len(p))) for p in params]
        self.t = 0


def _check_aligned(params, grads):
    if len(params) != len(grads):
        raise ShapeError("%d parameter buffers vs %d gradients" % (len(params), len(grads)))
    for p, g in zip(params, grads):
        if len(p) != len(g):
            raise ShapeError("parameter size %d vs gradient size %d" % (len(p), len(g)))


def sgd_step(params, grads, cfg):
    """theta <- theta - lr * g, elementwise over every buffer."""
    _check_aligned(params, grads)
    for p, g in zip(params, grads):
        K.sgd_update(p, g, cfg.learning_rate, len(p))
    return params


def adam_step(params, grads, state):
    """Standard Adam with bias correction; epsilon sits outside the sqrt."""
    _check_aligned(params, grads)
    if len(params) != len(state.m):
        raise ShapeError("optimizer state tracks %d buffers, got %d" % (len(state.m), len(params)))
    cfg = state.config
    state.t += 1
    for p, g, m, v in zip(params, grads, state.m, state.v):
        K.adam_update(
            p, g, m, v, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon, state.t, len(p)
        )
    return params, state
