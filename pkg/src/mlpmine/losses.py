"""Softmax cross-entropy and L1/L2 weight penalties.

The penalty term is added to the loss at full strength (not divided by the
batch size) and covers affine weights only, never biases.  The L2 loss is
lambda * sum(theta^2), so its gradient carries the factor 2.
"""

import math
from array import array
from dataclasses import dataclass, field

from .backend import kernels as K
from .errors import DataError, ParameterError, ShapeError
from .linalg import DenseMatrix

PENALTY_KINDS = ("none", "L1", "L2")


@dataclass
class PenaltyConfig:
    kind: str = "none"
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise ParameterError("penalty kind must be one of %s, got %r" % (PENALTY_KINDS, self.kind))
        if self.lam < 0.0:
            raise ParameterError("penalty lambda must be >= 0, got %r" % self.lam)


@dataclass
class LossReport:
    data_loss: float
    penalty_loss: float
    total: float = field(init=False)

    def __post_init__(self):
        self.total = self.data_loss + self.penalty_loss


def softmax(logits):
    """Row-wise softmax, stabilized by per-row max subtraction."""
    out = DenseMatrix(logits.rows, logits.cols)
    K.softmax_rows(logits.data, out.data, logits.rows, logits.cols)
    return out


def _as_labels(targets, n_rows, n_classes):
    if isinstance(targets, DenseMatrix):
        if targets.shape != (n_rows, n_classes):
            raise ShapeError(
                "one-hot targets have shape %s, expected %s"
                % (targets.shape, (n_rows, n_classes))
            )
        labels = array("q", bytes(8 * n_rows))
        K.argmax_rows(targets.data, labels, n_rows, n_classes)
        return labels
    labels = array("q", targets)
    if len(labels) != n_rows:
        raise ShapeError("got %d labels for %d rows" % (len(labels), n_rows))
    return labels


def cross_entropy_softmax(logits, targets):
    """Mean cross-entropy of softmax(logits) and its gradient w.r.t. logits.

    targets may be an integer label sequence or a one-hot matrix.  Returns
    (loss, grad) with grad = (softmax - onehot) / batch_size.
    """
    m, n = logits.rows, logits.cols
    if m == 0:
        raise ParameterError("cross entropy over an empty batch")
    labels = _as_labels(targets, m, n)
    for t in labels:
        if not 0 <= t < n:
            raise DataError("label %d outside 0..%d" % (t, n - 1))
    probs = softmax(logits)
    grad = DenseMatrix(m, n)
    loss_sum = K.xent_from_probs(probs.data, labels, grad.data, m, n)
    return loss_sum / m, grad


def penalty_value(weights, cfg):
    """lambda * sum|theta| (L1) or lambda * sum theta^2 (L2) over all weights."""
    if cfg.kind == "none" or cfg.lam == 0.0:
        return 0.0
    total = 0.0
    for w in weights:
        if cfg.kind == "L1":
            total += K.abs_sum(w.data, len(w.data))
        else:
            total += K.sq_sum(w.data, len(w.data))
    return cfg.lam * total


def penalty_grad(weights, cfg):
    """Gradient matrices of penalty_value, one per weight matrix.

    L1 uses sign(theta) with sign(0) = 0; L2 gives 2 * lambda * theta.
    """
    grads = []
    for w in weights:
        g = DenseMatrix(w.rows, w.cols)
        if cfg.kind != "none" and cfg.lam != 0.0:
            accumulate_penalty_grad([g.data], [w.data], cfg)
        grads.append(g)
    return grads


def accumulate_penalty_grad(grad_buffers, weight_buffers, cfg):
    """Add the penalty gradient onto existing data-loss gradients, in place."""
    if cfg.kind == "none" or cfg.lam == 0.0:
        return
    for g, w in zip(grad_buffers, weight_buffers):
        if cfg.kind == "L1":
            K.add_sign_scaled(g, w, cfg.lam, len(w))
        else:
            K.add_scaled(g, w, 2.0 * cfg.lam, len(w))


def uniform_loss(n_classes):
    """Cross-entropy of a maximally uncertain prediction: ln(n_classes)."""
    return math.log(n_classes)
