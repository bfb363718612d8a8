"""Additive angular margin softmax, Smooth-L1 regression and their weighted
sum, each returning the batch-mean value together with its gradient."""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, DimensionError, LabelError
from .geometry import cos_add_margin, cos_add_margin_grad


@dataclass(frozen=True)
class LossConfig:
    s: float = 64.0
    m: float = 0.5
    lam: float = 10.0
    beta: float = 1.0
    eps: float = 1e-9

    def __post_init__(self):
        if self.s <= 0:
            raise ConfigError("s must be positive")
        if self.m < 0:
            raise ConfigError("m must be non-negative")
        if self.lam < 0:
            raise ConfigError("lambda must be non-negative")
        if self.beta <= 0:
            raise ConfigError("beta must be positive")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")


@dataclass
class LossValue:
    """Batch-mean loss and the gradients of that mean.

    ``gradients`` maps the name of each differentiated input (``"cosines"``,
    ``"prediction"``) to an array of the same shape.
    """

    value: float
    gradients: dict = field(default_factory=dict)


def _check_labels(labels, n, n_classes):
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(np.mod(labels, 1) == 0):
            raise LabelError("labels must be integers")
        labels = labels.astype(np.int64)
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise LabelError(f"labels must lie in [0, {n_classes})")
    return labels


def arcface_logits(cosines, labels, s, m):
    """Scaled logits with the angular margin applied to the target column."""
    logits = s * cosines
    rows = np.arange(cosines.shape[0])
    logits[rows, labels] = s * cos_add_margin(cosines[rows, labels], m)
    return logits


def arcface_loss(cosines, labels, s=64.0, m=0.5):
    """ArcFace loss averaged over the batch.

    Args:
      cosines: ``(N, C)`` cosines between normalized embeddings and centers.
      labels: ``N`` integer class labels.
      s: logit scale.
      m: additive angular margin in radians.

    Returns:
      LossValue with ``gradients["cosines"]`` of shape ``(N, C)``.
    """
    cosines = np.clip(np.atleast_2d(np.asarray(cosines, dtype=np.float64)), -1.0, 1.0)
    n, n_classes = cosines.shape
    labels = _check_labels(labels, n, n_classes)
    rows = np.arange(n)

    logits = arcface_logits(cosines, labels, s, m)
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1)
    per_sample = np.log(total) - shifted[rows, labels]
    value = float(per_sample.sum() / n)

    d_logits = exp / total[:, None]
    d_logits[rows, labels] -= 1.0
    d_cos = s * d_logits
    d_cos[rows, labels] *= cos_add_margin_grad(cosines[rows, labels], m)
    return LossValue(value, {"cosines": d_cos / n})


def smooth_l1(prediction, target, beta=1.0):
    prediction = np.atleast_1d(np.asarray(prediction, dtype=np.float64))
    target = np.atleast_1d(np.asarray(target, dtype=np.float64))
    if prediction.shape != target.shape:
        raise DimensionError(f"shape mismatch: {prediction.shape} vs {target.shape}")
    if beta <= 0:
        raise ValueError("beta must be positive")
    n = prediction.shape[0]
    diff = target - prediction
    abs_diff = np.abs(diff)
    quadratic = abs_diff < beta
    per_sample = np.where(quadratic, 0.5 * diff * diff / beta, abs_diff - 0.5 * beta)
    grad = np.where(quadratic, -diff / beta, -np.sign(diff))
    return LossValue(float(per_sample.sum() / n), {"prediction": grad / n})


def combined_loss(arc, cr_reg, lam=10.0):
    """``arc + lam * cr_reg``; gradients are merged key by key."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    grads = {k: v.copy() for k, v in arc.gradients.items()}
    for k, v in cr_reg.gradients.items():
        grads[k] = grads[k] + lam * v if k in grads else lam * v
    return LossValue(arc.value + lam * cr_reg.value, grads)
