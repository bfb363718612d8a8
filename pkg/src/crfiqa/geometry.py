"""Vector operations on the embedding hypersphere."""

import numpy as np

from .exceptions import DimensionError, NormalizationError


def l2_normalize(v):
    """Scale ``v`` to unit L2 norm.

    Accepts a single vector or a 2-D array of row vectors.

    Raises:
      NormalizationError: if any vector has zero norm.
    """
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norm == 0) or not np.all(np.isfinite(norm)):
        raise NormalizationError("cannot normalize a zero or non-finite vector")
    return v / norm


def cosine_similarity(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise NormalizationError("cosine similarity of a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def pairwise_cosine(a, b):
    """Cosine similarity between every row of ``a`` and every row of ``b``."""
    a = l2_normalize(np.atleast_2d(a))
    b = l2_normalize(np.atleast_2d(b))
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    return np.clip(a @ b.T, -1.0, 1.0)


def cos_add_margin(cos_theta, m):
    """Return ``cos(theta + m)`` given ``cos(theta)``.

    Uses the angle-addition identity; no easy-margin fallback is applied
    when ``theta + m`` exceeds pi.
    """
    c = np.clip(np.asarray(cos_theta, dtype=np.float64), -1.0, 1.0)
    sin_theta = np.sqrt(np.maximum(1.0 - c * c, 0.0))
    out = c * np.cos(m) - sin_theta * np.sin(m)
    return float(out) if out.ndim == 0 else out


def cos_add_margin_grad(cos_theta, m):
    """Derivative of :func:`cos_add_margin` with respect to ``cos_theta``."""
    c = np.clip(np.asarray(cos_theta, dtype=np.float64), -1.0, 1.0)
    sin_theta = np.sqrt(np.maximum(1.0 - c * c, 0.0))
    # d/dc sqrt(1 - c^2) is unbounded at |c| = 1
    return np.cos(m) + c * np.sin(m) / np.maximum(sin_theta, 1e-12)
