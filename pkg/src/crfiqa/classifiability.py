"""Class-center similarity (CCS), nearest negative similarity (NNCCS) and
the certainty ratio (CR) that combines them."""

from dataclasses import dataclass

import numpy as np

from .exceptions import (CRFIQAError, DimensionError, InsufficientClassesError,
                         LabelError)
from .geometry import cosine_similarity

DEFAULT_EPS = 1e-9


@dataclass(frozen=True)
class ClassifiabilityRecord:
    ccs: float
    nnccs: float
    cr: float
    label: int
    nearest_negative: int


def as_center_matrix(centers, atol=1e-9):
    """Validate a ``(d, C)`` matrix whose columns are unit-norm class centers."""
    centers = np.asarray(centers, dtype=np.float64)
    if centers.ndim != 2:
        raise DimensionError("centers must be a (d, C) matrix")
    if centers.shape[1] < 2:
        raise InsufficientClassesError(f"need at least 2 classes, got {centers.shape[1]}")
    norms = np.linalg.norm(centers, axis=0)
    if np.any(np.abs(norms - 1.0) > atol):
        raise DimensionError("class centers must have unit norm")
    return centers


def _check_label(label, n_classes):
    if not 0 <= int(label) < n_classes or int(label) != label:
        raise LabelError(f"label {label!r} outside [0, {n_classes})")
    return int(label)


def ccs(x, centers, label):
    centers = np.asarray(centers, dtype=np.float64)
    label = _check_label(label, centers.shape[1])
    return cosine_similarity(x, centers[:, label])


def nnccs(x, centers, label, return_index=False):
    """Largest cosine between ``x`` and any center other than ``label``.

    With ``return_index=True`` the index of that center is returned too.
    """
    centers = np.asarray(centers, dtype=np.float64)
    n_classes = centers.shape[1]
    if n_classes < 2:
        raise InsufficientClassesError(f"need at least 2 classes, got {n_classes}")
    label = _check_label(label, n_classes)
    best, best_j = -np.inf, -1
    for j in range(n_classes):
        if j == label:
            continue
        c = cosine_similarity(x, centers[:, j])
        if c > best:
            best, best_j = c, j
    return (best, best_j) if return_index else best


def certainty_ratio(ccs_value, nnccs_value, eps=DEFAULT_EPS):
    """``ccs / (nnccs + 1 + eps)``; works elementwise on arrays."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    # (nnccs + 1) first: exact at nnccs = -1, so the limit is exactly 1/eps
    return ccs_value / ((nnccs_value + 1.0) + eps)


def classifiability_from_cosines(cosines, labels, eps=DEFAULT_EPS):
    """Vectorized CCS/NNCCS/CR from an ``(N, C)`` cosine matrix.

    Returns:
      Tuple ``(ccs, nnccs, cr, nearest_negative)`` of length-N arrays.
    """
    cosines = np.asarray(cosines, dtype=np.float64)
    labels = np.asarray(labels)
    n, n_classes = cosines.shape
    if n_classes < 2:
        raise InsufficientClassesError(f"need at least 2 classes, got {n_classes}")
    rows = np.arange(n)
    ccs_values = cosines[rows, labels]
    negatives = cosines.copy()
    negatives[rows, labels] = -np.inf
    nearest = np.argmax(negatives, axis=1)
    nnccs_values = negatives[rows, nearest]
    return ccs_values, nnccs_values, certainty_ratio(ccs_values, nnccs_values, eps), nearest


def batch_classifiability(embeddings, labels, centers, eps=DEFAULT_EPS):
    """Per-sample :class:`ClassifiabilityRecord` for a batch of embeddings.

    Errors raised for an individual sample are re-raised with the sample
    index prepended to the message.
    """
    embeddings = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    centers = np.asarray(centers, dtype=np.float64)
    labels = list(labels)
    if len(labels) != embeddings.shape[0]:
        raise DimensionError("one label per embedding required")
    n_classes = centers.shape[1]
    if n_classes < 2:
        raise InsufficientClassesError(f"need at least 2 classes, got {n_classes}")
    if embeddings.shape[1] != centers.shape[0]:
        raise DimensionError(
            f"embedding dim {embeddings.shape[1]} != center dim {centers.shape[0]}")
    records = []
    for i, (x, y) in enumerate(zip(embeddings, labels)):
        try:
            c = ccs(x, centers, y)
            nn, j = nnccs(x, centers, y, return_index=True)
        except CRFIQAError as exc:
            raise type(exc)(f"sample {i}: {exc}") from exc
        records.append(ClassifiabilityRecord(c, nn, certainty_ratio(c, nn, eps), int(y), j))
    return records
