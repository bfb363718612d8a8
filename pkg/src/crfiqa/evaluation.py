"""Verification and quality-assessment metrics.

Conventions: a comparison is a non-match when ``score < threshold`` and a
false match when an impostor has ``score >= threshold``. ERC rejection acts
on genuine pairs only; the decision threshold is fixed once at rejection 0.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .exceptions import (ConfigError, ConstantInputError, DegenerateWeightsError,
                         EmptyScoresError, InsufficientPointsError, MissingIdError)
from .geometry import l2_normalize

DEFAULT_R_MAX = 0.95
DEFAULT_GRID_STEP = 0.01


@dataclass
class ErcCurve:
    fmr_target: float
    threshold: float
    reject_ratio: np.ndarray
    fnmr: np.ndarray
    auc: float

    @property
    def r_max(self):
        return float(self.reject_ratio[-1])

    @property
    def points(self):
        return list(zip(self.reject_ratio.tolist(), self.fnmr.tolist()))


def reject_grid(step=DEFAULT_GRID_STEP, r_max=DEFAULT_R_MAX):
    """Rejection ratios ``0, step, 2*step, ..., r_max`` rounded to 10 decimals."""
    if step <= 0:
        raise ConfigError("grid step must be positive")
    if not 0 < r_max < 1:
        raise ConfigError("r_max must lie in (0, 1)")
    n = int(math.floor(r_max / step + 1e-9))
    grid = np.round(np.arange(n + 1) * step, 10)
    if grid[-1] < r_max - 1e-12:
        grid = np.append(grid, r_max)
    return grid


def n_rejected(ratio, n):
    """Number of samples dropped at ``ratio``: ``ceil(ratio * n)``.

    A 1e-9 slack absorbs products such as ``0.07 * 100 = 7.000000000000001``.
    """
    return min(n, int(math.ceil(ratio * n - 1e-9)))


def comparison_scores(embeddings, pairs):
    """Cosine score of every pair.

    Args:
      embeddings: mapping from sample id to embedding vector.
      pairs: object with ``id_a`` and ``id_b`` sequences.

    Raises:
      MissingIdError: listing every id absent from ``embeddings``.
    """
    missing = {i for i in list(pairs.id_a) + list(pairs.id_b) if i not in embeddings}
    if missing:
        raise MissingIdError(missing)
    if len(pairs.id_a) == 0:
        return np.zeros(0)
    a = l2_normalize(np.stack([embeddings[i] for i in pairs.id_a]))
    b = l2_normalize(np.stack([embeddings[i] for i in pairs.id_b]))
    return np.clip(np.einsum("ij,ij->i", a, b), -1.0, 1.0)


def threshold_at_fmr(impostor_scores, fmr_target):
    """Smallest observed impostor score whose FMR does not exceed ``fmr_target``.

    When even the largest score admits too many false matches, the next
    float above it is returned, so that FMR is 0.
    """
    scores = np.sort(np.asarray(impostor_scores, dtype=np.float64))
    if scores.size == 0:
        raise EmptyScoresError("no impostor scores")
    if not 0 < fmr_target <= 1:
        raise ConfigError("fmr_target must lie in (0, 1]")
    n = scores.size
    unique = np.unique(scores)
    accepted = n - np.searchsorted(scores, unique, side="left")
    ok = np.flatnonzero(accepted <= fmr_target * n)
    if ok.size == 0:
        return float(np.nextafter(scores[-1], np.inf))
    return float(unique[ok[0]])


def fmr_at_threshold(impostor_scores, threshold):
    scores = np.asarray(impostor_scores, dtype=np.float64)
    if scores.size == 0:
        raise EmptyScoresError("no impostor scores")
    return float(np.count_nonzero(scores >= threshold) / scores.size)


def fnmr_at_threshold(genuine_scores, threshold):
    scores = np.asarray(genuine_scores, dtype=np.float64)
    if scores.size == 0:
        raise EmptyScoresError("no genuine scores")
    return float(np.count_nonzero(scores < threshold) / scores.size)


def pair_quality(quality_a, quality_b, rule="min"):
    """Combine two sample qualities into one pair quality."""
    if rule == "min":
        return np.minimum(quality_a, quality_b)
    if rule == "mean":
        return 0.5 * (np.asarray(quality_a) + np.asarray(quality_b))
    raise ConfigError(f"unknown pair quality rule {rule!r}")


TIE_RULES = ("order", "average")


def _kept_failures(fails, quality, k, ties):
    """Expected non-matches left after dropping the ``k`` lowest-quality pairs.

    ``fails`` and ``quality`` are sorted by ascending quality. With
    ``ties="average"`` a tied block cut by the rejection boundary loses the
    same fraction of each member, i.e. the mean over random tie orders.
    """
    if ties == "order" or k == 0:
        return float(np.count_nonzero(fails[k:]))
    lo = int(np.searchsorted(quality, quality[k], side="left"))
    hi = int(np.searchsorted(quality, quality[k], side="right"))
    block = np.count_nonzero(fails[lo:hi])
    return float(np.count_nonzero(fails[hi:])) + block / (hi - lo) * (hi - k)


def erc_curve(genuine_scores, genuine_quality, impostor_scores, fmr_target=1e-3,
              grid=None, recalibrate=False, impostor_quality=None, ties="order"):
    """Error-versus-reject curve.

    For each ratio ``r`` in ``grid`` the ``ceil(r * G)`` genuine pairs with
    the lowest quality (ties broken by pair order) are dropped and FNMR is
    recomputed on the rest at the threshold fixed from ``impostor_scores``.

    Args:
      genuine_scores: comparison scores of the G genuine pairs.
      genuine_quality: quality of each genuine pair.
      impostor_scores: comparison scores of impostor pairs.
      fmr_target: FMR at which the threshold is set.
      grid: ascending rejection ratios starting at 0; defaults to
        :func:`reject_grid`.
      recalibrate: re-derive the threshold at every ratio from the impostor
        pairs that survive the same quality-based rejection. Needs
        ``impostor_quality``. The curve's ``threshold`` stays the r=0 value.
      impostor_quality: quality of each impostor pair.
      ties: ``"order"`` breaks quality ties by pair order; ``"average"``
        rejects tied pairs fractionally, so a constant quality gives a flat
        curve.

    Returns:
      ErcCurve
    """
    genuine_scores = np.asarray(genuine_scores, dtype=np.float64)
    genuine_quality = np.asarray(genuine_quality, dtype=np.float64)
    if genuine_scores.size == 0:
        raise EmptyScoresError("no genuine scores")
    if genuine_quality.shape != genuine_scores.shape:
        raise ConfigError("one quality value per genuine pair required")
    if ties not in TIE_RULES:
        raise ConfigError(f"ties must be one of {TIE_RULES}")
    grid = reject_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    if grid.size == 0 or grid[0] != 0:
        raise ConfigError("reject grid must start at 0")
    if np.any(np.diff(grid) <= 0):
        raise ConfigError("reject grid must be strictly increasing")
    if grid[-1] >= 1:
        raise ConfigError("r_max must be < 1")

    threshold = threshold_at_fmr(impostor_scores, fmr_target)
    g = genuine_scores.size
    order = np.argsort(genuine_quality, kind="stable")
    sorted_scores, sorted_quality = genuine_scores[order], genuine_quality[order]
    fails = sorted_scores < threshold

    if recalibrate:
        if impostor_quality is None:
            raise ConfigError("recalibration needs impostor_quality")
        imp = np.asarray(impostor_scores, dtype=np.float64)
        imp_order = np.argsort(np.asarray(impostor_quality, dtype=np.float64), kind="stable")

    fnmr = np.empty(grid.size)
    for i, r in enumerate(grid):
        k = n_rejected(r, g)
        if k >= g:
            raise ConfigError("rejection ratio removes every genuine pair")
        if recalibrate:
            kept = imp[imp_order[n_rejected(r, imp.size):]]
            fails = sorted_scores < threshold_at_fmr(kept, fmr_target)
        fnmr[i] = _kept_failures(fails, sorted_quality, k, ties) / (g - k)
    curve = ErcCurve(float(fmr_target), threshold, grid, fnmr, 0.0)
    curve.auc = erc_auc(curve)
    return curve


def erc_auc(curve):
    """Trapezoidal area under the curve divided by its largest rejection ratio."""
    r = np.asarray(curve.reject_ratio, dtype=np.float64)
    f = np.asarray(curve.fnmr, dtype=np.float64)
    if r.size < 2:
        raise InsufficientPointsError("an ERC needs at least two points")
    # fsum is correctly rounded, so the value does not depend on summation order
    area = math.fsum((0.5 * (f[1:] + f[:-1]) * np.diff(r)).tolist())
    return area / float(r[-1])


def weighted_template_aggregate(embeddings, qualities):
    """Quality-weighted mean of ``embeddings``, normalized to unit length."""
    embeddings = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    qualities = np.asarray(qualities, dtype=np.float64)
    if embeddings.shape[0] == 0:
        raise DegenerateWeightsError("empty template")
    if qualities.shape != (embeddings.shape[0],):
        raise ConfigError("one quality per embedding required")
    if np.any(qualities < 0):
        raise ConfigError("qualities must be non-negative")
    total = qualities.sum()
    if total <= 0:
        raise DegenerateWeightsError("all template weights are zero")
    return l2_normalize(qualities @ embeddings / total)


@dataclass
class TemplateReport:
    fmr_target: float
    weighted_threshold: float
    weighted_fnmr: float
    baseline_threshold: float
    baseline_fnmr: float


def aggregate_templates(embeddings, qualities, templates):
    """Aggregate every template with :func:`weighted_template_aggregate`.

    Args:
      embeddings: mapping of sample id to embedding.
      qualities: mapping of sample id to quality, or None for uniform weights.
      templates: mapping of template id to a list of member sample ids.

    Returns:
      Dict of template id to unit-norm template embedding.
    """
    needed = {i for ids in templates.values() for i in ids}
    missing = {i for i in needed if i not in embeddings}
    if qualities is not None:
        missing |= {i for i in needed if i not in qualities}
    if missing:
        raise MissingIdError(missing)
    out = {}
    for t, ids in templates.items():
        if len(ids) == 0:
            raise DegenerateWeightsError(f"template {t} is empty")
        q = np.ones(len(ids)) if qualities is None else np.array([qualities[i] for i in ids])
        try:
            out[t] = weighted_template_aggregate(np.stack([embeddings[i] for i in ids]), q)
        except DegenerateWeightsError as exc:
            raise DegenerateWeightsError(f"template {t}: {exc}") from None
    return out


def template_verification(embeddings, qualities, templates, pairs, fmr_target=1e-2):
    """FNMR of template comparisons at a fixed FMR, quality-weighted vs uniform.

    Each condition sets its own threshold from its impostor template pairs.

    Args:
      pairs: template-level pair list (``id_a``, ``id_b``, ``genuine``).

    Returns:
      TemplateReport
    """
    genuine = np.asarray(pairs.genuine, dtype=bool)
    results = []
    for q in (qualities, None):
        agg = aggregate_templates(embeddings, q, templates)
        s = comparison_scores(agg, pairs)
        t = threshold_at_fmr(s[~genuine], fmr_target)
        results += [t, fnmr_at_threshold(s[genuine], t)]
    return TemplateReport(float(fmr_target), *results)


def spearman(a, b):
    """Spearman rank correlation with average ranks for ties."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ConfigError("spearman needs two 1-D arrays of equal length")
    if a.size < 3:
        raise ConfigError("spearman needs at least 3 values")
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise ConstantInputError("rank correlation of a constant input is undefined")
    ra = rankdata(a) - (a.size + 1) / 2
    rb = rankdata(b) - (b.size + 1) / 2
    return float(np.clip(ra @ rb / np.sqrt((ra @ ra) * (rb @ rb)), -1.0, 1.0))


def normalize_scores(scores):
    """Min-max scaling to [0, 1]; a constant input maps to 0.5."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise EmptyScoresError("no scores to normalize")
    lo, hi = s.min(), s.max()
    if hi == lo:
        return np.full_like(s, 0.5)
    return (s - lo) / (hi - lo)

