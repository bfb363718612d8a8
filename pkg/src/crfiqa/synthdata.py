"""Synthetic identities on the unit sphere with known per-sample quality.

Each class has a random prototype direction; a sample is the prototype plus
isotropic Gaussian noise of scale sigma, projected back onto the sphere.
Ground-truth quality is ``min(sigma) / sigma``.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, PairConstructionError
from .geometry import l2_normalize


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 20
    samples_per_class: int = 50
    input_dim: int = 32
    noise_levels: tuple = (0.05, 0.2, 0.5, 1.0)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "noise_levels", tuple(float(s) for s in self.noise_levels))
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.samples_per_class < 2:
            raise ConfigError("samples_per_class must be >= 2")
        if self.input_dim < 2:
            raise ConfigError("input_dim must be >= 2")
        levels = np.asarray(self.noise_levels)
        if levels.size == 0 or np.any(levels <= 0) or np.any(np.diff(levels) <= 0):
            raise ConfigError("noise_levels must be positive and strictly increasing")


@dataclass
class SyntheticDataset:
    """Column-oriented container; row ``i`` is the sample with id ``ids[i]``."""

    ids: np.ndarray
    inputs: np.ndarray
    labels: np.ndarray
    sigma: np.ndarray
    true_quality: np.ndarray
    prototypes: np.ndarray = None

    def __len__(self):
        return len(self.ids)

    def subset(self, mask_or_index):
        return SyntheticDataset(self.ids[mask_or_index], self.inputs[mask_or_index],
                                self.labels[mask_or_index], self.sigma[mask_or_index],
                                self.true_quality[mask_or_index], self.prototypes)


def generate(spec):
    """Draw the dataset described by ``spec``. Deterministic in ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    c, k, dim = spec.num_classes, spec.samples_per_class, spec.input_dim
    prototypes = l2_normalize(rng.standard_normal((c, dim)))
    noise = rng.standard_normal((c, k, dim))
    levels = np.asarray(spec.noise_levels)
    sigma = np.tile(levels[np.arange(k) % len(levels)], (c, 1))
    inputs = l2_normalize(prototypes[:, None, :] + sigma[..., None] * noise)
    labels = np.repeat(np.arange(c), k)
    sigma = sigma.reshape(-1)
    return SyntheticDataset(
        ids=np.arange(c * k),
        inputs=inputs.reshape(c * k, dim),
        labels=labels,
        sigma=sigma,
        true_quality=levels[0] / sigma,
        prototypes=prototypes,
    )


def split_holdout(dataset, fraction, seed=0):
    """Stratified split; ``fraction`` of every class goes to the held-out part.

    Returns:
      Tuple ``(train, holdout)``.
    """
    if not 0 < fraction < 1:
        raise ConfigError("holdout fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    held = np.zeros(len(dataset), dtype=bool)
    for label in np.unique(dataset.labels):
        members = np.flatnonzero(dataset.labels == label)
        n_held = max(1, int(round(fraction * len(members))))
        held[rng.choice(members, size=n_held, replace=False)] = True
    return dataset.subset(~held), dataset.subset(held)


@dataclass
class PairList:
    id_a: np.ndarray
    id_b: np.ndarray
    genuine: np.ndarray

    def __len__(self):
        return len(self.id_a)


def all_pairs(ids, labels):
    """Every unordered pair of distinct samples (n:n comparison)."""
    ids = np.asarray(ids)
    labels = np.asarray(labels)
    a, b = np.triu_indices(len(ids), k=1)
    return PairList(ids[a], ids[b], labels[a] == labels[b])


def make_pairs(samples, num_genuine, num_impostor, seed=0):
    """Sample distinct genuine and impostor pairs without replacement.

    ``samples`` is anything with ``ids`` and ``labels`` arrays, typically a
    :class:`SyntheticDataset`. Genuine pairs come first in the result.

    Raises:
      PairConstructionError: if fewer distinct pairs exist than requested.
    """
    if num_genuine < 0 or num_impostor < 0:
        raise PairConstructionError("pair counts must be non-negative")
    full = all_pairs(samples.ids, samples.labels)
    gen_idx = np.flatnonzero(full.genuine)
    imp_idx = np.flatnonzero(~full.genuine)
    if num_genuine > len(gen_idx):
        raise PairConstructionError(
            f"requested {num_genuine} genuine pairs, only {len(gen_idx)} exist")
    if num_impostor > len(imp_idx):
        raise PairConstructionError(
            f"requested {num_impostor} impostor pairs, only {len(imp_idx)} exist")
    rng = np.random.default_rng(seed)
    chosen = np.concatenate([np.sort(rng.choice(gen_idx, num_genuine, replace=False)),
                             np.sort(rng.choice(imp_idx, num_impostor, replace=False))])
    return PairList(full.id_a[chosen], full.id_b[chosen], full.genuine[chosen])


def make_templates(dataset, template_size, seed=0):
    """Group each identity's samples into disjoint templates of ``template_size``.

    Leftover samples that do not fill a template are dropped.

    Returns:
      Tuple ``(template_ids, template_labels, members)`` where ``members[t]``
      lists the sample ids of template ``t``.
    """
    if template_size < 1:
        raise ConfigError("template_size must be positive")
    rng = np.random.default_rng(seed)
    members, labels = [], []
    for label in np.unique(dataset.labels):
        ids = rng.permutation(dataset.ids[dataset.labels == label])
        for start in range(0, len(ids) - template_size + 1, template_size):
            members.append(ids[start:start + template_size])
            labels.append(int(label))
    return np.arange(len(members)), np.asarray(labels), members
