"""Joint training of the margin classifier and the quality head, plus the
on-top (frozen backbone) variant."""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .classifiability import classifiability_from_cosines
from .exceptions import ConfigError, DivergenceError, NormalizationError
from .losses import LossConfig, LossValue, arcface_loss, combined_loss, smooth_l1
from .model import backward, forward_batch

logger = logging.getLogger(__name__)

TARGET_MODES = ("cr", "ccs")
TRAINING_MODES = ("simultaneous", "on_top")
LOG_COLUMNS = ("iteration", "arc_loss", "cr_loss", "total_loss", "mean_ccs", "mean_nnccs")


@dataclass(frozen=True)
class TrainConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    batch_size: int = 64
    total_iterations: int = 5000
    lr: float = 0.1
    lr_milestones: tuple = None
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    target_mode: str = "cr"
    training_mode: str = "simultaneous"
    warmup_iterations: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.total_iterations < 0:
            raise ConfigError("total_iterations must be non-negative")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if self.target_mode not in TARGET_MODES:
            raise ConfigError(f"target_mode must be one of {TARGET_MODES}")
        if self.training_mode not in TRAINING_MODES:
            raise ConfigError(f"training_mode must be one of {TRAINING_MODES}")
        if self.warmup_iterations < 0:
            raise ConfigError("warmup_iterations must be non-negative")
        if self.lr_milestones is not None:
            object.__setattr__(self, "lr_milestones", tuple(int(m) for m in self.lr_milestones))

    @property
    def milestones(self):
        """Iterations at which the learning rate is divided by 10.

        Defaults to 62.5% and 87.5% of the budget (20K and 28K of 32K).
        """
        if self.lr_milestones is not None:
            return self.lr_milestones
        t = self.total_iterations
        return (int(0.625 * t), int(0.875 * t))

    def lr_at(self, iteration):
        drops = sum(1 for m in self.milestones if iteration >= m)
        lr = self.lr * 0.1 ** drops
        if iteration < self.warmup_iterations:
            lr *= (iteration + 1) / self.warmup_iterations
        return lr


@dataclass(frozen=True)
class StepReport:
    iteration: int
    arc_loss: float
    cr_loss: float
    total_loss: float
    mean_ccs: float
    mean_nnccs: float

    def as_row(self):
        return [self.iteration, self.arc_loss, self.cr_loss, self.total_loss,
                self.mean_ccs, self.mean_nnccs]


class SGD:
    """SGD with momentum and coupled weight decay.

    Same update rule as ``torch.optim.SGD``: ``v = mu * v + (g + wd * p)``,
    ``p -= lr * v``.
    """

    def __init__(self, momentum=0.9, weight_decay=5e-4):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {}

    def step(self, params, grads, lr, keys=None):
        for k in keys if keys is not None else params:
            g = grads[k] + self.weight_decay * params[k] if self.weight_decay else grads[k]
            if self.momentum:
                v = self.velocity.get(k)
                v = g.copy() if v is None else self.momentum * v + g
                self.velocity[k] = v
            else:
                v = g
            params[k] = params[k] - lr * v


def regression_targets(cosines, labels, loss_cfg, target_mode="cr"):
    """Detached regression targets plus CCS/NNCCS for reporting."""
    ccs, nnccs, cr, _ = classifiability_from_cosines(cosines, labels, loss_cfg.eps)
    target = cr if target_mode == "cr" else ccs
    return np.array(target, copy=True), ccs, nnccs


def loss_and_grads(state, inputs, labels, cfg, targets=None, objective="combined"):
    """Evaluate the training objective and its gradients.

    Args:
      state: current model.
      inputs: ``(N, input_dim)`` batch.
      labels: ``N`` class labels.
      cfg: TrainConfig.
      targets: fixed regression targets; computed from the current cosines
        when None. They never receive gradient either way.
      objective: ``"combined"``, ``"arcface"`` (margin loss only) or
        ``"regression"`` (quality loss only).

    Returns:
      Tuple ``(total LossValue, arc LossValue, cr LossValue, cache, extras)``
      where gradients of the total are keyed by parameter name and exclude
      weight decay.
    """
    lc = cfg.loss
    cache = forward_batch(state, inputs, training=True)
    labels = np.asarray(labels)
    computed, ccs, nnccs = regression_targets(cache["cosines"], labels, lc, cfg.target_mode)
    if targets is None:
        targets = computed

    arc = arcface_loss(cache["cosines"], labels, lc.s, lc.m)
    reg = smooth_l1(cache["quality"], targets, lc.beta)
    if objective == "combined":
        total = combined_loss(arc, reg, lc.lam)
        grads = backward(state, cache, total.gradients["cosines"], total.gradients["prediction"])
    elif objective == "arcface":
        total = LossValue(arc.value, dict(arc.gradients))
        grads = backward(state, cache, d_cosines=arc.gradients["cosines"])
    elif objective == "regression":
        total = LossValue(reg.value, dict(reg.gradients))
        grads = backward(state, cache, d_quality=reg.gradients["prediction"])
    else:
        raise ConfigError(f"unknown objective {objective!r}")
    total = LossValue(total.value, grads)
    return total, arc, reg, cache, {"ccs": ccs, "nnccs": nnccs, "targets": targets}


def train_step(state, batch, cfg, optimizer=None, iteration=0, objective="combined", keys=None):
    """One optimizer step, in place on ``state``.

    Centers are re-normalized and batch-norm running statistics updated
    after the update.

    Returns:
      Tuple ``(state, StepReport)``.
    """
    inputs, labels = batch
    if len(labels) == 0:
        raise ConfigError("empty batch")
    if optimizer is None:
        optimizer = SGD(cfg.momentum, cfg.weight_decay)
    try:
        total, arc, reg, cache, extras = loss_and_grads(state, inputs, labels, cfg,
                                                    objective=objective)
    except NormalizationError as exc:
        raise DivergenceError(iteration, f"degenerate embedding ({exc})") from exc
    if not np.isfinite(total.value):
        raise DivergenceError(iteration, total.value)
    optimizer.step(state.params, total.gradients, cfg.lr_at(iteration), keys)
    state.update_running_stats(cache)
    c = state.params["centers"]
    state.params["centers"] = c / np.linalg.norm(c, axis=0)
    for k, v in state.params.items():
        if not np.all(np.isfinite(v)):
            raise DivergenceError(iteration, f"non-finite parameter {k}")
    return state, StepReport(iteration, arc.value, reg.value, total.value,
                             float(np.mean(extras["ccs"])), float(np.mean(extras["nnccs"])))


def batch_indices(n_samples, batch_size, total_iterations, seed):
    """Yield index batches from a seeded shuffle, reshuffling every epoch.

    A trailing partial batch is dropped unless the dataset is smaller than
    one batch.
    """
    rng = np.random.default_rng(seed)
    size = min(batch_size, n_samples)
    perm, pos = rng.permutation(n_samples), 0
    for _ in range(total_iterations):
        if pos + size > n_samples:
            perm, pos = rng.permutation(n_samples), 0
        yield perm[pos:pos + size]
        pos += size


def _check_dataset(state, inputs, labels):
    inputs = np.asarray(inputs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if inputs.shape[0] != labels.shape[0]:
        raise ConfigError("inputs and labels differ in length")
    if labels.size and (labels.min() < 0 or labels.max() >= state.n_classes):
        raise ConfigError(f"labels must lie in [0, {state.n_classes})")
    return inputs, labels


def train(state, dataset, cfg, objective=None, log_every=0):
    """Run ``cfg.total_iterations`` steps on ``dataset = (inputs, labels)``.

    Args:
      state: initial model; updated in place and returned.
      dataset: tuple of ``(M, input_dim)`` inputs and ``M`` labels.
      cfg: TrainConfig.
      objective: defaults to ``"combined"``; ``"arcface"`` trains the
        recognition part only.
      log_every: emit an info log line every this many iterations.

    Returns:
      Tuple ``(state, reports)`` with one StepReport per iteration.
    """
    inputs, labels = _check_dataset(state, *dataset)
    objective = objective or "combined"
    optimizer = SGD(cfg.momentum, cfg.weight_decay)
    reports = []
    for it, idx in enumerate(batch_indices(len(labels), cfg.batch_size,
                                           cfg.total_iterations, cfg.seed)):
        state, report = train_step(state, (inputs[idx], labels[idx]), cfg, optimizer, it,
                                   objective)
        reports.append(report)
        if log_every and it % log_every == 0:
            logger.info("iter %d arc %.4f cr %.5f total %.4f ccs %.3f nnccs %.3f",
                        it, report.arc_loss, report.cr_loss, report.total_loss,
                        report.mean_ccs, report.mean_nnccs)
    return state, reports


def train_on_top(frozen, dataset, cfg):
    """Fit only the quality head against targets from a frozen model.

    Embeddings and targets are computed once; backbone and centers are not
    touched. Returns a new ModelState.
    """
    state = frozen.copy()
    inputs, labels = _check_dataset(state, *dataset)
    cache = forward_batch(state, inputs)
    targets, _, _ = regression_targets(cache["cosines"], labels, cfg.loss, cfg.target_mode)
    head_in = cache["embedding"] if state.config.head_input == "raw" else cache["normalized"]
    optimizer = SGD(cfg.momentum, cfg.weight_decay)
    keys = ("head_weight", "head_bias")
    for it, idx in enumerate(batch_indices(len(labels), cfg.batch_size,
                                           cfg.total_iterations, cfg.seed)):
        pred = head_in[idx] @ state.params["head_weight"] + state.params["head_bias"][0]
        reg = smooth_l1(pred, targets[idx], cfg.loss.beta)
        if not np.isfinite(reg.value):
            raise DivergenceError(it, reg.value)
        d = reg.gradients["prediction"]
        grads = {"head_weight": head_in[idx].T @ d, "head_bias": np.array([d.sum()])}
        optimizer.step(state.params, grads, cfg.lr_at(it), keys)
    return state


def write_log(reports, path, every=1):
    """Write the training log CSV, one row per ``every`` iterations."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for r in reports:
            if r.iteration % every == 0 or r.iteration == len(reports) - 1:
                writer.writerow([r.iteration] + [repr(float(v)) for v in r.as_row()[1:]])
