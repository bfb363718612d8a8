"""Independent reference implementations used only by the tests.

Everything here is written as plainly as possible (scalar loops, ``math``
instead of numpy where practical) so it shares no code paths with the
library it checks.
"""

import math

import numpy as np


def central_difference(f, x, h=1e-5):
    """Gradient of scalar ``f`` at array ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        up = f(x)
        x[idx] = old - h
        down = f(x)
        x[idx] = old
        grad[idx] = (up - down) / (2 * h)
    return grad


def relative_error(analytic, numeric):
    """Norm-wise relative error between two gradient arrays."""
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / scale)


def arcface_scalar(cosines, labels, s, m):
    """Margin softmax loss by its textbook definition, one sample at a time."""
    total = 0.0
    for row, y in zip(cosines, labels):
        theta = math.acos(max(-1.0, min(1.0, row[y])))
        logits = [s * c for c in row]
        logits[y] = s * math.cos(theta + m)
        top = max(logits)
        lse = top + math.log(sum(math.exp(z - top) for z in logits))
        total += lse - logits[y]
    return total / len(labels)


def softmax_cross_entropy(logits, labels):
    total = 0.0
    for row, y in zip(logits, labels):
        top = max(row)
        total += top + math.log(sum(math.exp(z - top) for z in row)) - row[y]
    return total / len(labels)


def smooth_l1_scalar(prediction, target, beta):
    total = 0.0
    for p, t in zip(prediction, target):
        d = abs(t - p)
        total += 0.5 * d * d / beta if d < beta else d - 0.5 * beta
    return total / len(prediction)


def classifiability_brute(x, centers, label, eps):
    """CCS, NNCCS, CR and nearest-negative index by a loop over all centers."""
    def cos(a, b):
        dot = sum(p * q for p, q in zip(a, b))
        na = math.sqrt(sum(p * p for p in a))
        nb = math.sqrt(sum(q * q for q in b))
        return max(-1.0, min(1.0, dot / (na * nb)))

    cols = [centers[:, j] for j in range(centers.shape[1])]
    ccs = cos(x, cols[label])
    best, best_j = -2.0, -1
    for j, c in enumerate(cols):
        if j != label:
            v = cos(x, c)
            if v > best:
                best, best_j = v, j
    return ccs, best, ccs / ((best + 1.0) + eps), best_j


def threshold_brute(impostor, target):
    n = len(impostor)
    for t in sorted(set(impostor)):
        if sum(1 for s in impostor if s >= t) <= target * n:
            return t
    return math.inf


def erc_naive(genuine, quality, impostor, fmr_target, grid):
    """Error-versus-reject curve recomputed from scratch at every ratio."""
    t = threshold_brute(list(impostor), fmr_target)
    if t == math.inf:
        t = float(np.nextafter(max(impostor), np.inf))
    g = len(genuine)
    ranked = sorted(range(g), key=lambda i: (quality[i], i))
    fnmr = []
    for r in grid:
        k = min(g, math.ceil(r * g - 1e-9))
        kept = ranked[k:]
        fnmr.append(sum(1 for i in kept if genuine[i] < t) / len(kept))
    area = math.fsum(0.5 * (fnmr[i] + fnmr[i + 1]) * (grid[i + 1] - grid[i])
                     for i in range(len(grid) - 1))
    return t, fnmr, area / grid[-1]


def spearman_formula(a, b):
    """Rank correlation for tie-free data via 1 - 6 sum d^2 / (n (n^2 - 1))."""
    n = len(a)
    ra = {v: i for i, v in enumerate(sorted(a))}
    rb = {v: i for i, v in enumerate(sorted(b))}
    d2 = sum((ra[x] - rb[y]) ** 2 for x, y in zip(a, b))
    return 1 - 6 * d2 / (n * (n * n - 1))


def random_training_instance(rng, embedding_norm=None):
    """Small random model, batch and config for composite gradient checks.

    Uses tanh so that the objective is smooth at the evaluation point.
    """
    from crfiqa import BackboneConfig, LossConfig, TrainConfig, init_state

    d = int(rng.integers(2, 9))
    c = int(rng.integers(2, 6))
    n = int(rng.integers(2, 9))
    input_dim = int(rng.integers(2, 7))
    hidden = tuple(int(h) for h in rng.integers(2, 7, size=rng.integers(0, 3)))
    norm = embedding_norm or ("batch" if rng.random() < 0.5 else "none")
    head = "raw" if rng.random() < 0.5 else "normalized"
    cfg = BackboneConfig(input_dim, d, hidden, "tanh", head, hidden_bias=bool(rng.random() < 0.7),
                         embedding_norm=norm)
    state = init_state(cfg, c, seed=int(rng.integers(0, 2**31)))
    state.params["head_weight"] = rng.normal(0, 0.5, d)
    state.params["head_bias"] = rng.normal(0, 0.5, 1)
    for k in state.params:
        if k.startswith("b"):
            state.params[k] = rng.normal(0, 0.1, state.params[k].shape)
    inputs = rng.standard_normal((n, input_dim))
    labels = rng.integers(0, c, n)
    loss = LossConfig(s=float(rng.choice([8.0, 64.0])), m=float(rng.uniform(0, 0.5)),
                      lam=float(rng.uniform(0, 20)))
    train_cfg = TrainConfig(loss, batch_size=n, total_iterations=1, lr=1e-3, momentum=0.0,
                            weight_decay=float(rng.choice([0.0, 5e-4, 0.05])),
                            target_mode="cr" if rng.random() < 0.5 else "ccs")
    return state, inputs, labels, train_cfg


def composite_objective(state, inputs, labels, cfg, targets):
    """Combined loss plus the L2 penalty that weight decay corresponds to."""
    from crfiqa.trainer import loss_and_grads

    total = loss_and_grads(state, inputs, labels, cfg, targets=targets)[0].value
    penalty = sum(float(np.sum(v * v)) for v in state.params.values())
    return total + 0.5 * cfg.weight_decay * penalty


def composite_gradient_error(state, inputs, labels, cfg, h=1e-5):
    """Worst relative error between analytic and numeric composite gradients.

    Targets are frozen at their value in the unperturbed model, mirroring
    the stop-gradient of the training objective.
    """
    from crfiqa.trainer import loss_and_grads

    total, _, _, _, extras = loss_and_grads(state, inputs, labels, cfg)
    targets = extras["targets"]
    worst = 0.0
    for key, value in state.params.items():
        analytic = total.gradients[key] + cfg.weight_decay * value

        def f(v, key=key):
            probe = state.copy()
            probe.params[key] = v
            return composite_objective(probe, inputs, labels, cfg, targets)

        worst = max(worst, relative_error(analytic, central_difference(f, value, h)))
    return worst
