"""Dense backbone, class-center matrix and quality-regression head.

The whole trainable system lives in :class:`ModelState`, whose parameters
are an ordered dict of float64 arrays. Forward and backward passes are
written out by hand; the finite-difference checks live in the test suite.
"""

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import ConfigError, DimensionError
from .geometry import l2_normalize

ACTIVATIONS = ("relu", "tanh")
HEAD_INPUTS = ("raw", "normalized")
EMBEDDING_NORMS = ("none", "batch")
BUFFER_NAMES = ("running_mean", "running_var")
BN_EPS = 1e-5
BN_MOMENTUM = 0.1

CHECKPOINT_MAGIC = b"CRFQ"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class BackboneConfig:
    input_dim: int
    embedding_dim: int
    hidden_dims: tuple = ()
    activation: str = "relu"
    head_input: str = "raw"
    hidden_bias: bool = True
    embedding_bias: bool = False
    embedding_norm: str = "none"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or self.embedding_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise ConfigError("layer sizes must be positive")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}")
        if self.head_input not in HEAD_INPUTS:
            raise ConfigError(f"head_input must be one of {HEAD_INPUTS}")
        if self.embedding_norm not in EMBEDDING_NORMS:
            raise ConfigError(f"embedding_norm must be one of {EMBEDDING_NORMS}")

    @property
    def layer_dims(self):
        return (self.input_dim, *self.hidden_dims, self.embedding_dim)


@dataclass
class ModelState:
    config: BackboneConfig
    n_classes: int
    params: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)

    @property
    def n_layers(self):
        return len(self.config.layer_dims) - 1

    @property
    def centers(self):
        return self.params["centers"]

    @property
    def head_weight(self):
        return self.params["head_weight"]

    @property
    def head_bias(self):
        return float(self.params["head_bias"][0])

    def backbone_keys(self):
        return [k for i in range(self.n_layers) for k in (f"W{i}", f"b{i}") if k in self.params]

    def copy(self):
        return ModelState(self.config, self.n_classes,
                          {k: v.copy() for k, v in self.params.items()},
                          {k: v.copy() for k, v in self.buffers.items()})

    def tensors(self):
        """Parameters followed by buffers, in checkpoint order."""
        return {**self.params, **self.buffers}

    def digest(self, keys=None):
        """SHA-256 over the raw bytes of the selected parameters and buffers."""
        tensors = self.tensors()
        h = hashlib.sha256()
        for k in keys if keys is not None else tensors:
            h.update(k.encode())
            h.update(np.ascontiguousarray(tensors[k]).tobytes())
        return h.hexdigest()

    def update_running_stats(self, cache):
        """Fold the batch statistics of a training forward pass into the buffers."""
        if "bn_mean" not in cache:
            return
        m = cache["pre_norm"].shape[0]
        unbiased = cache["bn_var"] * m / max(m - 1, 1)
        b = self.buffers
        b["running_mean"] = (1 - BN_MOMENTUM) * b["running_mean"] + BN_MOMENTUM * cache["bn_mean"]
        b["running_var"] = (1 - BN_MOMENTUM) * b["running_var"] + BN_MOMENTUM * unbiased


def init_state(config, n_classes, seed=0):
    """Seeded initialization.

    Backbone weights and centers are uniform in ``±1/sqrt(fan_in)``, biases
    and the quality head start at zero, and centers are normalized.
    """
    if n_classes < 2:
        raise ConfigError("need at least 2 classes")
    rng = np.random.default_rng(seed)
    dims = config.layer_dims
    params = {}
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        params[f"W{i}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        last = i == len(dims) - 2
        if (config.embedding_bias if last else config.hidden_bias):
            params[f"b{i}"] = np.zeros(fan_out)
    d = config.embedding_dim
    centers = rng.uniform(-1.0 / np.sqrt(d), 1.0 / np.sqrt(d), size=(d, n_classes))
    params["centers"] = centers / np.linalg.norm(centers, axis=0)
    params["head_weight"] = np.zeros(d)
    params["head_bias"] = np.zeros(1)
    buffers = {}
    if config.embedding_norm == "batch":
        buffers = {"running_mean": np.zeros(d), "running_var": np.ones(d)}
    return ModelState(config, int(n_classes), params, buffers)


def _activate(kind, a):
    return np.maximum(a, 0.0) if kind == "relu" else np.tanh(a)


def _activate_grad(kind, a, h):
    return (a > 0).astype(np.float64) if kind == "relu" else 1.0 - h * h


def _normalize_rows(e):
    norm = np.linalg.norm(e, axis=1, keepdims=True)
    return e / norm, norm


def _normalize_backward(unit, norm, d_unit):
    return (d_unit - unit * np.sum(unit * d_unit, axis=1, keepdims=True)) / norm


def forward_batch(state, inputs, training=False):
    """Forward pass over an ``(M, input_dim)`` batch.

    With ``embedding_norm="batch"`` the last layer output is standardized per
    dimension (no learned scale or shift): by the batch statistics when
    ``training`` is set, by the running statistics otherwise.

    Returns:
      Dict with ``embedding``, ``normalized``, ``cosines``, ``quality`` and
      the intermediate activations needed by :func:`backward`.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    cfg = state.config
    if inputs.shape[1] != cfg.input_dim:
        raise DimensionError(f"expected input dim {cfg.input_dim}, got {inputs.shape[1]}")
    p = state.params
    hs, pre = [inputs], []
    h = inputs
    for i in range(state.n_layers):
        a = h @ p[f"W{i}"]
        if f"b{i}" in p:
            a = a + p[f"b{i}"]
        if i < state.n_layers - 1:
            pre.append(a)
            h = _activate(cfg.activation, a)
            hs.append(h)
        else:
            h = a
    extra = {}
    if cfg.embedding_norm == "batch":
        if training:
            if inputs.shape[0] < 2:
                raise ConfigError("batch normalization needs at least 2 samples per batch")
            mean, var = h.mean(axis=0), h.var(axis=0)
            extra = {"bn_mean": mean, "bn_var": var}
        else:
            mean, var = state.buffers["running_mean"], state.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        extra.update(pre_norm=h, bn_inv_std=inv_std, bn_training=training)
        h = (h - mean) * inv_std
    embedding = h
    if np.any(np.linalg.norm(embedding, axis=1) == 0):
        # a dead ReLU stack can emit exact zeros
        l2_normalize(embedding)
    normalized, emb_norm = _normalize_rows(embedding)
    w_unit, w_norm = _normalize_rows(p["centers"].T)
    raw_cos = normalized @ w_unit.T
    cosines = np.clip(raw_cos, -1.0, 1.0)
    head_in = embedding if cfg.head_input == "raw" else normalized
    quality = head_in @ p["head_weight"] + p["head_bias"][0]
    return {
        "inputs": inputs, "hs": hs, "pre": pre,
        "embedding": embedding, "normalized": normalized, "emb_norm": emb_norm,
        "w_unit": w_unit, "w_norm": w_norm, "raw_cos": raw_cos,
        "cosines": cosines, "quality": quality, **extra,
    }


def forward(state, x):
    """Single-sample forward pass.

    Returns:
      Tuple ``(embedding, normalized, cosines, quality)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError("forward expects a single input vector")
    out = forward_batch(state, x[None, :])
    return (out["embedding"][0], out["normalized"][0], out["cosines"][0],
            float(out["quality"][0]))


def predict_quality(state, inputs):
    """Quality score for every row of ``inputs``. No labels are involved."""
    return forward_batch(state, inputs)["quality"]


def embed(state, inputs):
    """Unit-norm embeddings for every row of ``inputs``."""
    return forward_batch(state, inputs)["normalized"]


def backward(state, cache, d_cosines=None, d_quality=None):
    """Gradients of a scalar loss given its derivative w.r.t. the outputs.

    Args:
      state: the model evaluated in ``cache``.
      cache: output of :func:`forward_batch`.
      d_cosines: ``(M, C)`` derivative w.r.t. the cosine matrix, or None.
      d_quality: ``(M,)`` derivative w.r.t. the quality outputs, or None.

    Returns:
      Dict with one gradient array per key of ``state.params``.
    """
    p = state.params
    cfg = state.config
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    d_emb = np.zeros_like(cache["embedding"])
    d_normalized = np.zeros_like(cache["normalized"])

    if d_cosines is not None:
        # clipping passes no gradient
        inside = np.abs(cache["raw_cos"]) <= 1.0
        g = np.where(inside, d_cosines, 0.0)
        d_normalized += g @ cache["w_unit"]
        d_w_unit = g.T @ cache["normalized"]
        grads["centers"] = _normalize_backward(cache["w_unit"], cache["w_norm"], d_w_unit).T

    if d_quality is not None:
        head_in = cache["embedding"] if cfg.head_input == "raw" else cache["normalized"]
        grads["head_weight"] = head_in.T @ d_quality
        grads["head_bias"] = np.array([d_quality.sum()])
        if cfg.head_input == "raw":
            d_emb += np.outer(d_quality, p["head_weight"])
        else:
            d_normalized += np.outer(d_quality, p["head_weight"])

    d_emb += _normalize_backward(cache["normalized"], cache["emb_norm"], d_normalized)

    d_h = d_emb
    if "bn_inv_std" in cache:
        if cache["bn_training"]:
            z = cache["embedding"]
            d_h = d_h - d_h.mean(axis=0) - z * np.mean(d_h * z, axis=0)
        d_h = d_h * cache["bn_inv_std"]
    for i in reversed(range(state.n_layers)):
        if i < state.n_layers - 1:
            d_h = d_h * _activate_grad(cfg.activation, cache["pre"][i], cache["hs"][i + 1])
        grads[f"W{i}"] = cache["hs"][i].T @ d_h
        if f"b{i}" in grads:
            grads[f"b{i}"] = d_h.sum(axis=0)
        if i > 0:
            d_h = d_h @ p[f"W{i}"].T
    return grads


# Checkpoint layout (all little-endian):
#   4 bytes   magic b"CRFQ"
#   u32       format version
#   u32       length L of the config block
#   L bytes   UTF-8 JSON: backbone config fields plus "n_classes"
#   u32       number of tensors T
#   T times:  (parameters, then batch-norm buffers if any)
#  u32 name length, name bytes (UTF-8), u32 ndim, ndim x u32 dims,
#             prod(dims) x f64 values in C order
# Tensors appear in declaration order: W0, b0, ..., centers, head_weight, head_bias,
# then running_mean, running_var.

def dumps_checkpoint(state):
    cfg = asdict(state.config)
    cfg["hidden_dims"] = list(cfg["hidden_dims"])
    cfg["n_classes"] = state.n_classes
    block = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tensors = state.tensors()
    out = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(block)), block,
           struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw)
        out.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(out)


def loads_checkpoint(data):
    if data[:4] != CHECKPOINT_MAGIC:
        raise ConfigError("not a checkpoint: bad magic")
    pos = 4

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, data, pos)
        pos += struct.calcsize(fmt)
        return vals

    version, block_len = take("<II")
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {version}")
    cfg = json.loads(data[pos:pos + block_len].decode("utf-8"))
    pos += block_len
    n_classes = cfg.pop("n_classes")
    config = BackboneConfig(**cfg)
    (n_tensors,) = take("<I")
    params, buffers = {}, {}
    for _ in range(n_tensors):
        (name_len,) = take("<I")
        name = data[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = take("<I")
        shape = take(f"<{ndim}I") if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape)
        pos += 8 * count
        (buffers if name in BUFFER_NAMES else params)[name] = arr.astype(np.float64)
    if pos != len(data):
        raise ConfigError("trailing bytes after checkpoint tensors")
    return ModelState(config, n_classes, params, buffers)


def save_checkpoint(state, path):
    with open(path, "wb") as fh:
        fh.write(dumps_checkpoint(state))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return loads_checkpoint(fh.read())
