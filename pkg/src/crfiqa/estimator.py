"""scikit-learn style wrapper around model construction and training."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .classifiability import classifiability_from_cosines
from .exceptions import InsufficientClassesError, LabelError
from .losses import LossConfig
from .model import BackboneConfig, embed, forward_batch, init_state
from .trainer import TrainConfig, train, train_on_top


class CRFIQA(BaseEstimator, TransformerMixin):
    """Face-image-quality regressor trained on certainty-ratio targets.

    ``fit`` learns an embedding backbone with a margin softmax and a linear
    quality head; ``predict`` returns quality scores for unlabeled inputs and
    ``transform`` returns unit-norm embeddings.

    Args:
      hidden_dims: hidden layer widths of the backbone.
      embedding_dim: embedding size.
      activation: ``"relu"`` or ``"tanh"``.
      head_input: ``"raw"`` or ``"normalized"``; whether the quality head
        reads the embedding before or after normalization.
      hidden_bias: use biases in the hidden layers.
      embedding_norm: ``"batch"`` for per-dimension batch standardization
        of the embedding, ``"none"`` otherwise.
      scale: logit scale of the margin softmax.
      margin: additive angular margin in radians.
      lambda_: weight of the quality regression loss.
      beta: smooth-L1 transition point.
      eps: certainty-ratio stabilizer.
      target: regression target, ``"cr"`` or ``"ccs"``.
      mode: ``"simultaneous"``, or ``"on_top"`` to train the recognition
        part alone first and then fit the head against the frozen model.
      batch_size: mini-batch size.
      n_iter: number of optimizer steps.
      lr: initial learning rate.
      momentum: SGD momentum.
      weight_decay: L2 coefficient applied to every parameter.
      warmup: linear learning-rate warmup length in steps.
      random_state: seeds initialization and batch order.
    """

    def __init__(self, hidden_dims=(128, 128), embedding_dim=16, activation="relu",
                 head_input="raw", hidden_bias=True, embedding_norm="batch", scale=64.0,
                 margin=0.5, lambda_=10.0, beta=1.0, eps=1e-9, target="cr",
                 mode="simultaneous", batch_size=128, n_iter=5000, lr=0.03, momentum=0.9,
                 weight_decay=5e-4, warmup=0, random_state=0):
        self.hidden_dims = hidden_dims
        self.embedding_dim = embedding_dim
        self.activation = activation
        self.head_input = head_input
        self.hidden_bias = hidden_bias
        self.embedding_norm = embedding_norm
        self.scale = scale
        self.margin = margin
        self.lambda_ = lambda_
        self.beta = beta
        self.eps = eps
        self.target = target
        self.mode = mode
        self.batch_size = batch_size
        self.n_iter = n_iter
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.warmup = warmup
        self.random_state = random_state

    def _configs(self, n_features):
        backbone = BackboneConfig(n_features, self.embedding_dim, tuple(self.hidden_dims),
                                  self.activation, self.head_input, self.hidden_bias,
                                  embedding_norm=self.embedding_norm)
        loss = LossConfig(self.scale, self.margin, self.lambda_, self.beta, self.eps)
        train_cfg = TrainConfig(loss, self.batch_size, self.n_iter, self.lr, None,
                                self.momentum, self.weight_decay, self.random_state,
                                self.target, self.mode, self.warmup)
        return backbone, train_cfg

    def fit(self, X, y):
        """Train on inputs ``X`` with identity labels ``y``.

        Labels may be arbitrary hashable values; they are encoded to
        ``0..C-1`` in sorted order and kept in ``classes_``.
        """
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, codes = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise InsufficientClassesError("need at least 2 identities")
        backbone, cfg = self._configs(X.shape[1])
        state = init_state(backbone, len(self.classes_), seed=self.random_state)
        if cfg.training_mode == "on_top":
            state, self.reports_ = train(state, (X, codes), cfg, objective="arcface")
            state = train_on_top(state, (X, codes), cfg)
        else:
            state, self.reports_ = train(state, (X, codes), cfg)
        self.state_ = state
        self.n_features_in_ = X.shape[1]
        return self

    def _check(self, X):
        check_is_fitted(self, "state_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def predict(self, X):
        """Quality score of every row of ``X``; higher means more useful."""
        X = self._check(X)
        return forward_batch(self.state_, X)["quality"]

    def transform(self, X):
        X = self._check(X)
        return embed(self.state_, X)

    def classifiability(self, X, y):
        """CCS, NNCCS and CR of labeled samples under the fitted centers.

        Returns:
          Tuple of three ``(M,)`` arrays.
        """
        X = self._check(X)
        index = {c: i for i, c in enumerate(self.classes_.tolist())}
        try:
            codes = np.array([index[c] for c in np.asarray(y).tolist()], dtype=np.int64)
        except KeyError as exc:
            raise LabelError(f"label {exc.args[0]!r} was not seen during fit") from None
        cos = forward_batch(self.state_, X)["cosines"]
        ccs, nnccs, cr, _ = classifiability_from_cosines(cos, codes, self.eps)
        return ccs, nnccs, cr
