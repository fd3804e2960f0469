"""Scikit-learn style front end for the sequence classifiers.

Wraps model construction and the training loop behind fit/predict so the
models compose with the usual estimator tooling (get_params, set_params,
clone, grid search). Inputs are plain numpy arrays: canvases [N, 100, 100]
(or [N, 1, 100, 100]) and three digit labels per row.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from . import config
from .models import ModelConfig, build, predict
from .training import TrainSettings, per_digit_error, train
from .validation import check_canvas_batch, check_sequence_labels


class _ArrayBatches:
    """Adapter giving in-memory arrays the dataset batching interface."""

    def __init__(self, x, y):
        self.x = x
        self.y = y

    def __len__(self):
        return len(self.x)

    def batches(self, batch_size, shuffle_seed=None):
        n = len(self.x)
        order = (
            np.arange(n)
            if shuffle_seed is None
            else np.random.default_rng(shuffle_seed).permutation(n)
        )
        for start in range(0, n, batch_size):
            chunk = order[start : start + batch_size]
            yield self.x[chunk], self.y[chunk]


class SequenceDigitClassifier(BaseEstimator, ClassifierMixin):
    """Classify three-digit sequences on cluttered canvases.

    Parameters mirror the model and schedule configuration; ``variant`` picks
    the architecture ("rnn-spn", "ffn-spn", or "conv-baseline") and
    ``downsample`` the attention crop resolution.
    """

    def __init__(
        self,
        variant="rnn-spn",
        downsample=2.0,
        dropout=None,
        scale=1,
        learning_rate=1e-3,
        rho=0.9,
        epsilon=1e-6,
        clip_norm=10.0,
        batch_size=256,
        max_epochs=100,
        patience=10,
        validation_fraction=0.1,
        seed=0,
    ):
        self.variant = variant
        self.downsample = downsample
        self.dropout = dropout
        self.scale = scale
        self.learning_rate = learning_rate
        self.rho = rho
        self.epsilon = epsilon
        self.clip_norm = clip_norm
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.seed = seed

    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            variant=self.variant,
            downsample=self.downsample,
            dropout=self.dropout,
            scale=self.scale,
            seed=self.seed,
        )

    def fit(self, X, y):
        X = check_canvas_batch(X)
        y = check_sequence_labels(y, len(X))
        n_val = max(1, int(round(self.validation_fraction * len(X))))
        if n_val >= len(X):
            raise ValueError("validation_fraction leaves no training data")
        perm = np.random.default_rng(self.seed).permutation(len(X))
        val_idx, train_idx = perm[:n_val], perm[n_val:]
        self.model_ = build(self._model_config())
        settings = TrainSettings(
            lr=self.learning_rate,
            rho=self.rho,
            eps=self.epsilon,
            clip_norm=self.clip_norm,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            shuffle_seed=self.seed,
        )
        self.report_ = train(
            self.model_,
            _ArrayBatches(X[train_idx], y[train_idx]),
            _ArrayBatches(X[val_idx], y[val_idx]),
            settings,
        )
        self.dtype_ = str(np.dtype(config.dtype()))
        return self

    def predict(self, X):
        self._check_fitted()
        X = check_canvas_batch(X)
        preds = []
        for start in range(0, len(X), self.batch_size):
            out = self.model_.forward(X[start : start + self.batch_size], train=False)
            preds.append(predict(out.logits).T)  # [n, T]
        return np.concatenate(preds, axis=0)

    def score(self, X, y):
        """Per-digit accuracy, 1 - per-digit error."""
        X = check_canvas_batch(X)
        y = check_sequence_labels(y, len(X))
        return 1.0 - per_digit_error(self.predict(X).T, y)

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("this classifier has not been fitted yet")
