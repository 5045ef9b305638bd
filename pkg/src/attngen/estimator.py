"""scikit-learn compatible wrapper around model construction and training."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted

from attngen import autodiff as ad
from attngen.analysis import gradient_importance_batch
from attngen.dataio import EncodedSequence, check_tokens, split_corpus
from attngen.model import AttnGenConfig, attention_scores, attention_weights, init_model
from attngen.trainer import TrainConfig, train


class AttnGenClassifier(ClassifierMixin, BaseEstimator):
    """CNN sequence classifier trained with attention-guided masking.

    ``X`` is either an (n, L) integer token array (0 pad, 1 A, 2 T, 3 G, 4 C)
    or a list of nucleotide strings, which are encoded and padded to
    ``length``. A ``validation_fraction`` share of the data, split per class,
    drives early stopping.

    Examples
    --------
    >>> clf = AttnGenClassifier(length=16, embed_dim=8, channels=(4, 4, 2), max_epochs=2)
    >>> clf.fit(["ACGTACGTACGTACGT", "GGGGCCCCGGGGCCCC"] * 8, [0, 1] * 8).predict(["ACGT" * 4]).shape
    (1,)
    """

    def __init__(self, alpha=0.1, kl_weight=0.1, mask_mode="attention", lr=1e-3, batch_size=64,
                 weight_decay=1e-4, max_epochs=50, patience=10, clip_norm=1.0, length=200,
                 embed_dim=128, kernel_size=8, channels=(32, 16, 4), fc_hidden=64, dropout_p=0.3,
                 validation_fraction=0.1, precision="float32", random_state=42):
        self.alpha = alpha
        self.kl_weight = kl_weight
        self.mask_mode = mask_mode
        self.lr = lr
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.max_epochs = max_epochs
        self.patience = patience
        self.clip_norm = clip_norm
        self.length = length
        self.embed_dim = embed_dim
        self.kernel_size = kernel_size
        self.channels = channels
        self.fc_hidden = fc_hidden
        self.dropout_p = dropout_p
        self.validation_fraction = validation_fraction
        self.precision = precision
        self.random_state = random_state

    def _configs(self, n_classes):
        model_cfg = AttnGenConfig(length=self.length, embed_dim=self.embed_dim,
                                  kernel_size=self.kernel_size, channels=tuple(self.channels),
                                  fc_hidden=self.fc_hidden, dropout_p=self.dropout_p,
                                  classes=n_classes).validate()
        train_cfg = TrainConfig(lr=self.lr, batch_size=self.batch_size,
                                weight_decay=self.weight_decay, kl_weight=self.kl_weight,
                                alpha=self.alpha, max_epochs=self.max_epochs,
                                patience=self.patience, clip_norm=self.clip_norm,
                                seed=self.random_state, precision=self.precision,
                                mask_mode=self.mask_mode).resolved()
        return model_cfg, train_cfg

    def _tokens(self, X):
        return check_tokens(X, self.length)

    def fit(self, X, y):
        tokens = self._tokens(X)
        y = np.asarray(y)
        if len(y) != len(tokens):
            raise ValueError(f"X has {len(tokens)} rows but y has {len(y)}")
        check_classification_targets(y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("fit needs at least two classes")
        model_cfg, train_cfg = self._configs(len(self.classes_))
        corpus = [EncodedSequence(t, int(c)) for t, c in zip(tokens, encoded)]
        split = split_corpus(corpus, 1.0 - self.validation_fraction, self.random_state)
        with ad.precision(train_cfg.precision):
            self.model_ = init_model(model_cfg, train_cfg.seed)
            result = train(self.model_, split, train_cfg)
        self.history_ = result.history
        self.best_val_acc_ = result.best_val_acc
        self.n_epochs_ = result.epochs_run
        self.stability_warnings_ = result.warnings
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        with ad.precision(self.precision):
            return self.model_.predict_logits(self._tokens(X)).astype(np.float64)

    def predict_proba(self, X):
        logits = self.decision_function(X)
        shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
        return shifted / shifted.sum(axis=1, keepdims=True)

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]

    def attention(self, X):
        """(n, L) softmax attention weights over positions."""
        check_is_fitted(self, "model_")
        with ad.precision(self.precision):
            emb = self.model_.embed(self._tokens(X))
            return attention_weights(attention_scores(emb)).weights.astype(np.float64)

    def importance(self, X):
        """(n, L) gradient-norm importance of each position for the predicted class."""
        check_is_fitted(self, "model_")
        with ad.precision(self.precision):
            return gradient_importance_batch(self.model_, self._tokens(X))
