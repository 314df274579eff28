"""scikit-learn compatible facades over the header and the mislabel pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .header import BayesHeader, TrainConfig, predict_mc, train
from .noiselab import FeatureDataset
from .numkit import RngStream
from .suspicion import fuse_adaptive, knn_suspicion, uncertainty_suspicion
from .validation import check_feature_array, check_labels

__all__ = ["VariationalHeadClassifier", "MislabelDetector"]


class VariationalHeadClassifier(BaseEstimator, ClassifierMixin):
    """Spectrally normalized variational classification head.

    A two-layer stochastic linear head trained by minimizing the negative
    ELBO on precomputed feature vectors. Prediction averages the class
    probabilities of ``mc_samples`` Monte Carlo weight draws.

    Parameters
    ----------
    hidden_dim : int or None
        Hidden width; defaults to the input dimension.
    beta : float
        Weight of the KL regularizer toward the weight prior.
    prior_std : float
        Std of the zero-mean Gaussian weight prior.
    sn_iters : int
        Power-iteration refinements per forward pass.
    spectral_norm : bool
        Disable to get a plain (unnormalized) Bayesian head.
    stochastic : bool
        Disable to get a deterministic linear head (sets beta to 0).
    epochs, batch_size, learning_rate, weight_decay : training schedule.
    mc_samples : int
        Monte Carlo draws used by ``predict_proba`` and ``predict``.
    random_state : int
        Seed for initialization, batching, and sampling.
    """

    def __init__(
        self,
        hidden_dim=None,
        beta=1e-4,
        prior_std=0.01,
        sn_iters=1,
        spectral_norm=True,
        stochastic=True,
        epochs=50,
        batch_size=64,
        learning_rate=1e-3,
        weight_decay=1e-4,
        mc_samples=50,
        random_state=0,
    ):
        self.hidden_dim = hidden_dim
        self.beta = beta
        self.prior_std = prior_std
        self.sn_iters = sn_iters
        self.spectral_norm = spectral_norm
        self.stochastic = stochastic
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.mc_samples = mc_samples
        self.random_state = random_state

    def fit(self, X, y):
        X = check_feature_array(X)
        y = np.asarray(y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least 2 classes")
        self.n_features_in_ = X.shape[1]
        header = BayesHeader.create(
            in_dim=X.shape[1],
            n_classes=len(self.classes_),
            stream=RngStream(root_seed=self.random_state, purpose="estimator-init"),
            hidden_dim=self.hidden_dim,
            beta=0.0 if not self.stochastic else self.beta,
            prior_std=self.prior_std,
            sn_iters=self.sn_iters,
            stochastic=self.stochastic,
            spectral_norm=self.spectral_norm,
            mc_samples_infer=self.mc_samples,
        )
        config = TrainConfig(
            epochs=self.epochs,
            batch_size=min(self.batch_size, len(X)),
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            seed=self.random_state,
        )
        self.header_, self.history_ = train(header, X, encoded, config)
        self._predict_counter = 0
        return self

    def _check_fitted(self):
        if not hasattr(self, "header_"):
            raise NotFittedError("call fit before predicting")

    def predict_summary(self, X):
        """Full Monte Carlo summary (probabilities, confidence, uncertainty).

        Repeated calls use fresh sampling streams, keyed by a call counter,
        while a refitted estimator restarts the sequence deterministically.
        """
        self._check_fitted()
        X = check_feature_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}"
            )
        stream = RngStream(
            root_seed=self.random_state,
            purpose="estimator-predict",
            step=self._predict_counter,
        )
        self._predict_counter += 1
        return predict_mc(self.header_, X, self.mc_samples, stream)

    def predict_proba(self, X):
        return self.predict_summary(X).mean_probs

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[proba.argmax(axis=1)]

    def uncertainty(self, X):
        """Per-sample MC std of the predicted-class probability."""
        return self.predict_summary(X).uncertainty


class MislabelDetector(BaseEstimator):
    """Flags likely mislabeled training samples.

    Trains a :class:`VariationalHeadClassifier` on the (possibly noisy)
    labels, then fuses neighborhood label disagreement with Monte Carlo
    predictive uncertainty into one suspicion score per sample. After
    ``fit``, ``scores_`` holds the fused scores and ``flagged_`` the boolean
    mask of the ``ceil(expected_rate * n)`` most suspicious samples.
    """

    def __init__(
        self,
        expected_rate=0.1,
        knn_k=10,
        classifier_params=None,
        random_state=0,
    ):
        self.expected_rate = expected_rate
        self.knn_k = knn_k
        self.classifier_params = classifier_params
        self.random_state = random_state

    def fit(self, X, y):
        X = check_feature_array(X)
        y = check_labels(np.asarray(y))
        params = dict(self.classifier_params or {})
        params.setdefault("random_state", self.random_state)
        clf = VariationalHeadClassifier(**params)
        clf.fit(X, y)
        ds = FeatureDataset.from_arrays(X, y)
        summary = clf.predict_summary(X)
        s_knn = knn_suspicion(ds, self.knn_k)
        s_unc = uncertainty_suspicion(summary)
        self.classifier_ = clf
        self.report_ = fuse_adaptive(s_knn, s_unc, self.expected_rate, ids=ds.ids)
        self.scores_ = self.report_.s_fused
        self.flagged_ = self.report_.flagged
        return self

    def fit_predict(self, X, y):
        """Boolean mask: True where the sample's label looks corrupted."""
        return self.fit(X, y).flagged_
