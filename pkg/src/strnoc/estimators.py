"""scikit-learn style wrappers around the encoder, the network and the MAC baseline.

The estimators accept any of three input kinds and normalise them with
:func:`check_profiles`:

* a sequence of :class:`~strnoc.simulator.SimulatedProfile` (encoded on the fly),
* a sequence of :class:`~strnoc.model.EncodedRecord`,
* a dense array of shape ``[n, 24, 50, 89]``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .encoder import MAX_PEAKS, N_FEATURES, N_LOCI, build_labels, encode_compact, filter_artefact_peaks
from .evaluator import mac_estimate
from .kit import KitConfig, default_kit, load_kit_config
from .model import DeepNoCModel, EncodedRecord, LossWeights, build_model
from .simulator import SimulatedProfile
from .trainer import TrainConfig, fine_tune, predict_proba, train

CLASSES = np.arange(1, 11)


def resolve_kit(kit) -> KitConfig:
    if kit is None:
        return default_kit()
    if isinstance(kit, KitConfig):
        return kit
    return load_kit_config(kit)


def check_profiles(X, kit: KitConfig, artefact_threshold: float = 0.97,
                   with_labels: bool = True) -> list[EncodedRecord]:
    """Coerce estimator input to a list of encoded records."""
    if isinstance(X, np.ndarray):
        if X.ndim != 4 or X.shape[1:] != (N_LOCI, MAX_PEAKS, N_FEATURES):
            raise ValueError(f"expected array of shape [n, 24, 50, 89], got {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("input tensor contains non-finite values")
        return [EncodedRecord.from_dense(t) for t in X]
    X = list(X)
    if not X:
        raise ValueError("empty input")
    if all(isinstance(x, EncodedRecord) for x in X):
        return X
    if all(isinstance(x, SimulatedProfile) for x in X):
        out = []
        for p in X:
            f = filter_artefact_peaks(p, artefact_threshold)
            labels = build_labels(f) if with_labels else None
            out.append(EncodedRecord.from_arrays(encode_compact(f, kit), labels))
        return out
    raise TypeError("X must be profiles, encoded records or a [n, 24, 50, 89] array")


class ProfileEncoder(TransformerMixin, BaseEstimator):
    """Artefact filter + tensor encoder as a stateless transformer.

    ``transform`` returns a dense ``[n, 24, 50, 89]`` float32 array, or the
    compact records when ``output="compact"``.
    """

    def __init__(self, kit=None, artefact_threshold: float = 0.97, output: str = "dense"):
        self.kit = kit
        self.artefact_threshold = artefact_threshold
        self.output = output

    def fit(self, X=None, y=None):
        if self.output not in ("dense", "compact"):
            raise ValueError("output must be 'dense' or 'compact'")
        if not 0.0 <= self.artefact_threshold <= 1.0:
            raise ValueError("artefact_threshold must lie in [0, 1]")
        self.kit_ = resolve_kit(self.kit)
        return self

    def transform(self, X):
        check_is_fitted(self, "kit_")
        recs = check_profiles(X, self.kit_, self.artefact_threshold)
        if self.output == "compact":
            return recs
        return np.stack([r.inputs.to_dense() for r in recs])


class DeepNoCClassifier(ClassifierMixin, BaseEstimator):
    """Multi-output NoC network exposed as a 10-class classifier.

    ``y`` is optional when ``X`` carries ground truth (simulated profiles or
    labelled records); if given it must agree with that truth.
    """

    def __init__(self, kit=None, epochs: int = 200, batch_size: int = 100, learning_rate: float = 1e-5,
                 beta1: float = 0.5, loss_weights=(1, 1, 1, 1, 1, 1), feedback: bool = True,
                 artefact_threshold: float = 0.97, random_state: int = 0, patience: int | None = None):
        self.kit = kit
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.loss_weights = loss_weights
        self.feedback = feedback
        self.artefact_threshold = artefact_threshold
        self.random_state = random_state
        self.patience = patience

    def _config(self, epochs=None) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            epochs=self.epochs if epochs is None else epochs,
            seed=self.random_state,
            loss_weights=LossWeights.from_sequence(self.loss_weights),
            lr=self.learning_rate,
            beta1=self.beta1,
            patience=self.patience,
        )

    def _records(self, X, y=None) -> list[EncodedRecord]:
        recs = check_profiles(X, self.kit_, self.artefact_threshold)
        if any(r.noc is None for r in recs):
            raise ValueError("training input needs ground truth labels (profiles or labelled records)")
        if y is not None:
            y = np.asarray(y)
            if y.shape != (len(recs),):
                raise ValueError(f"y has shape {y.shape}, expected ({len(recs)},)")
            if np.any(y != np.array([r.noc for r in recs])):
                raise ValueError("y disagrees with the NoC stored in X")
        return recs

    def fit(self, X, y=None, X_test=None):
        self.kit_ = resolve_kit(self.kit)
        recs = self._records(X, y)
        test = self._records(X_test) if X_test is not None else []
        self.model_ = build_model(self.random_state, feedback=self.feedback)
        self.history_, self.model_, self.optimizer_ = train(self.model_, recs, test, self._config())
        self.classes_ = CLASSES
        return self

    def fine_tune(self, X, epochs: int = 2000):
        """Pseudo-label and fine-tune on laboratory-style records (alternating split)."""
        check_is_fitted(self, "model_")
        recs = self._records(X)
        self.finetune_history_, self.model_, self.finetune_split_ = fine_tune(
            self.model_, recs, self._config(epochs))
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        recs = check_profiles(X, self.kit_, self.artefact_threshold, with_labels=False)
        return predict_proba(self.model_, recs, self.batch_size)

    def predict(self, X) -> np.ndarray:
        return CLASSES[np.argmax(self.predict_proba(X), axis=1)]

    @classmethod
    def from_model(cls, model: DeepNoCModel, kit=None, **params) -> "DeepNoCClassifier":
        est = cls(kit=kit, feedback=model.feedback, random_state=model.seed, **params)
        est.kit_ = resolve_kit(kit)
        est.model_ = model
        est.classes_ = CLASSES
        return est


class MACClassifier(ClassifierMixin, BaseEstimator):
    """Maximum-allele-count baseline; needs no training."""

    def __init__(self, plp_cutoff: float = 0.5):
        self.plp_cutoff = plp_cutoff

    def fit(self, X=None, y=None):
        self.classes_ = CLASSES
        return self

    def predict(self, X: Sequence[SimulatedProfile]) -> np.ndarray:
        return np.array([min(mac_estimate(p, self.plp_cutoff), 10) for p in X])
