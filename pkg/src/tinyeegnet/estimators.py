"""scikit-learn compatible wrappers.

``ReductionTransformer`` turns raw trials into reduced windows and
``EEGNetClassifier`` runs a pretrained bundle, so both drop into a
``Pipeline``. Neither trains anything: ``fit`` validates inputs and loads or
resolves state.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .arch import ConfigError
from .bundle import load_bundle
from .engine import EngineError, ModelWeights, fuse, infer
from .ingest import TASK_CLASSES
from .montage import load_subset, source_montage
from .reduction import ReductionError, design_lowpass, reduce_trial


def _check_trials(X) -> np.ndarray:
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=np.float64)
    if X.ndim != 3:
        raise ValueError(f"expected trials shaped (n_trials, n_channels, n_samples), got {X.shape}")
    return X


class ReductionTransformer(TransformerMixin, BaseEstimator):
    """Select channels, decimate and crop each trial.

    Parameters
    ----------
    ds : int
        Downsampling factor.
    channels : str or list of str
        Subset preset name, subset file path, or explicit channel names.
    window_seconds : float
        Length of the kept window after the cue.
    offset_seconds : float
        Start of the window relative to the trial start.
    fs : float
        Sampling rate of the input trials.
    source_channels : list of str, optional
        Labels of the input rows; defaults to the 64-channel montage.
    """

    def __init__(self, ds=1, channels="all64", window_seconds=3.0, offset_seconds=0.0,
                 fs=160.0, source_channels=None):
        self.ds = ds
        self.channels = channels
        self.window_seconds = window_seconds
        self.offset_seconds = offset_seconds
        self.fs = fs
        self.source_channels = source_channels

    def fit(self, X, y=None):
        X = _check_trials(X)
        labels = list(self.source_channels) if self.source_channels is not None else list(source_montage())
        if X.shape[1] != len(labels):
            raise ValueError(f"X has {X.shape[1]} channels, source montage has {len(labels)}")
        self.subset_ = load_subset(self.channels)
        self.channel_index_ = self.subset_.resolve(labels)
        self.source_labels_ = labels
        self.filter_ = design_lowpass(self.ds, self.fs)
        self.n_samples_in_ = X.shape[2]
        probe = self._reduce_one(X[0]) if len(X) else None
        self.output_shape_ = probe.shape if probe is not None else None
        return self

    def _reduce_one(self, trial):
        try:
            return reduce_trial(trial, self.source_labels_, self.ds, self.subset_,
                                self.window_seconds, self.fs, self.offset_seconds, self.filter_)
        except ReductionError as exc:
            raise ValueError(str(exc)) from exc

    def transform(self, X):
        check_is_fitted(self, "channel_index_")
        X = _check_trials(X)
        if X.shape[1:] != (len(self.source_labels_), self.n_samples_in_):
            raise ValueError(f"X trials have shape {X.shape[1:]}, fitted on "
                             f"{(len(self.source_labels_), self.n_samples_in_)}")
        return np.stack([self._reduce_one(t) for t in X]).astype(np.float32)


class EEGNetClassifier(ClassifierMixin, BaseEstimator):
    """Pretrained EEGNet inference as a classifier.

    Parameters
    ----------
    weights : path or (ModelWeights, EEGNetConfig)
        An ``EEGW`` bundle on disk, or weights already in memory.
    fold_bn : bool
        Fold batch-norm statistics when loading.
    classes : sequence, optional
        Label for each output index; defaults to the task's class letters.
    """

    def __init__(self, weights=None, fold_bn=True, classes=None):
        self.weights = weights
        self.fold_bn = fold_bn
        self.classes = classes

    def fit(self, X=None, y=None):
        if self.weights is None:
            raise ValueError("EEGNetClassifier needs pretrained weights; training is not supported")
        if isinstance(self.weights, (str, Path)):
            w, cfg = load_bundle(self.weights, fold_bn=self.fold_bn)
        else:
            w, cfg = self.weights
            if not isinstance(w, ModelWeights):
                raise TypeError("weights must be a bundle path or (ModelWeights, EEGNetConfig)")
            w = w.fold() if self.fold_bn else w
        try:
            w.check(cfg)
        except EngineError as exc:
            raise ValueError(str(exc)) from exc
        classes = self.classes if self.classes is not None else TASK_CLASSES[cfg.n_classes]
        if len(classes) != cfg.n_classes:
            raise ValueError(f"{len(classes)} class labels for a {cfg.n_classes}-class model")
        self.config_ = cfg
        self.weights_ = w
        self.fused_ = fuse(w)
        self.classes_ = np.asarray(classes)
        if X is not None:
            self._validate(X)
        return self

    def _validate(self, X):
        X = _check_trials(X)
        want = (self.config_.n_channels, self.config_.n_samples)
        if X.shape[1:] != want:
            raise ValueError(f"windows have shape {X.shape[1:]}, model expects {want}")
        return X

    def predict_proba(self, X):
        check_is_fitted(self, "fused_")
        X = self._validate(X)
        out = np.empty((len(X), self.config_.n_classes), np.float32)
        try:
            for i, w in enumerate(X):
                out[i] = infer(w.T, self.fused_, self.config_)[0]
        except (EngineError, ConfigError) as exc:
            raise ValueError(str(exc)) from exc
        return out

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]
