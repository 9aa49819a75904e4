"""Per-channel z-score statistics fitted on training data only."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .series import ConfigurationError
from .windows import WindowSet

MIN_STD = 1e-12


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    feature_names: tuple[str, ...] = ()

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def invert(self, z: np.ndarray) -> np.ndarray:
        return z * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "feature_names": list(self.feature_names)}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], float), np.asarray(d["std"], float), tuple(d.get("feature_names", ())))


def fit_normalizer(train, feature_names: tuple[str, ...] | None = None) -> NormStats:
    """Fit per-channel mean/std over every axis but the last.

    ``train`` is a :class:`WindowSet` (history frames are used) or an array
    whose last axis indexes channels.
    """
    if isinstance(train, WindowSet):
        feature_names = feature_names or train.feature_names
        train = train.history
    x = np.asarray(train, dtype=np.float64)
    if x.size == 0:
        raise ConfigurationError("cannot fit a normalizer on empty training data")
    flat = x.reshape(-1, x.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    names = tuple(feature_names) if feature_names else tuple(f"ch{i}" for i in range(flat.shape[1]))
    bad = np.flatnonzero(std < MIN_STD)
    if bad.size:
        raise ConfigurationError(f"zero-variance channel(s) {[names[i] for i in bad]}; cannot normalize")
    return NormStats(mean, std, names)


class FeatureScaler(BaseEstimator, TransformerMixin):
    """sklearn-compatible wrapper: z-score the last axis of arrays of any rank."""

    def __init__(self, feature_names: tuple[str, ...] | None = None):
        self.feature_names = feature_names

    def fit(self, X, y=None):
        self.stats_ = fit_normalizer(X, self.feature_names)
        return self

    def transform(self, X):
        check_is_fitted(self, "stats_")
        return self.stats_.apply(np.asarray(X, dtype=np.float64))

    def inverse_transform(self, X):
        check_is_fitted(self, "stats_")
        return self.stats_.invert(np.asarray(X, dtype=np.float64))
