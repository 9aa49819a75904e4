"""Estimator plumbing shared by the forecasters.

Every forecaster follows the scikit-learn conventions: hyperparameters are
``__init__`` arguments (so ``get_params``/``set_params``/``clone`` work),
``fit`` learns state stored in trailing-underscore attributes, and
``predict`` returns absolute target positions ``[B, P, 2]`` in metres.
``X`` is always a :class:`WindowSet` whose object 0 is the target.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..autograd import Tensor
from ..data.normalize import NormStats, fit_normalizer
from ..data.series import ConfigurationError, DT
from ..data.windows import FEATURES, WindowSet
from ..metrics import ade, integrate_velocities
from ..nn import count_parameters, flatten, load_flat
from ..training import TrainConfig, TrainResult, train_model


def check_windows(X, n_objects: int | None = None, history_steps: int | None = None,
                  forecast_steps: int | None = None, min_windows: int = 1) -> WindowSet:
    """Validate a window set for fitting or prediction.

    Raises ``TypeError`` for anything but a :class:`WindowSet`, and
    ``ValueError`` for wrong feature layout, non-finite values, a target not
    at index 0, or shapes that disagree with the fitted ones.
    """
    if not isinstance(X, WindowSet):
        raise TypeError(f"expected a WindowSet, got {type(X).__name__}")
    if len(X) < min_windows:
        raise ValueError(f"need at least {min_windows} window(s), got {len(X)}")
    if tuple(X.feature_names[:4]) != FEATURES:
        raise ValueError(f"window features must start with {FEATURES}, got {X.feature_names}")
    if not X.target_first:
        raise ValueError("windows must have the target at object index 0 (see expand_targets)")
    if not np.isfinite(X.history).all():
        raise ValueError("window history holds non-finite values")
    for name, want, got in (("objects", n_objects, X.n_objects), ("history steps", history_steps, X.H),
                            ("forecast steps", forecast_steps, X.P)):
        if want is not None and want != got:
            raise ValueError(f"model was fitted with {want} {name}, input has {got}")
    return X


class Forecaster(BaseEstimator):
    """Base class: ``predict`` gives target positions, ``score`` is negative ADE."""

    #: what the network emits before reintegration: "velocity" or "position"
    output_kind = "velocity"
    trainable = True

    def fit(self, X, y=None, validation=None):
        raise NotImplementedError

    def predict(self, X) -> np.ndarray:
        raise NotImplementedError

    def score(self, X, y=None) -> float:
        """Negative average displacement error, so that larger is better."""
        truth = X.target_positions() if y is None else y
        return -ade(self.predict(X), truth)


class NeuralForecaster(Forecaster):
    """A forecaster whose parameters are trained by :func:`train_model`.

    Subclasses provide ``_init_params(rng)``, ``_features(ws)`` (a dict of
    arrays with a leading batch axis) and ``_forward(params, feats, training,
    rng)`` returning normalized native outputs ``[B, P, 2]``.
    """

    def _train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
                           weight_decay=self.weight_decay, patience=self.patience, seed=self.seed,
                           lr_schedule=getattr(self, "lr_schedule", "constant"),
                           warmup_steps=getattr(self, "warmup_steps", 4000),
                           d_model=getattr(self, "d_model", 256))

    # -- data -----------------------------------------------------------------
    def _native(self, ws: WindowSet) -> np.ndarray:
        if self.output_kind == "velocity":
            return ws.future[:, :, 0, 2:4]
        return ws.future[:, :, 0, :2] - ws.last_pos[:, None, 0]

    def _targets(self, ws: WindowSet) -> np.ndarray:
        return self.target_stats_.apply(self._native(ws))

    def _norm_history(self, ws: WindowSet) -> np.ndarray:
        return self.input_stats_.apply(ws.history[..., :4])

    def _to_positions(self, native: np.ndarray, ws: WindowSet) -> np.ndarray:
        last = ws.last_pos[:, 0]
        if self.output_kind == "velocity":
            return integrate_velocities(last, native, DT)
        return last[:, None] + native

    # -- estimator API ----------------------------------------------------------
    def prepare(self, X: WindowSet) -> "NeuralForecaster":
        """Fit normalization statistics and initialize parameters without training."""
        check_windows(X)
        self.n_objects_, self.history_steps_, self.forecast_steps_ = X.n_objects, X.H, X.P
        self.input_stats_ = fit_normalizer(X.history[..., :4], FEATURES)
        self.target_stats_ = fit_normalizer(self._native(X), ("x", "y"))
        self.params_ = self._init_params(np.random.default_rng(self.seed))
        return self

    def fit(self, X, y=None, validation=None):
        """Train on ``X``; ``validation`` (a WindowSet) drives checkpoint selection and early stopping."""
        self.prepare(X)
        if validation is not None and len(validation):
            check_windows(validation, self.n_objects_, self.history_steps_, self.forecast_steps_)
        self.train_result_: TrainResult = train_model(self, X, validation, self._train_config())
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        check_windows(X, self.n_objects_, self.history_steps_, self.forecast_steps_)
        feats = self._features(X)
        outs = []
        for s in range(0, len(X), 256):
            part = {k: v[s:s + 256] for k, v in feats.items()}
            outs.append(self._forward(self.params_, part, training=False, rng=None).data)
        return self._to_positions(self.target_stats_.invert(np.concatenate(outs)), X)

    # -- checkpoint state -------------------------------------------------------
    @property
    def n_parameters(self) -> int:
        check_is_fitted(self, "params_")
        return count_parameters(self.params_)

    def get_state(self) -> tuple[dict[str, np.ndarray], dict]:
        """Named parameter arrays plus the JSON-able fitted metadata."""
        check_is_fitted(self, "params_")
        arrays = {k: t.data.copy() for k, t in flatten(self.params_).items()}
        meta = {"n_objects": self.n_objects_, "history_steps": self.history_steps_,
                "forecast_steps": self.forecast_steps_, "input_stats": self.input_stats_.to_dict(),
                "target_stats": self.target_stats_.to_dict()}
        return arrays, meta

    def set_state(self, arrays: dict[str, np.ndarray], meta: dict) -> "NeuralForecaster":
        self.n_objects_ = int(meta["n_objects"])
        self.history_steps_ = int(meta["history_steps"])
        self.forecast_steps_ = int(meta["forecast_steps"])
        self.input_stats_ = NormStats.from_dict(meta["input_stats"])
        self.target_stats_ = NormStats.from_dict(meta["target_stats"])
        self.params_ = self._init_params(np.random.default_rng(self.seed))
        load_flat(self.params_, arrays)
        return self


def as_tensor_input(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def require_fields(feats: dict, names) -> None:
    missing = [n for n in names if n not in feats]
    if missing:
        raise ConfigurationError(f"missing input field(s): {missing}")
