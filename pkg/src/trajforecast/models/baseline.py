"""Constant-velocity extrapolation, a dense network and a temporal CNN over velocities."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_is_fitted

from ..autograd import DimensionError, Tensor, causal_conv1d, dropout, relu, sqrt
from ..data.series import DT
from ..nn import Params, init_linear, linear, ones, uniform
from .base import Forecaster, NeuralForecaster, check_windows


def constant_velocity_forecast(last_pos, last_vel, steps: int, dt: float = DT) -> np.ndarray:
    """``p[i] = last_pos + i * dt * last_vel`` for ``i = 1..steps``; batches over leading axes."""
    last_pos = np.asarray(last_pos, dtype=np.float64)
    last_vel = np.asarray(last_vel, dtype=np.float64)
    i = np.arange(1, steps + 1, dtype=np.float64)[:, None]
    return last_pos[..., None, :] + i * dt * last_vel[..., None, :]


class ConstantVelocity(Forecaster):
    """Repeats the target's last observed velocity; nothing to learn."""

    trainable = False

    def __init__(self, dt: float = DT):
        self.dt = dt

    def fit(self, X, y=None, validation=None):
        check_windows(X)
        self.forecast_steps_ = X.P
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "forecast_steps_")
        check_windows(X)
        return constant_velocity_forecast(X.last_pos[:, 0], X.history[:, -1, 0, 2:4], X.P, self.dt)


# -- dense network -------------------------------------------------------------

def flatten_history(velocities: np.ndarray) -> np.ndarray:
    """``[B, H, N, 2]`` to ``[B, H*N*2]``: time-major, then object, then axis."""
    v = np.asarray(velocities)
    return v.reshape(v.shape[0], -1)


def init_linear_net(rng: np.random.Generator, n_in: int, n_out: int, hidden=(128, 128)) -> Params:
    widths = [n_in, *hidden, n_out]
    return {"layers": [init_linear(rng, a, b) for a, b in zip(widths[:-1], widths[1:])]}


def linear_forward(params: Params, x, dropout_p: float = 0.0, training: bool = False,
                   rng: np.random.Generator | None = None) -> Tensor:
    """Dense stack: each hidden layer is affine, then ReLU, then dropout; the last layer is affine.

    ``x`` is ``[B, H*N*2]``; the result is ``[B, P*2]``.
    """
    layers = params["layers"]
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.shape[-1] != layers[0]["W"].shape[0]:
        raise DimensionError(f"input width {x.shape[-1]} != first layer width {layers[0]['W'].shape[0]}")
    for layer in layers[:-1]:
        x = dropout(relu(linear(layer, x)), dropout_p, rng, training)
    return linear(layers[-1], x)


class LinearForecaster(NeuralForecaster):
    """Dense network on the flattened velocity history of every object."""

    output_kind = "velocity"

    def __init__(self, hidden_sizes=(128, 128), dropout: float = 0.1, epochs: int = 30, batch_size: int = 64,
                 lr: float = 1e-3, weight_decay: float = 0.01, patience: int = 5, seed: int = 0):
        self.hidden_sizes = hidden_sizes
        self.dropout = dropout
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.patience = patience
        self.seed = seed

    def _init_params(self, rng):
        n_in = self.history_steps_ * self.n_objects_ * 2
        return init_linear_net(rng, n_in, self.forecast_steps_ * 2, tuple(self.hidden_sizes))

    def _features(self, ws):
        return {"x": flatten_history(self._norm_history(ws)[..., 2:4])}

    def _forward(self, params, feats, training, rng):
        out = linear_forward(params, feats["x"], self.dropout, training, rng)
        return out.reshape(out.shape[0], -1, 2)


# -- temporal CNN --------------------------------------------------------------

TCNN_DILATIONS = (1, 2, 4, 8, 8)


def receptive_field(kernel_size: int, dilations) -> int:
    return 1 + sum((kernel_size - 1) * d for d in dilations)


def init_tcnn(rng: np.random.Generator, n_in: int, n_out: int, filters: int = 42, kernel_size: int = 2,
              dilations=TCNN_DILATIONS) -> Params:
    layers = []
    c_in = n_in
    for _ in dilations:
        layer = {"v": uniform(rng, kernel_size * c_in, (kernel_size, c_in, filters)),
                 "g": ones((filters,)),
                 "b": uniform(rng, kernel_size * c_in, (filters,))}
        if c_in != filters:
            layer["proj"] = init_linear(rng, c_in, filters, bias=False)
        layers.append(layer)
        c_in = filters
    return {"layers": layers, "head": init_linear(rng, filters, n_out)}


def weight_norm(v: Tensor, g: Tensor) -> Tensor:
    """Kernel ``g * v / ||v||`` with the norm taken per output channel."""
    norm = sqrt((v * v).sum(axis=(0, 1)))
    return v * (g / norm)


def tcnn_features(params: Params, x, dilations=TCNN_DILATIONS) -> list[Tensor]:
    """Per-layer outputs ``[B, T, filters]`` of the residual causal stack."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.shape[-1] != params["layers"][0]["v"].shape[1]:
        raise DimensionError(f"input channels {x.shape[-1]} != {params['layers'][0]['v'].shape[1]}")
    outs = []
    for layer, d in zip(params["layers"], dilations):
        y = relu(causal_conv1d(x, weight_norm(layer["v"], layer["g"]), d) + layer["b"])
        skip = linear(layer["proj"], x) if "proj" in layer else x
        x = y + skip
        outs.append(x)
    return outs


def tcnn_forward(params: Params, x, dilations=TCNN_DILATIONS) -> Tensor:
    """``[B, T, C]`` velocities to ``[B, P*2]`` from the last step's features."""
    feats = tcnn_features(params, x, dilations)[-1]
    return linear(params["head"], feats[:, -1])


class TCNNForecaster(NeuralForecaster):
    """Dilated causal convolutions with weight normalization and residual paths."""

    output_kind = "velocity"

    def __init__(self, filters: int = 42, kernel_size: int = 2, dilations=TCNN_DILATIONS, epochs: int = 30,
                 batch_size: int = 64, lr: float = 1e-3, weight_decay: float = 0.01, patience: int = 5,
                 seed: int = 0):
        self.filters = filters
        self.kernel_size = kernel_size
        self.dilations = dilations
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.patience = patience
        self.seed = seed

    def _init_params(self, rng):
        return init_tcnn(rng, self.n_objects_ * 2, self.forecast_steps_ * 2, self.filters, self.kernel_size,
                         tuple(self.dilations))

    def _features(self, ws):
        v = self._norm_history(ws)[..., 2:4]
        return {"x": v.reshape(v.shape[0], v.shape[1], -1)}

    def _forward(self, params, feats, training, rng):
        out = tcnn_forward(params, feats["x"], tuple(self.dilations))
        return out.reshape(out.shape[0], -1, 2)
