"""Stacked LSTM and the convolutional context LSTM."""
from __future__ import annotations

import numpy as np

from ..autograd import DimensionError, Tensor, concat, conv2d, leaky_relu, matmul, sigmoid, stack, tanh
from ..data.context import FIELD_NAMES, context_fields
from ..data.series import ConfigurationError
from ..nn import Params, init_linear, linear, uniform, zeros
from .base import NeuralForecaster, require_fields

GATES = ("i", "f", "g", "o")


def init_lstm_layer(rng: np.random.Generator, n_in: int, hidden: int, lead: tuple[int, ...] = ()) -> Params:
    """Separate input/recurrent weights and biases per gate, e.g. ``W_ii``, ``W_hi``, ``b_ii``, ``b_hi``."""
    bias_shape = lead + ((1,) if lead else ()) + (hidden,)
    p = {}
    for g in GATES:
        p[f"W_i{g}"] = uniform(rng, hidden, lead + (n_in, hidden))
        p[f"W_h{g}"] = uniform(rng, hidden, lead + (hidden, hidden))
        p[f"b_i{g}"] = zeros(bias_shape)
        p[f"b_h{g}"] = zeros(bias_shape)
    return p


def lstm_cell(p: Params, x_t, h_prev, c_prev) -> tuple[Tensor, Tensor]:
    """One step of the gated cell.

    ``i, f, o`` are sigmoid gates and ``g`` a tanh candidate, each computed as
    ``W_i* x + b_i* + W_h* h + b_h*``; then ``c = f*c_prev + i*g`` and
    ``h = o * tanh(c)``.
    """
    n_in = p["W_ii"].shape[-2]
    width = (x_t.shape if isinstance(x_t, Tensor) else np.shape(x_t))[-1]
    if width != n_in:
        raise DimensionError(f"cell input width {width} != {n_in}")

    def pre(g):
        return matmul(x_t, p[f"W_i{g}"]) + p[f"b_i{g}"] + matmul(h_prev, p[f"W_h{g}"]) + p[f"b_h{g}"]

    i, f, o = sigmoid(pre("i")), sigmoid(pre("f")), sigmoid(pre("o"))
    g = tanh(pre("g"))
    c = f * c_prev + i * g
    return o * tanh(c), c


def lstm_zero_state(layers: list[Params], batch_shape: tuple[int, ...]) -> list[tuple[Tensor, Tensor]]:
    states = []
    for p in layers:
        hidden = p["W_hi"].shape[-1]
        z = Tensor(np.zeros(batch_shape + (hidden,)))
        states.append((z, z))
    return states


def fuse_gates(p: Params) -> tuple[Tensor, Tensor, Tensor]:
    """Input weights, recurrent weights and summed biases with the gates side by side (i, f, g, o)."""
    W_x = concat([p[f"W_i{g}"] for g in GATES], axis=-1)
    W_h = concat([p[f"W_h{g}"] for g in GATES], axis=-1)
    b = concat([p[f"b_i{g}"] + p[f"b_h{g}"] for g in GATES], axis=-1)
    return W_x, W_h, b


def _fused_cell(x_proj, h, c, W_h, hidden: int):
    z = x_proj + matmul(h, W_h)
    i = sigmoid(z[..., :hidden])
    f = sigmoid(z[..., hidden:2 * hidden])
    g = tanh(z[..., 2 * hidden:3 * hidden])
    o = sigmoid(z[..., 3 * hidden:])
    c = f * c + i * g
    return o * tanh(c), c


def lstm_step(layers: list[Params], x_t, states):
    """Advance every layer by one frame; returns the top hidden state and the new states."""
    new = []
    for p, (h, c) in zip(layers, states):
        h, c = lstm_cell(p, x_t, h, c)
        new.append((h, c))
        x_t = h
    return x_t, new


def lstm_run(layers: list[Params], x, states=None):
    """Run the stack over ``x`` (``[B, T, C]`` array or a list of per-step inputs).

    Numerically the same recurrence as repeated :func:`lstm_step`, with the
    gate weights fused and whole-sequence input projections.
    """
    steps = list(x) if isinstance(x, list) else None
    T = len(steps) if steps is not None else np.shape(x)[1]
    if T == 0:
        raise DimensionError("an LSTM needs at least one timestep")
    if states is None:
        first = steps[0] if steps is not None else np.asarray(x)[:, 0]
        first = first.data if isinstance(first, Tensor) else np.asarray(first)
        states = lstm_zero_state(layers, first.shape[:-1])
    new_states = []
    for p, (h, c) in zip(layers, states):
        hidden = p["W_hi"].shape[-1]
        W_x, W_h, b = fuse_gates(p)
        if steps is None:
            proj = matmul(np.asarray(x, dtype=np.float64), W_x) + b            # [B, T, 4h]
            projs = [proj[:, t] for t in range(T)]
        else:
            projs = [matmul(s, W_x) + b for s in steps]
        outs = []
        for t in range(T):
            h, c = _fused_cell(projs[t], h, c, W_h, hidden)
            outs.append(h)
        new_states.append((h, c))
        steps = outs
    return steps[-1], new_states


def init_lstm_net(rng: np.random.Generator, n_in: int, n_out: int, hidden: int = 128, layers: int = 2) -> Params:
    widths = [n_in] + [hidden] * layers
    return {"layers": [init_lstm_layer(rng, a, hidden) for a in widths[:-1]],
            "head": init_linear(rng, hidden, n_out)}


def lstm_forecast(params: Params, x) -> Tensor:
    """Velocity history ``[B, T, C]`` to ``[B, P*2]`` from the final top-layer hidden state."""
    top, _ = lstm_run(params["layers"], x)
    return linear(params["head"], top)


class LSTMForecaster(NeuralForecaster):
    """Two stacked LSTM layers over the velocities of every object, one-shot head."""

    output_kind = "velocity"

    def __init__(self, hidden_size: int = 128, num_layers: int = 2, epochs: int = 30, batch_size: int = 64,
                 lr: float = 1e-3, weight_decay: float = 0.01, patience: int = 5, seed: int = 0):
        self.hidden_size = hidden_size
        self.num_layers = num_layers
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.patience = patience
        self.seed = seed

    def _init_params(self, rng):
        return init_lstm_net(rng, self.n_objects_ * 2, self.forecast_steps_ * 2, self.hidden_size, self.num_layers)

    def _features(self, ws):
        v = self._norm_history(ws)[..., 2:4]
        return {"x": v.reshape(v.shape[0], v.shape[1], -1)}

    def _forward(self, params, feats, training, rng):
        out = lstm_forecast(params, feats["x"])
        return out.reshape(out.shape[0], -1, 2)


# -- convolutional context LSTM ---------------------------------------------------

CONV_SHAPE = (8, 2, 2, 5)   # out channels, (x, y) channels, objects, timesteps
N_FIELDS = len(FIELD_NAMES)


def init_cnn_lstm(rng: np.random.Generator, n_objects: int, n_out: int, hidden: int = 128, layers: int = 2,
                  conv_shape=CONV_SHAPE) -> Params:
    c_out, c_in, kh, kw = conv_shape
    if kh > n_objects:
        raise ConfigurationError(f"conv kernel spans {kh} objects but scenes have {n_objects}")
    fan = c_in * kh * kw
    seq_width = c_out * (n_objects - kh + 1)
    widths = [seq_width] + [hidden] * layers
    return {
        "conv": [{"K": uniform(rng, fan, conv_shape), "b": zeros((c_out, 1, 1))} for _ in FIELD_NAMES],
        "layers": [init_lstm_layer(rng, a, hidden, lead=(N_FIELDS,)) for a in widths[:-1]],
        "field_head": init_linear(rng, hidden, n_out, lead=(N_FIELDS,)),
        "head": init_linear(rng, N_FIELDS * n_out, n_out),
    }


def cnn_lstm_forward(params: Params, fields: dict, slope: float = 0.1) -> Tensor:
    """Four context fields to ``[B, P*2]``.

    Args:
        fields: maps each name in ``FIELD_NAMES`` to a ``[B, 2, N, T]`` image
            with the (x, y) components as channels, objects as rows and time
            as columns.
    """
    require_fields(fields, FIELD_NAMES)
    kw = params["conv"][0]["K"].shape[-1]
    seqs = []
    for name, conv in zip(FIELD_NAMES, params["conv"]):
        img = np.asarray(fields[name], dtype=np.float64)
        if img.shape[-1] < kw:  # left-pad short histories in time
            img = np.concatenate([np.zeros(img.shape[:-1] + (kw - img.shape[-1],)), img], axis=-1)
        y = leaky_relu(conv2d(img, conv["K"]) + conv["b"], slope)          # [B, C, N', T']
        B, C, R, T = y.shape
        seqs.append(y.transpose(0, 3, 1, 2).reshape(B, T, C * R))          # [B, T', C*N']
    seq = stack(seqs, axis=0)                                              # [F, B, T', C*N']
    top, _ = lstm_run(params["layers"], [seq[:, :, t] for t in range(seq.shape[2])])
    enc = linear(params["field_head"], top)                                # [F, B, P*2]
    return linear(params["head"], enc.transpose(1, 0, 2).reshape(enc.shape[1], -1))


def field_images(history_norm: np.ndarray, history_raw: np.ndarray, object_ids=None) -> dict:
    """Build the four ``[B, 2, N, T]`` field images.

    The velocity field comes from the normalized history; the three distance
    fields are computed from raw metres and are bounded by construction.
    """
    ctx = context_fields(history_raw, object_ids=object_ids)               # [B, F, T, N, 2]
    ctx[:, 0] = history_norm[..., 2:4]
    imgs = np.ascontiguousarray(ctx.transpose(0, 1, 4, 3, 2))              # [B, F, 2, N, T]
    return {name: imgs[:, i] for i, name in enumerate(FIELD_NAMES)}


class CNNLSTMForecaster(NeuralForecaster):
    """Per-field convolution and LSTM encoders fused by a dense head.

    ``output="position"`` regresses offsets from the last observed position;
    ``output="velocity"`` regresses velocities that are then integrated.
    """

    def __init__(self, hidden_size: int = 128, num_layers: int = 2, conv_channels: int = 8,
                 conv_kernel=(2, 5), slope: float = 0.1, output: str = "position", epochs: int = 30,
                 batch_size: int = 64, lr: float = 1e-3, weight_decay: float = 0.01, patience: int = 5,
                 seed: int = 0):
        self.hidden_size = hidden_size
        self.num_layers = num_layers
        self.conv_channels = conv_channels
        self.conv_kernel = conv_kernel
        self.slope = slope
        self.output = output
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.patience = patience
        self.seed = seed

    @property
    def output_kind(self) -> str:
        if self.output not in ("position", "velocity"):
            raise ConfigurationError(f"output must be 'position' or 'velocity', got {self.output!r}")
        return self.output

    def _init_params(self, rng):
        shape = (self.conv_channels, 2) + tuple(self.conv_kernel)
        return init_cnn_lstm(rng, self.n_objects_, self.forecast_steps_ * 2, self.hidden_size, self.num_layers,
                             shape)

    def _features(self, ws):
        return field_images(self._norm_history(ws), ws.history[..., :4])

    def _forward(self, params, feats, training, rng):
        out = cnn_lstm_forward(params, feats, self.slope)
        return out.reshape(out.shape[0], -1, 2)


__all__ = [
    "CNNLSTMForecaster", "LSTMForecaster", "cnn_lstm_forward", "field_images", "init_cnn_lstm",
    "init_lstm_layer", "init_lstm_net", "lstm_cell", "lstm_forecast", "lstm_run", "lstm_step",
]
