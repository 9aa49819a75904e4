"""Legendre memory unit: a fixed linear state-space memory feeding a nonlinear hidden state."""
from __future__ import annotations

import numpy as np
from scipy.linalg import expm

from ..autograd import DimensionError, Tensor, dropout, matmul, tanh
from ..data.series import ConfigurationError
from ..nn import Params, init_linear, linear, uniform
from .base import NeuralForecaster


def lmu_matrices(d: int, scaled: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """State matrices of order ``d``.

    ``A[i, j] = -1`` for ``i < j`` and ``(-1)**(i - j + 1)`` otherwise;
    ``B[i] = (2i + 1) * (-1)**i``.  ``scaled=True`` multiplies row ``i`` of
    ``A`` by ``2i + 1``, the variant used by the original memory cell.
    """
    if d < 1:
        raise ValueError(f"memory order must be >= 1, got {d}")
    i = np.arange(d)[:, None]
    j = np.arange(d)[None, :]
    A = np.where(i < j, -1.0, (-1.0) ** (i - j + 1))
    if scaled:
        A = A * (2 * i + 1)
    B = (2 * np.arange(d) + 1) * (-1.0) ** np.arange(d)
    return A, B


def discretize(A, B, theta: float, method: str = "zoh", dt: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Discrete-time ``(A_bar, B_bar)`` for the system ``theta * m' = A m + B u`` sampled every ``dt``.

    ``zoh`` exponentiates the augmented matrix ``[[A, B], [0, 0]] * dt / theta``
    so that no inverse of ``A`` is formed; ``euler`` is the first-order step.
    """
    if theta <= 0:
        raise ValueError(f"theta must be positive, got {theta}")
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64).reshape(-1)
    d = A.shape[0]
    if A.shape != (d, d) or B.shape != (d,):
        raise DimensionError(f"A must be [d, d] and B [d], got {A.shape} and {B.shape}")
    scale = dt / theta
    if method == "euler":
        return np.eye(d) + scale * A, scale * B
    if method == "zoh":
        aug = np.zeros((d + 1, d + 1))
        aug[:d, :d] = A * scale
        aug[:d, d] = B * scale
        E = expm(aug)
        if not np.isfinite(E).all():
            raise FloatingPointError("matrix exponential of the augmented system is not finite")
        return E[:d, :d], E[:d, d]
    raise ValueError(f"unknown discretization {method!r}")


def init_lmu_layer(rng: np.random.Generator, n_in: int, hidden: int, order: int) -> Params:
    return {
        "e_x": uniform(rng, n_in, (n_in, 1)),
        "e_h": uniform(rng, hidden, (hidden, 1)),
        "e_m": uniform(rng, order, (order, 1)),
        "W_x": uniform(rng, n_in, (n_in, hidden)),
        "W_h": uniform(rng, hidden, (hidden, hidden)),
        "W_m": uniform(rng, order, (order, hidden)),
    }


def lmu_cell(p: Params, x_t, h_prev, m_prev, A_bar: np.ndarray, B_bar: np.ndarray) -> tuple[Tensor, Tensor]:
    """One step: scalar drive ``u``, linear memory update, then ``h = tanh(W_x x + W_h h + W_m m)``.

    ``A_bar``/``B_bar`` are constants; ``x_t`` is ``[B, n_in]``, ``h_prev``
    ``[B, hidden]`` and ``m_prev`` ``[B, order]``.
    """
    n_in = p["W_x"].shape[0]
    width = (x_t.shape if isinstance(x_t, Tensor) else np.shape(x_t))[-1]
    if width != n_in:
        raise DimensionError(f"cell input width {width} != {n_in}")
    if A_bar.shape[0] != p["W_m"].shape[0]:
        raise DimensionError(f"memory order {A_bar.shape[0]} != {p['W_m'].shape[0]}")
    u = matmul(x_t, p["e_x"]) + matmul(h_prev, p["e_h"]) + matmul(m_prev, p["e_m"])     # [B, 1]
    m = matmul(m_prev, Tensor(A_bar.T)) + u * Tensor(B_bar[None, :])
    h = tanh(matmul(x_t, p["W_x"]) + matmul(h_prev, p["W_h"]) + matmul(m, p["W_m"]))
    return h, m


def lmu_layer(p: Params, steps: list, A_bar: np.ndarray, B_bar: np.ndarray, state=None):
    """Run one layer over a list of per-step inputs; returns hidden outputs and the final ``(h, m)``."""
    if not steps:
        raise DimensionError("an LMU needs at least one timestep")
    if state is None:
        first = steps[0].data if isinstance(steps[0], Tensor) else np.asarray(steps[0])
        batch = first.shape[:-1]
        state = (Tensor(np.zeros(batch + (p["W_h"].shape[0],))), Tensor(np.zeros(batch + (A_bar.shape[0],))))
    h, m = state
    outs = []
    for x_t in steps:
        h, m = lmu_cell(p, x_t, h, m, A_bar, B_bar)
        outs.append(h)
    return outs, (h, m)


def init_lmu_net(rng: np.random.Generator, n_in: int, n_out: int, hidden: int = 256, order: int = 256,
                 layers: int = 2) -> Params:
    widths = [n_in] + [hidden] * layers
    return {"layers": [init_lmu_layer(rng, a, hidden, order) for a in widths[:-1]],
            "head": init_linear(rng, hidden, n_out)}


def lmu_forecast(params: Params, x, A_bar: np.ndarray, B_bar: np.ndarray, dropout_p: float = 0.0,
                 training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """History ``[B, T, C]`` to ``[B, P*2]``; dropout sits between stacked layers, the head reads the last hidden state."""
    steps = [x[:, t] for t in range(np.shape(x)[1])]
    layers = params["layers"]
    for k, p in enumerate(layers):
        steps, _ = lmu_layer(p, steps, A_bar, B_bar)
        if k < len(layers) - 1:
            steps = [dropout(s, dropout_p, rng, training) for s in steps]
    return linear(params["head"], steps[-1])


INPUTS = {"vel": (2, 4), "pos_vel": (0, 4)}


class LMUForecaster(NeuralForecaster):
    """Two stacked memory layers over every object's history, predicting position offsets.

    ``inputs="vel"`` feeds each object's velocity (2 values per object);
    ``inputs="pos_vel"`` feeds position and velocity (4 per object).
    """

    output_kind = "position"

    def __init__(self, hidden_size: int = 256, order: int = 256, theta: float = 25.0, method: str = "zoh",
                 scaled: bool = False, num_layers: int = 2, dropout: float = 0.1, inputs: str = "vel",
                 epochs: int = 30, batch_size: int = 64, lr: float = 1e-3, weight_decay: float = 0.01,
                 patience: int = 5, seed: int = 0):
        self.hidden_size = hidden_size
        self.order = order
        self.theta = theta
        self.method = method
        self.scaled = scaled
        self.num_layers = num_layers
        self.dropout = dropout
        self.inputs = inputs
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.patience = patience
        self.seed = seed

    def _channels(self) -> tuple[int, int]:
        if self.inputs not in INPUTS:
            raise ConfigurationError(f"inputs must be one of {sorted(INPUTS)}, got {self.inputs!r}")
        return INPUTS[self.inputs]

    def _init_params(self, rng):
        lo, hi = self._channels()
        self.A_bar_, self.B_bar_ = discretize(*lmu_matrices(self.order, self.scaled), self.theta, self.method)
        return init_lmu_net(rng, self.n_objects_ * (hi - lo), self.forecast_steps_ * 2, self.hidden_size,
                            self.order, self.num_layers)

    def _features(self, ws):
        lo, hi = self._channels()
        x = self._norm_history(ws)[..., lo:hi]
        return {"x": x.reshape(x.shape[0], x.shape[1], -1)}

    def _forward(self, params, feats, training, rng):
        out = lmu_forecast(params, feats["x"], self.A_bar_, self.B_bar_, self.dropout, training, rng)
        return out.reshape(out.shape[0], -1, 2)
