"""Encoder-only transformer with a causal convolutional temporal embedding."""
from __future__ import annotations

import numpy as np

from ..autograd import DimensionError, Tensor, causal_conv1d, layer_norm, matmul, order_free_sum, relu, softmax
from ..data.series import ConfigurationError
from ..nn import Params, init_linear, linear, ones, uniform, zeros
from .base import NeuralForecaster


def init_embedding(rng: np.random.Generator, n_in: int, d_model: int, kernel_size: int = 3) -> Params:
    return {"K": uniform(rng, kernel_size * n_in, (kernel_size, n_in, d_model)), "b": zeros((d_model,))}


def temporal_embed(emb: Params, x) -> Tensor:
    """``[B, T, C]`` to ``[B, T, d_model]`` by a causal convolution plus bias."""
    c_in = emb["K"].shape[1]
    width = (x.shape if isinstance(x, Tensor) else np.shape(x))[-1]
    if width != c_in:
        raise DimensionError(f"embedding expects {c_in} features per step, got {width}")
    return causal_conv1d(x, emb["K"]) + emb["b"]


def sinusoidal_encoding(T: int, d_model: int) -> np.ndarray:
    pos = np.arange(T)[:, None]
    i = np.arange(d_model)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d_model)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def head_width(d_model: int, heads: int, d_k: int | None) -> int:
    if d_k is not None:
        return int(d_k)
    if d_model % heads:
        raise ConfigurationError(f"d_model={d_model} is not divisible by {heads} heads")
    return d_model // heads


def init_block(rng: np.random.Generator, d_model: int, heads: int = 8, d_ff: int = 1024,
               d_k: int | None = None) -> Params:
    dk = head_width(d_model, heads, d_k)
    return {
        "W_Q": uniform(rng, d_model, (heads, d_model, dk)),
        "W_K": uniform(rng, d_model, (heads, d_model, dk)),
        "W_V": uniform(rng, d_model, (heads, d_model, dk)),
        "out": init_linear(rng, heads * dk, d_model),
        "ff1": init_linear(rng, d_model, d_ff),
        "ff2": init_linear(rng, d_ff, d_model),
        "ln1": {"gain": ones((d_model,)), "bias": zeros((d_model,))},
        "ln2": {"gain": ones((d_model,)), "bias": zeros((d_model,))},
    }


def attention_weights(block: Params, X, order_free: bool = False) -> Tensor:
    """Per-head ``softmax(Q K^T / sqrt(d_k))``: ``[B, heads, T, T]`` with no mask."""
    X = X if isinstance(X, Tensor) else Tensor(X)
    Xh = X.reshape(X.shape[0], 1, *X.shape[1:])
    Q = matmul(Xh, block["W_Q"])
    K = matmul(Xh, block["W_K"])
    dk = block["W_Q"].shape[-1]
    return softmax(matmul(Q, K.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dk)), axis=-1, order_free=order_free)


def mha(block: Params, X, order_free: bool = False) -> Tensor:
    """Multi-head scaled dot-product self-attention, heads concatenated then projected: ``[B, T, d_model]``.

    ``order_free=True`` sums over keys in sorted order, so permuting the
    timesteps permutes the output bit for bit; it costs ``T*T*d_k`` memory per head.
    """
    X = X if isinstance(X, Tensor) else Tensor(X)
    if X.shape[-1] != block["W_Q"].shape[1]:
        raise DimensionError(f"input width {X.shape[-1]} != d_model {block['W_Q'].shape[1]}")
    Xh = X.reshape(X.shape[0], 1, *X.shape[1:])
    V = matmul(Xh, block["W_V"])                                      # [B, h, T, dk]
    alpha = attention_weights(block, X, order_free)
    if order_free:
        terms = alpha.reshape(*alpha.shape, 1) * V.reshape(V.shape[0], V.shape[1], 1, *V.shape[2:])
        mixed = order_free_sum(terms, axis=-2)
    else:
        mixed = matmul(alpha, V)
    heads = mixed.transpose(0, 2, 1, 3)
    return linear(block["out"], heads.reshape(X.shape[0], X.shape[1], -1))


def ffn(block: Params, x) -> Tensor:
    """``ReLU(x W1 + b1) W2 + b2``."""
    return linear(block["ff2"], relu(linear(block["ff1"], x)))


def encoder_block(block: Params, X, order_free: bool = False) -> Tensor:
    """Post-norm block: ``LN(X + MHA(X))`` then ``LN(. + FFN(.))``."""
    X = X if isinstance(X, Tensor) else Tensor(X)
    X = layer_norm(X + mha(block, X, order_free), block["ln1"]["gain"], block["ln1"]["bias"])
    return layer_norm(X + ffn(block, X), block["ln2"]["gain"], block["ln2"]["bias"])


def init_transformer(rng: np.random.Generator, n_in: int, n_out: int, d_model: int = 256, blocks: int = 6,
                     heads: int = 8, d_ff: int = 1024, d_k: int | None = None, kernel_size: int = 3) -> Params:
    return {"embed": init_embedding(rng, n_in, d_model, kernel_size),
            "blocks": [init_block(rng, d_model, heads, d_ff, d_k) for _ in range(blocks)],
            "head": init_linear(rng, d_model, n_out)}


def transformer_forecast(params: Params, x, pooling: str = "last", positional: bool = False) -> Tensor:
    """History ``[B, T, C]`` to ``[B, P*2]`` in one shot."""
    X = temporal_embed(params["embed"], x)
    if positional:
        X = X + Tensor(sinusoidal_encoding(X.shape[1], X.shape[2]))
    for block in params["blocks"]:
        X = encoder_block(block, X)
    if pooling == "last":
        pooled = X[:, -1]
    elif pooling == "mean":
        pooled = X.mean(axis=1)
    else:
        raise ConfigurationError(f"unknown pooling {pooling!r}")
    return linear(params["head"], pooled)


class TransformerForecaster(NeuralForecaster):
    """Convolutional embedding of every object's position and velocity, post-norm encoder blocks, one-shot head.

    ``d_k=None`` uses ``d_model // heads`` per head; an explicit ``d_k`` gives
    rectangular per-head projections of that width.
    """

    output_kind = "position"

    def __init__(self, d_model: int = 256, num_blocks: int = 6, heads: int = 8, d_ff: int = 1024,
                 d_k: int | None = None, kernel_size: int = 3, pooling: str = "last", positional: bool = False,
                 lr_schedule: str = "constant", warmup_steps: int = 4000, epochs: int = 30, batch_size: int = 64,
                 lr: float = 1e-3, weight_decay: float = 0.01, patience: int = 5, seed: int = 0):
        self.d_model = d_model
        self.num_blocks = num_blocks
        self.heads = heads
        self.d_ff = d_ff
        self.d_k = d_k
        self.kernel_size = kernel_size
        self.pooling = pooling
        self.positional = positional
        self.lr_schedule = lr_schedule
        self.warmup_steps = warmup_steps
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.patience = patience
        self.seed = seed

    def _init_params(self, rng):
        return init_transformer(rng, self.n_objects_ * 4, self.forecast_steps_ * 2, self.d_model,
                                self.num_blocks, self.heads, self.d_ff, self.d_k, self.kernel_size)

    def _features(self, ws):
        x = self._norm_history(ws)
        return {"x": x.reshape(x.shape[0], x.shape[1], -1)}

    def _forward(self, params, feats, training, rng):
        out = transformer_forecast(params, feats["x"], self.pooling, self.positional)
        return out.reshape(out.shape[0], -1, 2)
