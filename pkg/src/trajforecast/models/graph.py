"""Recurrent history encoder, graph-attention interaction encoder and autoregressive decoder."""
from __future__ import annotations

import numpy as np

from ..autograd import Tensor, concat, leaky_relu, matmul, order_free_sum, relu, sigmoid, softmax, tanh
from ..data.graph import adjacency, check_neighbourhoods, fully_connected_edges, knn_edges
from ..data.series import BALL_TEAM, ConfigurationError
from ..nn import Params, init_linear, linear, uniform, zeros
from .base import NeuralForecaster
from .recurrent import init_lstm_layer, lstm_cell

MASKED = -1e30  # logit given to non-edges; exp underflows to exactly 0

# Sums over neighbours run in sorted order so relabelling nodes permutes the
# outputs bit for bit.


# -- graph attention ------------------------------------------------------------

def init_gat_layer(rng: np.random.Generator, n_in: int, n_out: int, heads: int = 1,
                   edge_distance: bool = False) -> Params:
    """Per-head projection ``W`` ``[K, n_in, n_out]`` and attention vector ``a`` ``[K, 2*n_out]``."""
    p = {"W": uniform(rng, n_in, (heads, n_in, n_out)), "a": uniform(rng, 2 * n_out, (heads, 2 * n_out))}
    if edge_distance:
        p["a_dist"] = zeros((heads, 1, 1))
    return p


def _heads(layer: Params) -> tuple[Tensor, Tensor]:
    W, a = layer["W"], layer["a"]
    if W.ndim == 2:  # single-head layout [n_in, n_out], [2*n_out]
        W, a = W.reshape(1, *W.shape), a.reshape(1, -1)
    return W, a


def gat_logits(layer: Params, h, adj: np.ndarray, dist: np.ndarray | None = None, slope: float = 0.2) -> tuple[Tensor, Tensor]:
    """Masked attention logits ``[..., K, N, N]`` and projected features ``[..., K, N, F_out]``."""
    W, a = _heads(layer)
    K, _, F = W.shape
    h = h if isinstance(h, Tensor) else Tensor(h)
    Wh = matmul(h.reshape(*h.shape[:-2], 1, *h.shape[-2:]), W)                   # [..., K, N, F]
    a_src = a[:, :F].reshape(K, F, 1)
    a_dst = a[:, F:].reshape(K, F, 1)
    src = matmul(Wh, a_src)                                                      # [..., K, N, 1]
    dst = matmul(Wh, a_dst)
    nd = dst.ndim
    e = src + dst.transpose(*range(nd - 2), nd - 1, nd - 2)                      # [..., K, N, N]
    if dist is not None and "a_dist" in layer:
        e = e + layer["a_dist"] * Tensor(np.asarray(dist)[..., None, :, :])
    e = leaky_relu(e, slope)
    mask = np.where(np.asarray(adj, dtype=bool), 0.0, MASKED)[..., None, :, :]
    return e + Tensor(mask), Wh


def gat_attention(layer: Params, h, adj: np.ndarray, dist: np.ndarray | None = None, slope: float = 0.2) -> Tensor:
    """Attention coefficients ``[..., K, N, N]``: row ``i`` is a softmax over the neighbours of ``i``.

    ``adj[i, j]`` marks ``j`` as a neighbour of ``i``.  Single-head layers
    (``W`` of shape ``[n_in, n_out]``) give ``K = 1``.
    """
    check_neighbourhoods(np.asarray(adj, dtype=bool))
    logits, _ = gat_logits(layer, h, adj, dist, slope)
    return softmax(logits, axis=-1, order_free=True)


def _neighbour_sum(alpha, Wh) -> Tensor:
    """``sum_j alpha_ij Wh_j`` for ``alpha`` ``[..., N, N]`` and ``Wh`` ``[..., N, F]``."""
    alpha = alpha if isinstance(alpha, Tensor) else Tensor(alpha)
    terms = alpha.reshape(*alpha.shape, 1) * Wh.reshape(*Wh.shape[:-2], 1, *Wh.shape[-2:])
    return order_free_sum(terms, axis=-2)


def gat_aggregate(layer: Params, h, alpha) -> Tensor:
    """``ReLU(sum_j alpha_ij W h_j)`` per head: ``[..., K, N, F_out]``."""
    W, _ = _heads(layer)
    h = h if isinstance(h, Tensor) else Tensor(h)
    Wh = matmul(h.reshape(*h.shape[:-2], 1, *h.shape[-2:]), W)
    return relu(_neighbour_sum(alpha, Wh))


def gat_multihead(layer: Params, h, adj: np.ndarray, dist: np.ndarray | None = None, slope: float = 0.2) -> Tensor:
    """Attention and aggregation for every head, concatenated per node: ``[..., N, K*F_out]``."""
    check_neighbourhoods(np.asarray(adj, dtype=bool))
    logits, Wh = gat_logits(layer, h, adj, dist, slope)
    out = relu(_neighbour_sum(softmax(logits, axis=-1, order_free=True), Wh))    # [..., K, N, F]
    nd = out.ndim
    out = out.transpose(*range(nd - 3), nd - 2, nd - 3, nd - 1)                  # [..., N, K, F]
    return out.reshape(*out.shape[:-2], -1)


# -- GRU history encoder ----------------------------------------------------------

def init_gru(rng: np.random.Generator, n_in: int, hidden: int) -> Params:
    p = {}
    for g in ("r", "z", "n"):
        p[f"W_i{g}"] = uniform(rng, hidden, (n_in, hidden))
        p[f"W_h{g}"] = uniform(rng, hidden, (hidden, hidden))
        p[f"b_i{g}"] = zeros((hidden,))
        p[f"b_h{g}"] = zeros((hidden,))
    return p


def gru_cell(p: Params, x_t, h_prev) -> Tensor:
    """Reset gate ``r``, update gate ``z``, candidate ``n = tanh(W_in x + b_in + r*(W_hn h + b_hn))``;
    ``h = (1 - z) * n + z * h_prev``."""
    r = sigmoid(matmul(x_t, p["W_ir"]) + p["b_ir"] + matmul(h_prev, p["W_hr"]) + p["b_hr"])
    z = sigmoid(matmul(x_t, p["W_iz"]) + p["b_iz"] + matmul(h_prev, p["W_hz"]) + p["b_hz"])
    n = tanh(matmul(x_t, p["W_in"]) + p["b_in"] + r * (matmul(h_prev, p["W_hn"]) + p["b_hn"]))
    return (1.0 - z) * n + z * h_prev


def history_encode(params: Params, traj) -> Tensor:
    """Final GRU state per object: ``[..., H, N, F]`` to ``[..., N, hidden]``; weights are shared across objects."""
    traj = np.asarray(traj, dtype=np.float64)
    if traj.shape[-3] < 1:
        raise ValueError("history encoding needs at least one timestep")
    hidden = params["W_hr"].shape[-1]
    h = Tensor(np.zeros(traj.shape[:-3] + traj.shape[-2:-1] + (hidden,)))
    for t in range(traj.shape[-3]):
        h = gru_cell(params, traj[..., t, :, :], h)
    return h


def interaction_encode(layers: list[Params], codes, node_features, adj: np.ndarray,
                       dist: np.ndarray | None = None) -> Tensor:
    """GAT stack over ``[codes, node_features]`` per node: ``[..., N, K*F_out]``."""
    x = concat([codes, Tensor(np.asarray(node_features, dtype=np.float64))], axis=-1)
    for layer in layers:
        x = gat_multihead(layer, x, adj, dist)
    return x


# -- decoder ------------------------------------------------------------------------

def init_decoder(rng: np.random.Generator, ctx_width: int, target_width: int, hidden: int = 128) -> Params:
    return {
        "init": init_linear(rng, ctx_width, hidden),
        "cell": init_lstm_layer(rng, 2 + ctx_width, hidden),
        "out": init_linear(rng, hidden, 2),
        "residual": init_linear(rng, target_width, 2),
    }


def decoder_start(params: Params, g_target, r_target, target_state) -> dict:
    """Decoder state before the first step: ``h0 = tanh(init([g, r]))``, ``c0 = 0``, previous output 0."""
    ctx = concat([g_target, r_target], axis=-1)
    h = tanh(linear(params["init"], ctx))
    B = h.shape[0]
    return {"ctx": ctx, "h": h, "c": Tensor(np.zeros(h.shape)), "y": Tensor(np.zeros((B, 2))),
            "residual": linear(params["residual"], Tensor(np.asarray(target_state, dtype=np.float64)))}


def decode_steps(params: Params, state: dict, steps: int) -> tuple[list[Tensor], dict]:
    """Roll the decoder ``steps`` times, feeding each output back as the next input."""
    h, c, y = state["h"], state["c"], state["y"]
    outs = []
    for _ in range(steps):
        h, c = lstm_cell(params["cell"], concat([y, state["ctx"]], axis=-1), h, c)
        y = linear(params["out"], h) + state["residual"]
        outs.append(y)
    return outs, dict(state, h=h, c=c, y=y)


def fusion_decode(params: Params, g_target, r_target, target_state, steps: int) -> Tensor:
    """Autoregressive forecast ``[B, P, 2]`` for the target node."""
    if steps < 1:
        raise ValueError("decode at least one step")
    outs, _ = decode_steps(params, decoder_start(params, g_target, r_target, target_state), steps)
    return concat([o.reshape(o.shape[0], 1, 2) for o in outs], axis=1)


def role_one_hot(team_ids: np.ndarray) -> np.ndarray:
    """``[B, N, 3]``: ball, teammate of the target (object 0, including itself), opponent."""
    team_ids = np.asarray(team_ids)
    ball = team_ids == BALL_TEAM
    mate = (team_ids == team_ids[:, :1]) & ~ball
    return np.stack([ball, mate, ~ball & ~mate], axis=-1).astype(float)


class GNNForecaster(NeuralForecaster):
    """History GRU, graph attention over the scene and an autoregressive LSTM decoder."""

    output_kind = "position"

    def __init__(self, gru_hidden: int = 64, gat_layers: int = 1, heads: int = 4, gat_width: int = 16,
                 decoder_hidden: int = 128, edges="fully_connected", edge_distance: bool = False, epochs: int = 30,
                 batch_size: int = 64, lr: float = 1e-3, weight_decay: float = 0.01, patience: int = 5,
                 seed: int = 0):
        self.gru_hidden = gru_hidden
        self.gat_layers = gat_layers
        self.heads = heads
        self.gat_width = gat_width
        self.decoder_hidden = decoder_hidden
        self.edges = edges
        self.edge_distance = edge_distance
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.patience = patience
        self.seed = seed

    def _init_params(self, rng):
        n_node = self.gru_hidden + 4 + 3
        gat = []
        for _ in range(self.gat_layers):
            gat.append(init_gat_layer(rng, n_node, self.gat_width, self.heads, self.edge_distance))
            n_node = self.heads * self.gat_width
        return {"gru": init_gru(rng, 4, self.gru_hidden), "gat": gat,
                "decoder": init_decoder(rng, n_node + self.gru_hidden, 4, self.decoder_hidden)}

    def _adjacency(self, last_pos: np.ndarray) -> np.ndarray:
        B, N = last_pos.shape[:2]
        if self.edges == "fully_connected":
            return np.broadcast_to(adjacency(fully_connected_edges(N), N), (B, N, N))
        if isinstance(self.edges, (tuple, list)) and self.edges[0] == "knn":
            return np.stack([adjacency(knn_edges(p, int(self.edges[1])), N) for p in last_pos])
        raise ConfigurationError(f"unknown edge rule {self.edges!r}")

    def _features(self, ws):
        hist = self._norm_history(ws)
        last = hist[:, -1]
        pos = ws.history[:, -1, :, :2]
        return {"traj": hist, "nodes": np.concatenate([last, role_one_hot(ws.team_ids)], axis=-1),
                "target": last[:, 0], "adj": self._adjacency(pos),
                "dist": np.linalg.norm(pos[:, :, None] - pos[:, None], axis=-1)}

    def _forward(self, params, feats, training, rng):
        r = history_encode(params["gru"], feats["traj"])
        g = interaction_encode(params["gat"], r, feats["nodes"], feats["adj"],
                               feats["dist"] if self.edge_distance else None)
        return fusion_decode(params["decoder"], g[:, 0], r[:, 0], feats["target"], self.forecast_steps_)
