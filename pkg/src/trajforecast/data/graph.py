"""Scene graphs over the objects of a single frame."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .series import ConfigurationError


@dataclass
class SceneGraph:
    """Node features plus directed edges.

    An edge ``(s, t)`` makes ``t`` a neighbour of ``s``: node ``s`` attends over
    the targets of its outgoing edges.
    """

    node_features: np.ndarray   # [N, F_node]
    edge_index: np.ndarray      # [2, E]
    edge_attr: np.ndarray | None = None  # [E] distances, metres

    @property
    def n_nodes(self) -> int:
        return self.node_features.shape[0]

    def adjacency(self) -> np.ndarray:
        return adjacency(self.edge_index, self.n_nodes)


def adjacency(edge_index: np.ndarray, n: int) -> np.ndarray:
    a = np.zeros((n, n), dtype=bool)
    a[edge_index[0], edge_index[1]] = True
    return a


def fully_connected_edges(n: int) -> np.ndarray:
    s, t = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    keep = s != t
    return np.stack([s[keep], t[keep]])


def knn_edges(pos: np.ndarray, k: int) -> np.ndarray:
    n = len(pos)
    if not 1 <= k < n:
        raise ValueError(f"knn needs 1 <= k < N, got k={k}, N={n}")
    d = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
    np.fill_diagonal(d, np.inf)
    nbrs = np.argsort(d, axis=1, kind="stable")[:, :k]
    return np.stack([np.repeat(np.arange(n), k), nbrs.reshape(-1)])


def team_one_hot(team_ids: np.ndarray, vocabulary: np.ndarray | None = None) -> np.ndarray:
    vocab = np.unique(team_ids) if vocabulary is None else np.asarray(vocabulary)
    return (np.asarray(team_ids)[:, None] == vocab[None, :]).astype(float)


def build_graph(frame: np.ndarray, team_ids: np.ndarray, rule="fully_connected",
                team_vocabulary: np.ndarray | None = None) -> SceneGraph:
    """Build a graph from one frame of ``[N, 4]`` features (pos, vel).

    Args:
        rule: ``"fully_connected"`` or ``("knn", k)``.
    """
    frame = np.asarray(frame, dtype=np.float64)
    n = frame.shape[0]
    if n < 2:
        raise ConfigurationError("a scene graph needs at least two nodes")
    pos = frame[:, :2]
    if rule == "fully_connected":
        edges = fully_connected_edges(n)
    elif isinstance(rule, (tuple, list)) and rule[0] == "knn":
        edges = knn_edges(pos, int(rule[1]))
    else:
        raise ValueError(f"unknown edge rule {rule!r}")
    feats = np.concatenate([frame[:, :4], team_one_hot(team_ids, team_vocabulary)], axis=1)
    dist = np.linalg.norm(pos[edges[0]] - pos[edges[1]], axis=1)
    return SceneGraph(feats, edges, dist)


def check_neighbourhoods(adj: np.ndarray) -> None:
    """Raise if any node (in any leading batch entry) has no neighbour."""
    n = adj.shape[-1]
    empty = (~adj.any(axis=-1)).reshape(-1, n).any(axis=0)
    if empty.any():
        raise ConfigurationError(f"node(s) {np.flatnonzero(empty).tolist()} have no neighbours")
