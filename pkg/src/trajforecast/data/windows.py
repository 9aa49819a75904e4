"""Sliding (history, forecast) windows cut from scene tensors."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from .series import BALL_TEAM, FrameSeries

logger = logging.getLogger(__name__)

FEATURES = ("pos_x", "pos_y", "v_x", "v_y")


@dataclass
class WindowSet:
    """Stacked windows.

    ``history`` is ``[B, H, N, F]`` and ``future`` is ``[B, P, N, F]``.  After
    :func:`expand_targets`, object 0 of every sample is the forecast target.
    """

    history: np.ndarray
    future: np.ndarray
    last_pos: np.ndarray
    team_ids: np.ndarray
    object_ids: np.ndarray
    keys: list[tuple] = field(default_factory=list)
    stride: int = 1
    feature_names: tuple[str, ...] = FEATURES
    target_first: bool = False

    def __len__(self) -> int:
        return self.history.shape[0]

    @property
    def H(self) -> int:
        return self.history.shape[1]

    @property
    def P(self) -> int:
        return self.future.shape[1]

    @property
    def n_objects(self) -> int:
        return self.history.shape[2]

    def subset(self, idx) -> "WindowSet":
        idx = np.asarray(idx, dtype=int)
        return WindowSet(self.history[idx], self.future[idx], self.last_pos[idx], self.team_ids[idx],
                         self.object_ids[idx], [self.keys[i] for i in idx], self.stride,
                         self.feature_names, self.target_first)

    def shuffled(self, rng: np.random.Generator) -> "WindowSet":
        return self.subset(rng.permutation(len(self)))

    def target_positions(self) -> np.ndarray:
        """Future (x, y) of the target object, ``[B, P, 2]``."""
        return self.future[:, :, 0, :2]

    def hashes(self) -> list[str]:
        return [
            hashlib.sha1(np.ascontiguousarray(h).tobytes() + np.ascontiguousarray(f).tobytes()).hexdigest()
            for h, f in zip(self.history[:, :, 0], self.future[:, :, 0])
        ]


def empty_windows(H: int, P: int, N: int, F: int = len(FEATURES), stride: int = 1) -> WindowSet:
    return WindowSet(np.zeros((0, H, N, F)), np.zeros((0, P, N, F)), np.zeros((0, N, 2)),
                     np.zeros((0, N), dtype=int), np.zeros((0, N), dtype=int), [], stride)


def window_count(T: int, H: int, P: int, stride: int = 1) -> int:
    return 0 if T < H + P else (T - H - P) // stride + 1


def make_windows(series: FrameSeries, H: int, P: int, stride: int = 1) -> WindowSet:
    """Cut every admissible ``(history, forecast)`` window at ``stride``."""
    if H < 1 or P < 1 or stride < 1:
        raise ValueError("H, P and stride must be positive")
    T, N, F = series.values.shape
    n = window_count(T, H, P, stride)
    if n == 0:
        logger.warning("make_windows: series %s/%s has %d frames < H+P=%d; no windows",
                       series.game_id, series.event_id, T, H + P)
        return empty_windows(H, P, N, F, stride)
    starts = np.arange(n) * stride
    view = np.lib.stride_tricks.sliding_window_view(series.values, H + P, axis=0)  # [T', N, F, H+P]
    win = np.moveaxis(view[starts], -1, 1)  # [n, H+P, N, F]
    history = np.ascontiguousarray(win[:, :H])
    future = np.ascontiguousarray(win[:, H:])
    pos_idx = [series.feature_names.index("pos_x"), series.feature_names.index("pos_y")]
    last_pos = history[:, -1][..., pos_idx]
    keys = [(series.game_id, series.event_id, int(s)) for s in starts]
    return WindowSet(history, future, last_pos,
                     np.broadcast_to(series.team_ids, (n, N)).copy(),
                     np.broadcast_to(series.object_ids, (n, N)).copy(),
                     keys, stride, tuple(series.feature_names))


def concat_windows(sets: list[WindowSet]) -> WindowSet:
    sets = [s for s in sets if len(s)]
    if not sets:
        raise ValueError("no windows to concatenate")
    return WindowSet(
        np.concatenate([s.history for s in sets]),
        np.concatenate([s.future for s in sets]),
        np.concatenate([s.last_pos for s in sets]),
        np.concatenate([s.team_ids for s in sets]),
        np.concatenate([s.object_ids for s in sets]),
        [k for s in sets for k in s.keys],
        sets[0].stride,
        sets[0].feature_names,
        all(s.target_first for s in sets),
    )


def expand_targets(ws: WindowSet, targets="players", rng: np.random.Generator | None = None,
                   per_window: int | None = None) -> WindowSet:
    """One sample per (window, target object), with the target moved to index 0.

    Args:
        targets: ``"players"`` (every non-ball object) or an explicit list of
            object indices.
        per_window: if set, draw this many targets per window with ``rng``.
    """
    N = ws.n_objects
    rows, perms, tkeys = [], [], []
    for b in range(len(ws)):
        if targets == "players":
            cand = [n for n in range(N) if ws.team_ids[b, n] != BALL_TEAM]
        else:
            cand = list(targets)
        if per_window is not None and per_window < len(cand):
            if rng is None:
                raise ValueError("per_window sampling needs rng")
            cand = sorted(rng.choice(cand, size=per_window, replace=False).tolist())
        for n in cand:
            perm = [n] + [m for m in range(N) if m != n]
            rows.append(b)
            perms.append(perm)
            tkeys.append(ws.keys[b] + (int(ws.object_ids[b, n]),))
    if not rows:
        return WindowSet(ws.history[:0], ws.future[:0], ws.last_pos[:0], ws.team_ids[:0],
                         ws.object_ids[:0], [], ws.stride, ws.feature_names, True)
    rows = np.array(rows)
    perms = np.array(perms)
    take = lambda a, ax: np.take_along_axis(a[rows], perms.reshape((len(rows),) + (1,) * (ax - 1) + (N,) + (1,) * (a.ndim - ax - 1)), axis=ax)  # noqa: E731
    return WindowSet(
        take(ws.history, 2), take(ws.future, 2), take(ws.last_pos, 1),
        take(ws.team_ids, 1), take(ws.object_ids, 1), tkeys, ws.stride, ws.feature_names, True,
    )
