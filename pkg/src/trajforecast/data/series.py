"""Raw tracking games and uniformly resampled scene tensors."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

logger = logging.getLogger(__name__)

DT = 0.04
FT_TO_M = 0.3048
BALL_TEAM = -1
# NBA court, metres
COURT_LENGTH = 94 * FT_TO_M
COURT_WIDTH = 50 * FT_TO_M
HOOPS = np.array([[5.25 * FT_TO_M, 25 * FT_TO_M], [88.75 * FT_TO_M, 25 * FT_TO_M]])


class ConfigurationError(ValueError):
    """Data or experiment settings cannot be honoured."""


@dataclass
class Moment:
    t: float
    object_ids: np.ndarray
    team_ids: np.ndarray
    xy: np.ndarray
    valid: bool = True


@dataclass
class RawGame:
    game_id: str
    events: list[list[Moment]]
    court_length: float = COURT_LENGTH
    court_width: float = COURT_WIDTH
    teams: dict[int, str] = field(default_factory=dict)

    @property
    def n_moments(self) -> int:
        return sum(len(e) for e in self.events)

    @property
    def n_flagged(self) -> int:
        return sum(not m.valid for e in self.events for m in e)

    @property
    def object_ids(self) -> np.ndarray:
        ids = [m.object_ids for e in self.events for m in e]
        return np.unique(np.concatenate(ids)) if ids else np.array([], dtype=int)


def validate_game(game: RawGame, n_objects: int | None = None, require_ball: bool = False) -> RawGame:
    """Flag moments whose object set is incomplete.

    The expected set is every object seen in the event.  With ``n_objects``
    set, moments must also hold exactly that many objects; ``require_ball``
    rejects moments without a ball (team id -1).
    """
    for event in game.events:
        if not event:
            continue
        expected = np.unique(np.concatenate([m.object_ids for m in event]))
        prev_t = -np.inf
        for m in event:
            ids = np.unique(m.object_ids)
            ok = len(ids) == len(m.object_ids) and np.array_equal(ids, expected)
            if n_objects is not None:
                ok = ok and len(ids) == n_objects
            if require_ball:
                ok = ok and bool(np.any(m.team_ids == BALL_TEAM))
            if m.t < prev_t:
                ok = False
            m.valid = bool(ok) and m.valid
            prev_t = max(prev_t, m.t)
    return game


@dataclass
class FrameSeries:
    """Uniform 25 Hz scene: ``values[t, n, f]`` with named features."""

    times: np.ndarray
    values: np.ndarray
    feature_names: tuple[str, ...]
    object_ids: np.ndarray
    team_ids: np.ndarray
    game_id: str = ""
    event_id: int = 0

    def __post_init__(self):
        if self.values.ndim != 3:
            raise ValueError(f"values must be [T, N, F], got {self.values.shape}")
        if len(self.times) != self.values.shape[0]:
            raise ValueError("times and values disagree on T")
        if len(self.feature_names) != self.values.shape[2]:
            raise ValueError("feature_names and values disagree on F")

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def n_objects(self) -> int:
        return self.values.shape[1]

    @property
    def teams(self) -> set[int]:
        return {int(t) for t in self.team_ids if t != BALL_TEAM}

    def feature(self, *names: str) -> np.ndarray:
        idx = [self.feature_names.index(n) for n in names]
        return self.values[..., idx]

    @property
    def positions(self) -> np.ndarray:
        return self.feature("pos_x", "pos_y")


def _object_order(object_ids: np.ndarray, team_ids: np.ndarray) -> np.ndarray:
    # ball first, then by team, then by id
    ball_last = np.where(team_ids == BALL_TEAM, 0, 1)
    return np.lexsort((object_ids, team_ids, ball_last))


def _grid(t0: float, t1: float) -> np.ndarray:
    n = int(np.floor((t1 - t0) / DT + 1e-9)) + 1
    return t0 + DT * np.arange(n)


def _interp_exact(grid: np.ndarray, t: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = np.interp(grid, t, v)
    idx = np.clip(np.searchsorted(t, grid), 0, len(t) - 1)
    for cand in (idx, np.maximum(idx - 1, 0)):
        hit = np.abs(t[cand] - grid) < 1e-9
        out[hit] = v[cand[hit]]
    return out


def resample_uniform(
    game: RawGame,
    min_frames: int = 2,
    max_gap: float = 0.5,
) -> list[FrameSeries]:
    """Linearly interpolate valid moments onto a 0.04 s grid.

    Spans are split wherever consecutive valid moments are more than
    ``max_gap`` seconds apart or the object set changes.  Spans yielding
    fewer than ``min_frames`` grid points are dropped and counted in a
    warning.
    """
    out: list[FrameSeries] = []
    dropped = 0
    for event_id, event in enumerate(game.events):
        moments = [m for m in event if m.valid]
        spans: list[list[Moment]] = []
        for m in moments:
            if spans:
                last = spans[-1][-1]
                same = np.array_equal(np.sort(m.object_ids), np.sort(last.object_ids))
                if m.t <= last.t:
                    continue  # duplicated timestamp
                if m.t - last.t <= max_gap and same:
                    spans[-1].append(m)
                    continue
            spans.append([m])
        for span in spans:
            if len(span) < 2:
                dropped += 1
                continue
            ids = span[0].object_ids
            teams = span[0].team_ids
            order = _object_order(ids, teams)
            ids, teams = ids[order], teams[order]
            t = np.array([m.t for m in span])
            xy = np.stack([_aligned(m, ids) for m in span])  # [S, N, 2]
            grid = _grid(t[0], t[-1])
            if len(grid) < min_frames:
                dropped += 1
                continue
            vals = np.empty((len(grid), len(ids), 2))
            for n in range(len(ids)):
                for c in range(2):
                    vals[:, n, c] = _interp_exact(grid, t, xy[:, n, c])
            out.append(FrameSeries(grid, vals, ("pos_x", "pos_y"), ids.copy(), teams.copy(),
                                   game.game_id, event_id))
    if dropped:
        logger.warning("resample_uniform(%s): dropped %d span(s) too short to use", game.game_id, dropped)
    return out


def _aligned(m: Moment, ids: np.ndarray) -> np.ndarray:
    pos = {int(i): k for k, i in enumerate(m.object_ids)}
    return m.xy[[pos[int(i)] for i in ids]]


def derive_velocities(series: FrameSeries) -> FrameSeries:
    """Append ``v_x, v_y`` as backward differences; ``v[0]`` copies ``v[1]``."""
    if "v_x" in series.feature_names:
        return series
    pos = series.positions
    vel = np.zeros_like(pos)
    if len(series) > 1:
        vel[1:] = (pos[1:] - pos[:-1]) / DT
        vel[0] = vel[1]
    values = np.concatenate([series.values, vel], axis=-1)
    return replace(series, values=values, feature_names=series.feature_names + ("v_x", "v_y"))
