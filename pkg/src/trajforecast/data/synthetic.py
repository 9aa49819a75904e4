"""Desk-scale synthetic basketball scenes.

Every player shuttles between two end points around a personal spot, and
all spots move with a shared transition drift.  Each run is a straight line
at constant speed towards a jittered end point, so constant velocity is
close to optimal at very short horizons, while the turn point (run length
and time since the last turn) is only visible from a longer history.  The
ball rides with a holder and travels in a straight line on passes.  Team
style is a deterministic function of the team id.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .series import BALL_TEAM, COURT_LENGTH, COURT_WIDTH, DT, Moment, RawGame

SPEED_SPREAD = 0.03  # per-run relative speed variation


@dataclass(frozen=True)
class TeamStyle:
    run: tuple[float, float]      # shuttle length range, metres
    speed: tuple[float, float]    # run speed range, m/s
    jitter: float                 # waypoint scatter, metres


def team_style(team_id: int) -> TeamStyle:
    rng = np.random.default_rng(10_007 * (abs(int(team_id)) + 1))
    lo = rng.uniform(2.0, 2.4)
    return TeamStyle(run=(3.0, 6.0), speed=(lo, lo + 1.2), jitter=rng.uniform(0.15, 0.25))


def _drift(T: int, rng: np.random.Generator) -> np.ndarray:
    drift = np.zeros((T, 2))
    k = 0
    direction = rng.choice([-1.0, 1.0])
    while k < T:
        length = int(rng.uniform(8.0, 12.0) / DT)
        speed = rng.uniform(0.8, 1.4)
        t = np.arange(length) * DT
        # ramp up over 2 s, hold, ease out
        shape = np.clip(t / 2.0, 0, 1) * np.clip((length * DT - t) / 2.0, 0, 1)
        seg = slice(k, min(T, k + length))
        drift[seg, 0] = direction * speed * shape[: seg.stop - seg.start]
        direction = -direction
        k += length
    return drift


def simulate_game(game_id: str, home: int, away: int, duration: float = 60.0, seed: int = 0,
                  players_per_team: int = 5, time_jitter: float = 0.0) -> RawGame:
    """Simulate one game as a single event of 25 Hz moments (metres).

    ``time_jitter`` (seconds) perturbs sample times to exercise resampling.
    """
    rng = np.random.default_rng(seed)
    T = int(round(duration / DT)) + 1
    teams = [home] * players_per_team + [away] * players_per_team
    n = len(teams)
    drift = _drift(T, rng)
    lo = np.array([1.0, 1.0])
    hi = np.array([COURT_LENGTH - 1.0, COURT_WIDTH - 1.0])

    spot = np.zeros((n, 2))
    spot[:, 0] = rng.uniform(6.0, COURT_LENGTH - 6.0, size=n)
    spot[:, 1] = rng.uniform(4.0, COURT_WIDTH - 4.0, size=n)
    offset = np.cumsum(drift, axis=0) * DT  # shared spot displacement
    pos = np.zeros((T, n, 2))
    for p in range(n):
        st = team_style(teams[p])
        ang = rng.uniform(0, 2 * np.pi)
        half = 0.5 * rng.uniform(*st.run) * np.array([np.cos(ang), np.sin(ang)])
        ends = (spot[p] - half, spot[p] + half)   # the player shuttles between these
        base_speed = rng.uniform(*st.speed)
        side = int(rng.integers(2))
        pos[0, p] = ends[side] + rng.normal(0, st.jitter, size=2)
        v = np.zeros(2)
        remaining = 0
        for k in range(1, T):
            if remaining <= 0:
                side = 1 - side
                target = np.clip(ends[side] + offset[k] + rng.normal(0, st.jitter, size=2), lo, hi)
                delta = target - pos[k - 1, p]
                speed = base_speed * rng.uniform(1 - SPEED_SPREAD, 1 + SPEED_SPREAD)
                remaining = max(int(round(float(np.linalg.norm(delta)) / (speed * DT))), 8)
                v = delta / (remaining * DT)
            pos[k, p] = np.clip(pos[k - 1, p] + (v + drift[k]) * DT, lo - 0.5, hi + 0.5)
            remaining -= 1

    ball = np.zeros((T, 2))
    holder = int(rng.integers(n))
    k = 0
    while k < T:
        hold = int(rng.uniform(0.8, 3.0) / DT)
        for j in range(k, min(T, k + hold)):
            ball[j] = pos[j, holder] + 0.3 * np.array([np.cos(j * 0.9), np.sin(j * 0.9)])
        k += hold
        if k >= T:
            break
        new = int(rng.integers(n - 1))
        new = new + (new >= holder)
        flight = int(rng.uniform(0.3, 0.7) / DT)
        start = ball[k - 1].copy()
        for j in range(k, min(T, k + flight)):
            frac = (j - k + 1) / flight
            ball[j] = (1 - frac) * start + frac * pos[j, new]
        k += flight
        holder = new

    obj_ids = np.array([-1] + [t * 100 + i for i, t in enumerate(teams)])
    team_ids = np.array([BALL_TEAM] + teams)
    xy = np.concatenate([ball[:, None], pos], axis=1)
    times = np.arange(T) * DT
    if time_jitter > 0:
        times = times + rng.uniform(-time_jitter, time_jitter, size=T)
        times[0] = 0.0
        times = np.maximum.accumulate(times)
    moments = [Moment(float(times[k]), obj_ids.copy(), team_ids.copy(), xy[k].copy()) for k in range(T)]
    return RawGame(game_id=game_id, events=[moments], teams={home: f"T{home}", away: f"T{away}"})


def simulate_league(focus_team: int = 1, opponents=(2, 3, 4, 5), n_games: int = 8,
                    extra_games=((6, 7),), duration: float = 60.0, seed: int = 0) -> list[RawGame]:
    """Games of ``focus_team`` against rotating opponents, plus unrelated games.

    ``extra_games`` lists (home, away) pairs not involving the focus team,
    used as cross-team test material.
    """
    games = []
    for g in range(n_games):
        opp = opponents[g % len(opponents)]
        home, away = (focus_team, opp) if g % 2 == 0 else (opp, focus_team)
        games.append(simulate_game(f"g{g:03d}", home, away, duration, seed=seed * 1000 + g))
    for j, (home, away) in enumerate(extra_games):
        games.append(simulate_game(f"x{j:03d}", home, away, duration, seed=seed * 1000 + 500 + j))
    return games
