"""Train/validation/test partitioning by game, by team, or by window."""
from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from .series import ConfigurationError, FrameSeries
from .windows import WindowSet

POLICIES = ("random_within_team", "by_game", "by_team")


class Split(NamedTuple):
    train: object
    validation: object
    test: object


def _normalise_ratios(ratios: Sequence[float]) -> tuple[float, float, float]:
    r = tuple(float(x) for x in ratios)
    if len(r) == 2:
        r = (r[0], 0.0, r[1])
    if len(r) != 3 or any(x < 0 for x in r):
        raise ConfigurationError(f"ratios must be (train, test) or (train, val, test), got {ratios}")
    if abs(sum(r) - 1.0) > 1e-9:
        raise ConfigurationError(f"ratios must sum to 1, got {sum(r)}")
    return r  # type: ignore[return-value]


def _counts(n: int, ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    n_test = int(round(n * ratios[2]))
    n_val = int(round(n * ratios[1]))
    if ratios[2] > 0:
        n_test = max(n_test, 1)
    if ratios[1] > 0:
        n_val = max(n_val, 1)
    n_train = n - n_val - n_test
    return n_train, n_val, n_test


def split_dataset(items, policy: str, ratios: Sequence[float] = (0.7, 0.2, 0.1), seed: int = 0,
                  team: int | None = None, train_teams: Sequence[int] | None = None,
                  test_teams: Sequence[int] | None = None) -> Split:
    """Partition data according to ``policy``.

    * ``by_game`` and ``by_team`` take a list of :class:`FrameSeries` and
      return lists of series; no game (resp. team) appears in two parts.
    * ``random_within_team`` takes a :class:`WindowSet` and shuffles windows
      into three :class:`WindowSet` parts.

    ``team`` restricts ``by_game`` to games involving that team.  For
    ``by_team``, ``test_teams`` selects test games; training and validation
    games are drawn from ``train_teams`` and may not involve any team present
    in a test game.  Validation is carved from the training side with
    ``ratios[1] / (ratios[0] + ratios[1])``.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown split policy {policy!r}")
    r = _normalise_ratios(ratios)
    rng = np.random.default_rng(seed)

    if policy == "random_within_team":
        if not isinstance(items, WindowSet):
            raise TypeError("random_within_team splits a WindowSet")
        n_train, n_val, n_test = _counts(len(items), r)
        if n_train < 1:
            raise ConfigurationError(f"{len(items)} windows are too few for ratios {r}")
        perm = rng.permutation(len(items))
        return Split(items.subset(perm[:n_train]), items.subset(perm[n_train:n_train + n_val]),
                     items.subset(perm[n_train + n_val:]))

    series: list[FrameSeries] = list(items)
    if policy == "by_game":
        if team is not None:
            series = [s for s in series if team in s.teams]
        games = sorted({s.game_id for s in series})
        n_train, n_val, n_test = _counts(len(games), r)
        if n_train < 1 or len(games) < sum(x > 0 for x in r):
            raise ConfigurationError(f"{len(games)} game(s) are too few for a by_game split with ratios {r}")
        order = [games[i] for i in rng.permutation(len(games))]
        parts = (set(order[:n_train]), set(order[n_train:n_train + n_val]), set(order[n_train + n_val:]))
        return Split(*([s for s in series if s.game_id in part] for part in parts))

    # by_team
    all_teams = sorted(set().union(*(s.teams for s in series))) if series else []
    if test_teams is None or train_teams is None:
        if len(all_teams) < 2:
            raise ConfigurationError("by_team needs at least two teams")
        shuffled = [all_teams[i] for i in rng.permutation(len(all_teams))]
        test_teams = test_teams if test_teams is not None else [shuffled[0]]
        train_teams = train_teams if train_teams is not None else [t for t in shuffled if t not in test_teams][:1]
    test_teams, train_teams = set(test_teams), set(train_teams)
    if test_teams & train_teams:
        raise ConfigurationError("train and test team sets overlap")
    test = [s for s in series if s.teams & test_teams and not s.teams & train_teams]
    blocked = set().union(*(s.teams for s in test)) if test else set()
    train_side = [s for s in series if s.teams & train_teams and not s.teams & blocked]
    if not test or not train_side:
        raise ConfigurationError("by_team split left an empty train or test partition")
    games = sorted({s.game_id for s in train_side})
    frac_val = r[1] / (r[0] + r[1]) if r[0] + r[1] > 0 else 0.0
    n_val = int(round(len(games) * frac_val))
    if frac_val > 0:
        n_val = max(1, n_val)
    if len(games) - n_val < 1:
        raise ConfigurationError("too few training games for the by_team validation share")
    order = [games[i] for i in rng.permutation(len(games))]
    val_games = set(order[:n_val])
    return Split([s for s in train_side if s.game_id not in val_games],
                 [s for s in train_side if s.game_id in val_games], test)
