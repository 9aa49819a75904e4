"""Readers for SportVU-style NBA event files and the neutral CSV layout.

Neutral CSV: header ``t,object_id,team_id,x,y``, one row per object per frame,
seconds and metres, rows sorted by ``t`` then ``object_id``.  The ball uses
team id ``-1``.
"""
from __future__ import annotations

import csv
import io
import json
from typing import BinaryIO

import numpy as np

from .series import BALL_TEAM, FT_TO_M, Moment, RawGame, validate_game

CSV_HEADER = ("t", "object_id", "team_id", "x", "y")


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None, offset: int | None = None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if offset is not None:
            loc.append(f"offset {offset}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.line = line
        self.offset = offset


def ingest_game(source: BinaryIO | bytes | str, format: str, game_id: str | None = None) -> RawGame:
    """Parse one game from a byte stream.

    Args:
        source: binary file object, raw bytes, or decoded text.
        format: ``"nba_tracking"`` or ``"neutral_csv"``.
        game_id: overrides the id found in the file (CSV files carry none).
    """
    if format not in ("nba_tracking", "neutral_csv"):
        raise ValueError(f"unknown format {format!r}")
    if hasattr(source, "read"):
        source = source.read()
    text = source.decode("utf-8") if isinstance(source, (bytes, bytearray)) else source
    if format == "neutral_csv":
        game = _parse_csv(text, game_id or "csv")
        return validate_game(game)
    game = _parse_nba(text, game_id)
    return validate_game(game, n_objects=11, require_ball=True)


def _parse_csv(text: str, game_id: str) -> RawGame:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty CSV", line=1) from None
    if tuple(h.strip() for h in header) != CSV_HEADER:
        raise ParseError(f"expected header {','.join(CSV_HEADER)}, got {','.join(header)}", line=1)
    frames: dict[float, list[tuple[int, int, float, float]]] = {}
    order: list[float] = []
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        if len(row) != 5:
            raise ParseError(f"expected 5 fields, got {len(row)}", line=line)
        try:
            t, oid, tid, x, y = float(row[0]), int(row[1]), int(row[2]), float(row[3]), float(row[4])
        except ValueError as exc:
            raise ParseError(str(exc), line=line) from None
        if not all(np.isfinite([t, x, y])):
            raise ParseError("non-finite value", line=line)
        if t not in frames:
            if order and t < order[-1]:
                raise ParseError(f"rows not sorted by time ({t} after {order[-1]})", line=line)
            frames[t] = []
            order.append(t)
        frames[t].append((oid, tid, x, y))
    moments = []
    for t in order:
        rows = frames[t]
        moments.append(Moment(
            t=t,
            object_ids=np.array([r[0] for r in rows], dtype=int),
            team_ids=np.array([r[1] for r in rows], dtype=int),
            xy=np.array([[r[2], r[3]] for r in rows], dtype=float).reshape(-1, 2),
        ))
    return RawGame(game_id=game_id, events=[moments])


def _parse_nba(text: str, game_id: str | None) -> RawGame:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno, offset=exc.colno) from None
    if not isinstance(doc, dict) or "events" not in doc:
        raise ParseError("missing 'events' list", offset=0)
    teams: dict[int, str] = {}
    events: list[list[Moment]] = []
    seen_times: set[float] = set()
    for e_idx, event in enumerate(doc["events"]):
        for side in ("home", "visitor"):
            info = event.get(side) if isinstance(event, dict) else None
            if isinstance(info, dict) and "teamid" in info:
                teams[int(info["teamid"])] = str(info.get("abbreviation", info.get("name", info["teamid"])))
        try:
            raw_moments = event["moments"]
        except (KeyError, TypeError):
            raise ParseError(f"event {e_idx} has no 'moments'", offset=e_idx) from None
        moments = []
        for m_idx, mom in enumerate(raw_moments):
            try:
                t = float(mom[1]) / 1000.0
                rows = mom[5]
                tid = np.array([int(r[0]) for r in rows], dtype=int)
                oid = np.array([int(r[1]) for r in rows], dtype=int)
                xy = np.array([[float(r[2]), float(r[3])] for r in rows], dtype=float).reshape(-1, 2)
            except (IndexError, TypeError, ValueError) as exc:
                raise ParseError(f"event {e_idx} moment {m_idx}: {exc}", offset=m_idx) from None
            # consecutive events repeat moments; keep the first occurrence
            if t in seen_times:
                continue
            seen_times.add(t)
            tid = np.where(oid == -1, BALL_TEAM, tid)
            moments.append(Moment(t=t, object_ids=oid, team_ids=tid, xy=xy * FT_TO_M))
        events.append(moments)
    gid = game_id or str(doc.get("gameid", "nba"))
    return RawGame(game_id=gid, events=events, teams=teams)


def write_csv(series_like: RawGame) -> str:
    """Serialise a game's first event in the neutral CSV layout."""
    lines = [",".join(CSV_HEADER)]
    for m in series_like.events[0]:
        for k in np.argsort(m.object_ids, kind="stable"):
            lines.append(f"{m.t:.6f},{m.object_ids[k]},{m.team_ids[k]},{m.xy[k, 0]:.6f},{m.xy[k, 1]:.6f}")
    return "\n".join(lines) + "\n"
