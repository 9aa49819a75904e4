"""Proximity context: bounded distance transform, nearest-object and hoop offsets."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .series import HOOPS, ConfigurationError, FrameSeries


def distance_transform(x):
    """``sgn(x) * 2 * exp(-|x| / 2)``: odd, bounded by 2, largest near zero.

    Works elementwise on scalars and arrays; ``f(0) == 0``.
    """
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * 2.0 * np.exp(-0.5 * np.abs(x))


@dataclass
class ContextFeatures:
    nearest: np.ndarray   # [T, 2] transformed offset to the nearest other object
    hoop1: np.ndarray     # [T, 2]
    hoop2: np.ndarray     # [T, 2]
    nearest_index: np.ndarray  # [T]
    hoops: np.ndarray


def _nearest_other(pos: np.ndarray, object_ids: np.ndarray) -> np.ndarray:
    """Index of the nearest other object for every (..., target) pair.

    ``pos`` is ``[..., N, 2]``; returns ``[..., N]``.  Ties go to the lowest
    object id.
    """
    N = pos.shape[-2]
    d = np.linalg.norm(pos[..., :, None, :] - pos[..., None, :, :], axis=-1)
    d[..., np.arange(N), np.arange(N)] = np.inf
    # stable argmin over objects re-ordered by id
    by_id = np.argsort(object_ids, kind="stable")
    return by_id[np.argmin(d[..., by_id], axis=-1)]


def context_features(series: FrameSeries | np.ndarray, target: int, hoops: np.ndarray = HOOPS,
                     object_ids: np.ndarray | None = None) -> ContextFeatures:
    """Transformed per-axis offsets from ``target`` to its nearest neighbour and both hoops.

    ``series`` may be a :class:`FrameSeries` or a ``[T, N, 2]`` position array.
    Offsets are ``other - target`` before the transform.
    """
    if isinstance(series, FrameSeries):
        object_ids = series.object_ids if object_ids is None else object_ids
        pos = series.positions
    else:
        pos = np.asarray(series, dtype=np.float64)[..., :2]
    N = pos.shape[1]
    if N < 2:
        raise ConfigurationError("context features need at least two objects")
    if not 0 <= target < N:
        raise ValueError(f"target index {target} outside [0, {N})")
    object_ids = np.arange(N) if object_ids is None else np.asarray(object_ids)
    hoops = np.asarray(hoops, dtype=np.float64)
    nearest = _nearest_other(pos, object_ids)[:, target]
    me = pos[:, target]
    near_off = pos[np.arange(len(pos)), nearest] - me
    return ContextFeatures(
        nearest=distance_transform(near_off),
        hoop1=distance_transform(hoops[0] - me),
        hoop2=distance_transform(hoops[1] - me),
        nearest_index=nearest,
        hoops=hoops,
    )


FIELD_NAMES = ("velocity", "nearest", "hoop1", "hoop2")


def context_fields(history: np.ndarray, hoops: np.ndarray = HOOPS, object_ids: np.ndarray | None = None) -> np.ndarray:
    """Four information fields for every object, batched.

    Args:
        history: ``[B, H, N, 4]`` with ``pos_x, pos_y, v_x, v_y``.

    Returns:
        ``[B, 4, H, N, 2]`` ordered (velocity, nearest-object, hoop 1, hoop 2);
        the three distance fields are already transformed.
    """
    pos = history[..., :2]
    vel = history[..., 2:4]
    N = pos.shape[-2]
    if N < 2:
        raise ConfigurationError("context features need at least two objects")
    ids = np.arange(N) if object_ids is None else np.asarray(object_ids)
    if ids.ndim == 2:  # per-sample ids: only the tie rule uses them, take the first row's order
        ids = ids[0]
    nearest = _nearest_other(pos, ids)  # [B, H, N]
    near_pos = np.take_along_axis(pos, nearest[..., None], axis=-2)
    hoops = np.asarray(hoops, dtype=np.float64)
    return np.stack([
        vel,
        distance_transform(near_pos - pos),
        distance_transform(hoops[0] - pos),
        distance_transform(hoops[1] - pos),
    ], axis=1)
