"""Velocity reintegration and displacement/heading error metrics.

Metric functions take batched arrays: predictions and ground truth of shape
``[B, P, 2]`` (a single ``[P, 2]`` trajectory is promoted to ``B = 1``) and,
for the heading metrics, the last observed position ``[B, 2]`` that anchors
the first step's velocity.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data.series import DT

MIN_SPEED_NORM = 1e-9  # steps with a shorter displacement vector carry no heading

CSV_COLUMNS = ("model", "horizon_s", "ade_m", "fde_m", "aae_deg", "fae_deg", "n")


@dataclass
class ForecastRecord:
    """One predicted trajectory with its ground truth."""

    predicted: np.ndarray   # [P, 2] metres
    truth: np.ndarray       # [P, 2] metres
    last_pos: np.ndarray    # [2]
    times: np.ndarray | None = None  # [P] seconds after the last observation

    def __post_init__(self):
        self.predicted = np.asarray(self.predicted, dtype=np.float64)
        self.truth = np.asarray(self.truth, dtype=np.float64)
        self.last_pos = np.asarray(self.last_pos, dtype=np.float64)
        if self.predicted.shape != self.truth.shape or self.predicted.shape[-1] != 2:
            raise ValueError(f"predicted {self.predicted.shape} and truth {self.truth.shape} must both be [P, 2]")
        if self.times is None:
            self.times = DT * np.arange(1, len(self.truth) + 1)
        if not (np.isfinite(self.predicted).all() and np.isfinite(self.truth).all()):
            raise ValueError("forecast record holds non-finite values")


def stack_records(records: Sequence[ForecastRecord]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack records into ``(predicted, truth, last_pos)`` arrays."""
    if len(records) == 0:
        raise ValueError("no forecast records")
    return (np.stack([r.predicted for r in records]), np.stack([r.truth for r in records]),
            np.stack([r.last_pos for r in records]))


def _batch(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    if truth is None:
        if isinstance(pred, ForecastRecord):
            pred = [pred]
        pred, truth, _ = stack_records(pred)
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.ndim == 2:
        pred, truth = pred[None], truth[None]
    if pred.shape != truth.shape:
        raise ValueError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    if pred.size == 0:
        raise ValueError("metrics need at least one sample and one step")
    return pred, truth


def integrate_velocities(p0, velocities, dt: float = DT) -> np.ndarray:
    """Positions ``p_i = p_{i-1} + v_i * dt`` starting from ``p0``.

    ``velocities`` is ``[..., P, 2]`` and ``p0`` broadcasts against ``[..., 2]``.
    """
    v = np.asarray(velocities, dtype=np.float64)
    p0 = np.asarray(p0, dtype=np.float64)
    return p0[..., None, :] + np.cumsum(v * dt, axis=-2)


def step_velocities(positions, last_pos, dt: float = DT) -> np.ndarray:
    """Backward-difference velocities of a forecast, the first step measured from ``last_pos``."""
    pos = np.asarray(positions, dtype=np.float64)
    prev = np.concatenate([np.asarray(last_pos, dtype=np.float64)[..., None, :], pos[..., :-1, :]], axis=-2)
    return (pos - prev) / dt


def displacement_curve(pred, truth=None) -> np.ndarray:
    """Euclidean error per sample and step, ``[B, P]``."""
    pred, truth = _batch(pred, truth)
    return np.linalg.norm(pred - truth, axis=-1)


def ade(pred, truth=None) -> float:
    """Average displacement error: mean distance over samples and steps.

    Accepts ``(pred, truth)`` arrays or a sequence of :class:`ForecastRecord`.
    """
    return float(displacement_curve(pred, truth).mean())


def fde(pred, truth=None) -> float:
    """Final displacement error: mean distance at the last step."""
    # same reduction as the per-step curve in ``evaluate`` so both agree bit for bit
    return float(displacement_curve(pred, truth).mean(axis=0)[-1])


def signed_angle(v_true, v_pred):
    """Signed heading error in degrees, in ``(-180, 180]``.

    The sign follows the 2-D cross product ``v_true x v_pred`` (positive means
    the prediction turns counter-clockwise).  Antiparallel vectors give +180.
    Where either vector is shorter than ``MIN_SPEED_NORM`` the angle is 0; use
    :func:`heading_errors` to get those steps flagged.
    """
    vt = np.asarray(v_true, dtype=np.float64)
    vp = np.asarray(v_pred, dtype=np.float64)
    angle, _ = _signed_angle(vt, vp)
    return float(angle) if angle.ndim == 0 else angle


def _signed_angle(vt: np.ndarray, vp: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    nt = np.linalg.norm(vt, axis=-1)
    npred = np.linalg.norm(vp, axis=-1)
    valid = (nt >= MIN_SPEED_NORM) & (npred >= MIN_SPEED_NORM)
    denom = np.where(valid, nt * npred, 1.0)
    dot = (vt * vp).sum(-1)
    cross = vt[..., 0] * vp[..., 1] - vt[..., 1] * vp[..., 0]
    # arccos of the normalized dot product, evaluated as atan2: arccos loses
    # half the digits near 0 and 180 degrees
    mag = np.degrees(np.arctan2(np.abs(cross) / denom, dot / denom))
    angle = np.where(cross > 0, mag, -mag)
    angle = np.where(mag == 180.0, 180.0, angle)
    return np.where(valid, angle, 0.0), valid


def heading_errors(pred, truth, last_pos) -> tuple[np.ndarray, np.ndarray]:
    """Signed per-step angles ``[B, P]`` between true and predicted step velocities, plus a validity mask."""
    pred, truth = _batch(pred, truth)
    last = np.asarray(last_pos, dtype=np.float64).reshape(pred.shape[0], 2)
    return _signed_angle(step_velocities(truth, last), step_velocities(pred, last))


def _masked_mean(x: np.ndarray, mask: np.ndarray) -> float:
    n = int(mask.sum())
    return float(np.abs(x[mask]).mean()) if n else float("nan")


def _angle_inputs(pred, truth, last_pos):
    if truth is None:
        pred, truth, last_pos = stack_records([pred] if isinstance(pred, ForecastRecord) else pred)
    if last_pos is None:
        raise ValueError("heading metrics need the last observed positions")
    return heading_errors(pred, truth, last_pos)


def aae(pred, truth=None, last_pos=None) -> float:
    """Average absolute heading error in degrees over every valid step (NaN if none)."""
    angles, valid = _angle_inputs(pred, truth, last_pos)
    return _masked_mean(angles, valid)


def fae(pred, truth=None, last_pos=None) -> float:
    """Absolute heading error in degrees at the final step, averaged over valid samples."""
    angles, valid = _angle_inputs(pred, truth, last_pos)
    return _masked_mean(angles[:, -1], valid[:, -1])


@dataclass
class MetricReport:
    """Error curves over forecast horizons for one model.

    Entry ``k`` of each curve describes a horizon of ``k + 1`` steps: ADE and
    AAE average over steps ``1..k+1``, FDE and FAE look at step ``k+1`` only.
    """

    model: str
    ade: np.ndarray
    fde: np.ndarray
    aae: np.ndarray
    fae: np.ndarray
    n: int
    n_flagged: int = 0    # steps with no defined heading, excluded from the angle metrics
    dt: float = DT

    @property
    def horizons_s(self) -> np.ndarray:
        return self.dt * np.arange(1, len(self.fde) + 1)

    def step_for(self, horizon_s: float) -> int:
        k = int(round(horizon_s / self.dt))
        if not 1 <= k <= len(self.fde) or abs(k * self.dt - horizon_s) > 1e-9:
            raise ValueError(f"horizon {horizon_s}s is not a forecast step (dt={self.dt}, P={len(self.fde)})")
        return k

    def at(self, horizon_s: float) -> dict[str, float]:
        i = self.step_for(horizon_s) - 1
        return {"ade_m": float(self.ade[i]), "fde_m": float(self.fde[i]),
                "aae_deg": float(self.aae[i]), "fae_deg": float(self.fae[i])}

    def rows(self, horizons_s: Sequence[float] | None = None) -> list[tuple]:
        hs = self.horizons_s if horizons_s is None else horizons_s
        out = []
        for h in hs:
            m = self.at(float(h))
            out.append((self.model, float(h), m["ade_m"], m["fde_m"], m["aae_deg"], m["fae_deg"], self.n))
        return out

    def to_dict(self) -> dict:
        return {"model": self.model, "ade": self.ade.tolist(), "fde": self.fde.tolist(), "aae": self.aae.tolist(),
                "fae": self.fae.tolist(), "n": self.n, "n_flagged": self.n_flagged, "dt": self.dt}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(d["model"], *(np.asarray(d[k], float) for k in ("ade", "fde", "aae", "fae")),
                   n=int(d["n"]), n_flagged=int(d.get("n_flagged", 0)), dt=float(d.get("dt", DT)))


def evaluate(pred, truth, last_pos, model: str = "model", dt: float = DT) -> MetricReport:
    """Build the per-horizon report for a batch of forecasts."""
    pred, truth = _batch(pred, truth)
    disp = displacement_curve(pred, truth)
    angles, valid = heading_errors(pred, truth, last_pos)
    steps = np.arange(1, disp.shape[1] + 1)
    ade_curve = np.cumsum(disp.mean(0)) / steps
    abs_sum = np.cumsum(np.where(valid, np.abs(angles), 0.0).sum(0))
    count = np.cumsum(valid.sum(0))
    with np.errstate(invalid="ignore", divide="ignore"):
        aae_curve = np.where(count > 0, abs_sum / np.maximum(count, 1), np.nan)
        per_step = valid.sum(0)
        fae_curve = np.where(per_step > 0, np.where(valid, np.abs(angles), 0.0).sum(0) / np.maximum(per_step, 1),
                             np.nan)
    return MetricReport(model, ade_curve, disp.mean(0), aae_curve, fae_curve, n=int(pred.shape[0]),
                        n_flagged=int((~valid).sum()), dt=dt)


def _fmt(x: float) -> str:
    return "nan" if not np.isfinite(x) else f"{x:.6f}"


def reports_to_csv(reports: Sequence[MetricReport], horizons_s: Sequence[float] | None = None) -> str:
    """Serialize reports to CSV text with a fixed column order and number format."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for rep in reports:
        for model, h, a, f, aa, fa, n in rep.rows(horizons_s):
            w.writerow([model, f"{h:.2f}", _fmt(a), _fmt(f), _fmt(aa), _fmt(fa), n])
    return buf.getvalue()
