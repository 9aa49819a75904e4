"""Minimal deterministic SVG line charts."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
           "#7f7f7f", "#bcbd22")
W, H = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 64, 150, 30, 48


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    return np.arange(np.ceil(lo / step) * step, hi + 1e-12, step)


def _num(x: float) -> str:
    return f"{x:.2f}"


def line_chart(series: Sequence[tuple[str, np.ndarray, np.ndarray]], title: str, xlabel: str, ylabel: str) -> str:
    """Render ``(label, x, y)`` series as an SVG document string (NaNs break lines)."""
    xs = np.concatenate([np.asarray(s[1], float) for s in series]) if series else np.zeros(1)
    ys = np.concatenate([np.asarray(s[2], float) for s in series]) if series else np.zeros(1)
    ys = ys[np.isfinite(ys)]
    x0, x1 = float(xs.min()), float(xs.max()) if xs.size else 1.0
    y0, y1 = 0.0, float(ys.max()) * 1.05 if ys.size and ys.max() > 0 else 1.0
    if x1 <= x0:
        x1 = x0 + 1.0
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM

    def px(x):
        return LEFT + (x - x0) / (x1 - x0) * pw

    def py(y):
        return TOP + ph - (y - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<text x="{W / 2:.0f}" y="18" text-anchor="middle" font-family="sans-serif" font-size="14">{escape(title)}</text>',
           f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>']
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{_num(px(t))}" y1="{TOP + ph}" x2="{_num(px(t))}" y2="{TOP + ph + 4}" stroke="#333"/>')
        out.append(f'<text x="{_num(px(t))}" y="{TOP + ph + 16}" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="10">{t:g}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{LEFT}" y1="{_num(py(t))}" x2="{LEFT + pw}" y2="{_num(py(t))}" stroke="#eee"/>')
        out.append(f'<text x="{LEFT - 6}" y="{_num(py(t) + 3)}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="10">{t:g}</text>')
    out.append(f'<text x="{LEFT + pw / 2:.0f}" y="{H - 10}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="12">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{TOP + ph / 2:.0f}" text-anchor="middle" font-family="sans-serif" font-size="12" '
               f'transform="rotate(-90 14 {TOP + ph / 2:.0f})">{escape(ylabel)}</text>')
    for i, (label, x, y) in enumerate(series):
        colour = PALETTE[i % len(PALETTE)]
        pts, segs = [], []
        for xv, yv in zip(np.asarray(x, float), np.asarray(y, float)):
            if np.isfinite(yv):
                pts.append(f"{_num(px(xv))},{_num(py(yv))}")
            elif pts:
                segs.append(pts)
                pts = []
        if pts:
            segs.append(pts)
        for seg in segs:
            out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{" ".join(seg)}"/>')
        ly = TOP + 12 + 16 * i
        out.append(f'<line x1="{LEFT + pw + 10}" y1="{ly}" x2="{LEFT + pw + 30}" y2="{ly}" stroke="{colour}" '
                   f'stroke-width="2"/>')
        out.append(f'<text x="{LEFT + pw + 34}" y="{ly + 4}" font-family="sans-serif" font-size="11">'
                   f'{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_chart(path: str | Path, *args, **kwargs) -> Path:
    path = Path(path)
    path.write_text(line_chart(*args, **kwargs), encoding="utf-8")
    return path
