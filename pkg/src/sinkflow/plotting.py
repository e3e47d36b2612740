"""Deterministic SVG line charts.

Output depends only on the data: fixed canvas, fixed palette, coordinates
rounded to three decimals, no timestamps or random ids.
"""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 400
MARGIN = dict(left=70, right=20, top=30, bottom=45)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _c(v: float) -> str:
    s = f"{v:.3f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def _label(v: float) -> str:
    return f"{v:.6g}"


def line_chart(x, series: dict, title: str = "", xlabel: str = "", logy: bool = False) -> str:
    """SVG with one polyline per entry of ``series`` (name -> y values) against ``x``.

    Non-finite points, and nonpositive ones when ``logy`` is set, are skipped.
    """
    x = np.asarray(x, dtype=np.float64)
    cleaned = {}
    for name, y in series.items():
        y = np.asarray(y, dtype=np.float64)
        if y.shape != x.shape:
            raise ValueError(f"series {name!r} has {y.size} points, x has {x.size}")
        keep = np.isfinite(x) & np.isfinite(y)
        if logy:
            keep &= y > 0
            y = np.where(keep, np.log10(np.where(keep, y, 1.0)), np.nan)
        cleaned[name] = (x[keep], y[keep])
    xs = np.concatenate([p[0] for p in cleaned.values()]) if cleaned else np.array([])
    ys = np.concatenate([p[1] for p in cleaned.values()]) if cleaned else np.array([])
    if xs.size == 0:
        raise ValueError("nothing to plot")
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    left, top = MARGIN["left"], MARGIN["top"]
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(v):
        return left + (v - x0) / (x1 - x0) * pw

    def py(v):
        return top + (1.0 - (v - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black" stroke-width="1"/>',
    ]
    if title:
        out.append(f'<text x="{WIDTH / 2:g}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>')
    ylab = (lambda v: "1e" + _label(v)) if logy else _label
    bottom = top + ph
    out.append(f'<text x="{left}" y="{bottom + 18}" text-anchor="start" font-size="11">{_label(x0)}</text>')
    out.append(f'<text x="{left + pw}" y="{bottom + 18}" text-anchor="end" font-size="11">{_label(x1)}</text>')
    out.append(f'<text x="{left - 6}" y="{bottom}" text-anchor="end" font-size="11">{escape(ylab(y0))}</text>')
    out.append(f'<text x="{left - 6}" y="{top + 10}" text-anchor="end" font-size="11">{escape(ylab(y1))}</text>')
    if xlabel:
        out.append(f'<text x="{left + pw / 2:g}" y="{HEIGHT - 8}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>')
    for k, (name, (sx, sy)) in enumerate(cleaned.items()):
        color = PALETTE[k % len(PALETTE)]
        pts = " ".join(f"{_c(px(a))},{_c(py(b))}" for a, b in zip(sx, sy))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
    if len(cleaned) > 1:
        for k, name in enumerate(cleaned):
            color = PALETTE[k % len(PALETTE)]
            yy = top + 14 + 16 * k
            xx = left + pw - 150
            out.append(f'<line x1="{xx}" y1="{yy - 4}" x2="{xx + 20}" y2="{yy - 4}" stroke="{color}" stroke-width="2"/>')
            out.append(f'<text x="{xx + 26}" y="{yy}" font-size="11">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"

