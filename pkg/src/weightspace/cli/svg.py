"""Minimal static SVG histograms (axes, overlaid bars, legend)."""
from __future__ import annotations

from typing import Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377")


def _f(v: float) -> str:
    return f"{v:.2f}"


def histogram_svg(series: Mapping[str, Sequence[float]], bins=None, title: str = "", xlabel: str = "",
                  width: int = 520, height: int = 320) -> str:
    """Overlaid histograms of each named series over shared bins (default: 20 bins on [0, 1])."""
    edges = np.linspace(0.0, 1.0, 21) if bins is None else np.asarray(bins, dtype=np.float64)
    counts = {name: np.histogram(np.asarray(v, dtype=np.float64), bins=edges)[0] for name, v in series.items()}
    ymax = max([int(c.max()) for c in counts.values() if c.size] + [1])
    left, right, top, bottom = 48, 16, 32, 44
    pw, ph = width - left - right, height - top - bottom
    x0, x1 = float(edges[0]), float(edges[-1])

    def sx(v):
        return left + (v - x0) / (x1 - x0) * pw if x1 > x0 else left

    def sy(c):
        return top + ph - c / ymax * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>']
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>')
    for k, (name, c) in enumerate(counts.items()):
        color = PALETTE[k % len(PALETTE)]
        for i, n in enumerate(c):
            if n == 0:
                continue
            xa, xb = sx(edges[i]), sx(edges[i + 1])
            out.append(f'<rect x="{_f(xa)}" y="{_f(sy(n))}" width="{_f(max(xb - xa - 1, 0.5))}" '
                       f'height="{_f(ph - (sy(n) - top))}" fill="{color}" fill-opacity="0.55"/>')
    # axes and ticks
    out.append(f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>')
    out.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>')
    for t in np.linspace(x0, x1, 6):
        out.append(f'<line x1="{_f(sx(t))}" y1="{top + ph}" x2="{_f(sx(t))}" y2="{top + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{_f(sx(t))}" y="{top + ph + 16}" text-anchor="middle">{t:.2f}</text>')
    for t in sorted({0, ymax // 2, ymax}):
        out.append(f'<text x="{left - 6}" y="{_f(sy(t) + 4)}" text-anchor="end">{t}</text>')
    if xlabel:
        out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 8}" text-anchor="middle">{escape(xlabel)}</text>')
    for k, name in enumerate(counts):
        y = top + 6 + 16 * k
        out.append(f'<rect x="{left + pw - 130}" y="{y}" width="10" height="10" '
                   f'fill="{PALETTE[k % len(PALETTE)]}" fill-opacity="0.55"/>')
        out.append(f'<text x="{left + pw - 115}" y="{y + 9}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
