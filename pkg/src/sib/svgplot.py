"""Bare-bones SVG line charts (axes, series, legend) for result files."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, n)


def line_chart(series: dict[str, tuple[list, list]], title: str, xlabel: str, ylabel: str,
               width: int = 480, height: int = 340, dashed: set[str] = frozenset(),
               logx: bool = False) -> str:
    """Return an SVG document with one polyline (plus markers) per series."""
    pad_l, pad_r, pad_t, pad_b = 60, 20, 30, 45
    xs_all = [np.log10(x) if logx else x for xs, _ in series.values() for x in xs]
    ys_all = [y for _, ys in series.values() for y in ys]
    if not xs_all:
        xs_all, ys_all = [0.0, 1.0], [0.0, 1.0]
    x0, x1 = min(xs_all), max(xs_all)
    y0, y1 = min(ys_all), max(ys_all)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b

    def px(x):
        x = np.log10(x) if logx else x
        return pad_l + (x - x0) / (x1 - x0) * pw

    def py(y):
        return pad_t + ph - (y - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
           f'<line x1="{pad_l}" y1="{pad_t + ph}" x2="{pad_l + pw}" y2="{pad_t + ph}" stroke="black"/>',
           f'<line x1="{pad_l}" y1="{pad_t}" x2="{pad_l}" y2="{pad_t + ph}" stroke="black"/>']
    for t in _ticks(x0, x1):
        x = pad_l + (t - x0) / (x1 - x0) * pw
        label = f"1e{t:.1f}" if logx else f"{t:.3g}"
        out.append(f'<text x="{x:.1f}" y="{pad_t + ph + 15}" text-anchor="middle">{label}</text>')
    for t in _ticks(y0, y1):
        y = py(t)
        out.append(f'<text x="{pad_l - 5}" y="{y + 4:.1f}" text-anchor="end">{t:.3g}</text>')
        out.append(f'<line x1="{pad_l}" y1="{y:.1f}" x2="{pad_l + pw}" y2="{y:.1f}" stroke="#eee"/>')
    out.append(f'<text x="{pad_l + pw / 2}" y="{height - 8}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{pad_t + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 14 {pad_t + ph / 2})">{escape(ylabel)}</text>')
    for i, (name, (xs, ys)) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        order = np.argsort(xs)
        pts = " ".join(f"{px(xs[j]):.1f},{py(ys[j]):.1f}" for j in order)
        dash = ' stroke-dasharray="5,3"' if name in dashed else ""
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>')
        for j in order:
            out.append(f'<circle cx="{px(xs[j]):.1f}" cy="{py(ys[j]):.1f}" r="2.5" fill="{color}"/>')
        ly = pad_t + 12 + 14 * i
        out.append(f'<line x1="{pad_l + pw - 110}" y1="{ly}" x2="{pad_l + pw - 90}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"{dash}/>')
        out.append(f'<text x="{pad_l + pw - 85}" y="{ly + 4}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out)


def write_chart(path, *args, **kwargs) -> Path:
    path = Path(path)
    path.write_text(line_chart(*args, **kwargs))
    return path
