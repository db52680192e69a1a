"""Minimal log-log line plots written directly as SVG."""
from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

__all__ = ["loglog_svg"]

COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]


def _decades(lo, hi):
    a, b = int(np.floor(np.log10(lo))), int(np.ceil(np.log10(hi)))
    return [10.0**k for k in range(a, b + 1)]


def loglog_svg(path, series: dict, title: str = "", xlabel: str = "", ylabel: str = "", width=480, height=360):
    """``series`` maps a label to ``(x, y)``; nonpositive points are dropped."""
    pts = {k: (np.asarray(x, float), np.asarray(y, float)) for k, (x, y) in series.items()}
    pts = {k: (x[(x > 0) & (y > 0)], y[(x > 0) & (y > 0)]) for k, (x, y) in pts.items()}
    xs = np.concatenate([x for x, _ in pts.values()] or [np.array([1.0, 10.0])])
    ys = np.concatenate([y for _, y in pts.values()] or [np.array([1.0, 10.0])])
    if xs.size == 0:
        xs, ys = np.array([1.0, 10.0]), np.array([1.0, 10.0])
    lx0, lx1 = np.log10(xs.min()) - 0.1, np.log10(xs.max()) + 0.1
    ly0, ly1 = np.log10(ys.min()) - 0.1, np.log10(ys.max()) + 0.1
    left, right, top, bottom = 70, 20, 30, 50
    pw, ph = width - left - right, height - top - bottom

    def X(v):
        return left + (np.log10(v) - lx0) / (lx1 - lx0) * pw

    def Y(v):
        return top + (ly1 - np.log10(v)) / (ly1 - ly0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">']
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>')
    for d in _decades(10**lx0, 10**lx1):
        if 10**lx0 <= d <= 10**lx1:
            out.append(f'<line x1="{X(d):.1f}" y1="{top}" x2="{X(d):.1f}" y2="{top + ph}" stroke="#ddd"/>')
            out.append(f'<text x="{X(d):.1f}" y="{top + ph + 15}" text-anchor="middle">{d:g}</text>')
    for d in _decades(10**ly0, 10**ly1):
        if 10**ly0 <= d <= 10**ly1:
            out.append(f'<line x1="{left}" y1="{Y(d):.1f}" x2="{left + pw}" y2="{Y(d):.1f}" stroke="#ddd"/>')
            out.append(f'<text x="{left - 5}" y="{Y(d) + 4:.1f}" text-anchor="end">{d:g}</text>')
    for i, (label, (x, y)) in enumerate(pts.items()):
        col = COLORS[i % len(COLORS)]
        poly = " ".join(f"{X(a):.1f},{Y(b):.1f}" for a, b in zip(x, y))
        out.append(f'<polyline points="{poly}" fill="none" stroke="{col}" stroke-width="1.5"/>')
        for a, b in zip(x, y):
            out.append(f'<circle cx="{X(a):.1f}" cy="{Y(b):.1f}" r="3" fill="{col}"/>')
        out.append(f'<text x="{left + 8}" y="{top + 14 + 14 * i}" fill="{col}">{escape(str(label))}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="15" y="{top + ph / 2}" text-anchor="middle" transform="rotate(-90 15 {top + ph / 2})">{escape(ylabel)}</text>')
    out.append(f'<text x="{left + pw / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")
    return Path(path)
