"""Dependency-free SVG line and scatter plots (polylines on a framed axis box)."""

from __future__ import annotations

import math
from pathlib import Path

WIDTH, HEIGHT, PAD = 640, 420, 60
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf",
          "#7f7f7f", "#bcbd22", "#e377c2")


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def _scale(lo, hi, a, b):
    span = hi - lo or 1.0
    return lambda v: a + (v - lo) / span * (b - a)


def plot(path, series, title="", xlabel="", ylabel="", loglog=False, markers=False) -> None:
    """Write ``series`` (a list of ``(label, xs, ys)``) to ``path`` as an SVG file."""
    tf = (lambda v: math.log10(v)) if loglog else (lambda v: v)
    pts = [(lab, [tf(x) for x in xs], [tf(y) for y in ys]) for lab, xs, ys in series]
    allx = [x for _, xs, _ in pts for x in xs]
    ally = [y for _, _, ys in pts for y in ys]
    sx = _scale(min(allx), max(allx), PAD, WIDTH - PAD)
    sy = _scale(min(ally), max(ally), HEIGHT - PAD, PAD)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}">',
        f'<rect x="{PAD}" y="{PAD}" width="{WIDTH - 2 * PAD}" height="{HEIGHT - 2 * PAD}" '
        'fill="none" stroke="black"/>',
        f'<text x="{WIDTH / 2}" y="{PAD / 2}" text-anchor="middle">{title}</text>',
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 15}" text-anchor="middle">{xlabel}</text>',
        f'<text x="15" y="{HEIGHT / 2}" transform="rotate(-90 15 {HEIGHT / 2})" '
        f'text-anchor="middle">{ylabel}</text>',
    ]
    for v in (min(allx), max(allx)):
        shown = 10**v if loglog else v
        out.append(f'<text x="{_fmt(sx(v))}" y="{HEIGHT - PAD + 18}" text-anchor="middle" '
                   f'font-size="11">{_fmt(shown)}</text>')
    for v in (min(ally), max(ally)):
        shown = 10**v if loglog else v
        out.append(f'<text x="{PAD - 5}" y="{_fmt(sy(v))}" text-anchor="end" '
                   f'font-size="11">{_fmt(shown)}</text>')
    for i, (lab, xs, ys) in enumerate(pts):
        color = COLORS[i % len(COLORS)]
        coords = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in zip(xs, ys))
        if markers:
            out += [f'<circle cx="{_fmt(sx(x))}" cy="{_fmt(sy(y))}" r="3" fill="{color}"/>'
                    for x, y in zip(xs, ys)]
        else:
            out.append(f'<polyline fill="none" stroke="{color}" points="{coords}"/>')
        out.append(f'<text x="{WIDTH - PAD + 5}" y="{PAD + 14 * i}" font-size="10" '
                   f'fill="{color}">{lab}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")
