"""Minimal deterministic SVG charts (line families and scatter panels).

Output depends only on the data: fixed number formatting, no timestamps or
random ids, so identical inputs give byte-identical files.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence, Tuple
from xml.sax.saxutils import escape

W, H = 640, 420
ML, MR, MT, MB = 70, 150, 40, 55

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
           "#bcbd22", "#17becf")


def _f(x: float) -> str:
    return "%.2f" % x


def _ticks(lo: float, hi: float, n: int = 5):
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=raw)
    first = math.ceil(lo / step - 1e-9) * step
    out = []
    v = first
    while v <= hi + 1e-9 * step:
        out.append(round(v, 12))
        v += step
    return out


class _Axes:
    def __init__(self, xs, ys, logx=False):
        self.logx = logx
        fx = [math.log10(x) for x in xs] if logx else list(xs)
        fx = [v for v in fx if math.isfinite(v)]
        fy = [v for v in ys if math.isfinite(v)]
        self.x0, self.x1 = (min(fx), max(fx)) if fx else (0.0, 1.0)
        self.y0, self.y1 = (min(fy), max(fy)) if fy else (0.0, 1.0)
        if self.x1 == self.x0:
            self.x0, self.x1 = self.x0 - 0.5, self.x1 + 0.5
        if self.y1 == self.y0:
            self.y0, self.y1 = self.y0 - 0.5, self.y1 + 0.5
        pad = 0.05 * (self.y1 - self.y0)
        self.y0 -= pad
        self.y1 += pad

    def px(self, x):
        v = math.log10(x) if self.logx else x
        return ML + (v - self.x0) / (self.x1 - self.x0) * (W - ML - MR)

    def py(self, y):
        return H - MB - (y - self.y0) / (self.y1 - self.y0) * (H - MT - MB)


def _frame(ax: _Axes, title: str, xlabel: str, ylabel: str):
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W // 2}" y="22" text-anchor="middle" font-family="sans-serif" font-size="15">{escape(title)}</text>',
        f'<rect x="{ML}" y="{MT}" width="{W - ML - MR}" height="{H - MT - MB}" fill="none" stroke="black"/>',
    ]
    if ax.logx:
        xt = list(range(math.ceil(ax.x0 - 1e-9), math.floor(ax.x1 + 1e-9) + 1))
        xpos = [ML + (v - ax.x0) / (ax.x1 - ax.x0) * (W - ML - MR) for v in xt]
        xlab = ["1e%d" % v for v in xt]
    else:
        xt = _ticks(ax.x0, ax.x1)
        xpos = [ax.px(v) for v in xt]
        xlab = ["%g" % v for v in xt]
    for x, lab in zip(xpos, xlab):
        out.append(f'<line x1="{_f(x)}" y1="{H - MB}" x2="{_f(x)}" y2="{H - MB + 5}" stroke="black"/>')
        out.append(f'<text x="{_f(x)}" y="{H - MB + 18}" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="11">{lab}</text>')
    for v in _ticks(ax.y0, ax.y1):
        y = ax.py(v)
        out.append(f'<line x1="{ML - 5}" y1="{_f(y)}" x2="{ML}" y2="{_f(y)}" stroke="black"/>')
        out.append(f'<text x="{ML - 8}" y="{_f(y + 4)}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="11">{"%g" % v}</text>')
    out.append(f'<text x="{(ML + W - MR) // 2}" y="{H - 12}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="12">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{(MT + H - MB) // 2}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="12" transform="rotate(-90 16 {(MT + H - MB) // 2})">{escape(ylabel)}</text>')
    return out


def line_plot(series: Sequence[Tuple[str, Sequence[float], Sequence[float]]], title: str, xlabel: str,
              ylabel: str, logx: bool = False, step: bool = False, markers: bool = False) -> str:
    """SVG with one polyline per (label, xs, ys); ``step`` draws right-continuous steps."""
    xs = [x for _, sx, _ in series for x in sx]
    ys = [y for _, _, sy in series for y in sy]
    ax = _Axes(xs or [1.0], ys or [0.0], logx)
    out = _frame(ax, title, xlabel, ylabel)
    for k, (label, sx, sy) in enumerate(series):
        col = PALETTE[k % len(PALETTE)]
        pts = []
        prev = None
        for x, y in zip(sx, sy):
            if not (math.isfinite(y) and (x > 0 or not logx)):
                continue
            if step and prev is not None:
                pts.append(f"{_f(ax.px(x))},{_f(ax.py(prev))}")
            pts.append(f"{_f(ax.px(x))},{_f(ax.py(y))}")
            prev = y
        if pts:
            out.append(f'<polyline fill="none" stroke="{col}" stroke-width="1.5" points="{" ".join(pts)}"/>')
        if markers:
            for x, y in zip(sx, sy):
                if math.isfinite(y) and (x > 0 or not logx):
                    out.append(f'<circle cx="{_f(ax.px(x))}" cy="{_f(ax.py(y))}" r="2.5" fill="{col}"/>')
        ly = MT + 14 + 16 * k
        out.append(f'<line x1="{W - MR + 10}" y1="{ly - 4}" x2="{W - MR + 30}" y2="{ly - 4}" stroke="{col}" '
                   f'stroke-width="2"/>')
        out.append(f'<text x="{W - MR + 35}" y="{ly}" font-family="sans-serif" font-size="11">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def scatter_plot(x: Sequence[float], y: Sequence[float], title: str, xlabel: str, ylabel: str,
                 annotation: Optional[str] = None, max_points: int = 5000) -> str:
    """Scatter panel; at most ``max_points`` points drawn (evenly strided)."""
    ax = _Axes(list(x) or [0.0], list(y) or [0.0])
    out = _frame(ax, title, xlabel, ylabel)
    n = len(x)
    stride = max(1, -(-n // max_points))
    for i in range(0, n, stride):
        out.append(f'<circle cx="{_f(ax.px(x[i]))}" cy="{_f(ax.py(y[i]))}" r="1.5" fill="{PALETTE[0]}" '
                   f'fill-opacity="0.5"/>')
    if annotation:
        out.append(f'<text x="{ML + 10}" y="{MT + 18}" font-family="sans-serif" font-size="13">'
                   f'{escape(annotation)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
