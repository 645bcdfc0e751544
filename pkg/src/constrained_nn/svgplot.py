"""Minimal SVG line charts drawn from CSV columns.

Plots only read an existing CSV; they never compute new statistics.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")
WIDTH, HEIGHT = 640, 400
MARGIN = {"left": 70, "right": 150, "top": 40, "bottom": 50}


def read_columns(csv_path) -> dict[str, list[float]]:
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return {}
    cols = {}
    for name in rows[0]:
        try:
            cols[name] = [float(r[name]) for r in rows]
        except ValueError:
            continue
    return cols


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi == lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def line_chart(series: dict[str, tuple[list[float], list[float]]], path, title: str = "",
               xlabel: str = "", ylabel: str = "", logx: bool = False, logy: bool = False) -> Path:
    """Write a multi-series line chart. Non-positive values are dropped on log axes."""
    tx = (lambda v: math.log10(v)) if logx else (lambda v: v)
    ty = (lambda v: math.log10(v)) if logy else (lambda v: v)
    pts = {}
    for name, (xs, ys) in series.items():
        keep = [(tx(x), ty(y)) for x, y in zip(xs, ys)
                if math.isfinite(x) and math.isfinite(y) and (not logx or x > 0) and (not logy or y > 0)]
        if keep:
            pts[name] = keep
    all_x = [p[0] for v in pts.values() for p in v] or [0.0, 1.0]
    all_y = [p[1] for v in pts.values() for p in v] or [0.0, 1.0]
    x0, x1 = min(all_x), max(all_x)
    y0, y1 = min(all_y), max(all_y)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(v):
        return MARGIN["left"] + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return MARGIN["top"] + (1 - (v - y0) / (y1 - y0)) * ph

    def label(v, log):
        return f"{10 ** v:.3g}" if log else f"{v:.3g}"

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" '
           f'fill="none" stroke="black"/>']
    for v in _ticks(x0, x1):
        out.append(f'<text x="{sx(v):.1f}" y="{MARGIN["top"] + ph + 16}" text-anchor="middle">{label(v, logx)}</text>')
    for v in _ticks(y0, y1):
        out.append(f'<text x="{MARGIN["left"] - 6}" y="{sy(v) + 4:.1f}" text-anchor="end">{label(v, logy)}</text>')
    out.append(f'<text x="{MARGIN["left"] + pw / 2}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{MARGIN["top"] + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {MARGIN["top"] + ph / 2})">{escape(ylabel)}</text>')
    for i, (name, p) in enumerate(pts.items()):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in p)
        out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = MARGIN["top"] + 14 * i + 10
        out.append(f'<line x1="{WIDTH - MARGIN["right"] + 10}" y1="{ly}" x2="{WIDTH - MARGIN["right"] + 30}" '
                   f'y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{WIDTH - MARGIN["right"] + 34}" y="{ly + 4}">{escape(name)}</text>')
    out.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(out))
    return path


def plot_csv(csv_path, x: str, ys: list[str], path, **kw) -> Path:
    cols = read_columns(csv_path)
    missing = [c for c in [x, *ys] if c not in cols]
    if missing:
        raise KeyError(f"columns not in {csv_path}: {missing}")
    return line_chart({y: (cols[x], cols[y]) for y in ys}, path, **kw)
