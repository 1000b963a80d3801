"""Equirectangular SVG scatter of per-site error statistics."""
from __future__ import annotations

from typing import Sequence
from xml.sax.saxutils import escape

METRICS = ("rmse", "mae", "mbe")

# viridis anchors for magnitude metrics; blue-white-red for signed bias
SEQUENTIAL = [(68, 1, 84), (59, 82, 139), (33, 145, 140), (94, 201, 98), (253, 231, 37)]
DIVERGING = [(33, 102, 172), (146, 197, 222), (247, 247, 247), (244, 165, 130), (178, 24, 43)]

WIDTH, HEIGHT = 720, 360
MARGIN_TOP, MARGIN_LEFT = 30, 10
LEGEND_H = 60


def _lerp_color(stops, t: float) -> str:
    t = min(max(t, 0.0), 1.0) * (len(stops) - 1)
    i = min(int(t), len(stops) - 2)
    f = t - i
    rgb = [round(a + (b - a) * f) for a, b in zip(stops[i], stops[i + 1])]
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def color_scale(metric: str, values: Sequence[float]):
    """Return (color function, low, high). Bias uses a range symmetric about zero."""
    vals = [v for v in values if v is not None]
    if metric == "mbe":
        m = max((abs(v) for v in vals), default=1.0) or 1.0
        lo, hi, stops = -m, m, DIVERGING
    else:
        lo = 0.0
        hi = max(vals, default=1.0) or 1.0
        stops = SEQUENTIAL
    return (lambda v: _lerp_color(stops, (v - lo) / (hi - lo))), lo, hi


def _xy(lat: float, lon: float) -> tuple[float, float]:
    lon = (lon + 180.0) % 360.0 - 180.0
    return (MARGIN_LEFT + (lon + 180.0) / 360.0 * WIDTH,
            MARGIN_TOP + (90.0 - lat) / 180.0 * HEIGHT)


def render_site_map(sites: Sequence[dict], metric: str, title: str = "") -> str:
    """``sites``: dicts with name/site, lat, lon and the metric key."""
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; choose from {', '.join(METRICS)}")
    color, lo, hi = color_scale(metric, [s.get(metric) for s in sites])
    total_w = WIDTH + 2 * MARGIN_LEFT
    total_h = MARGIN_TOP + HEIGHT + LEGEND_H
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{total_w}" '
        f'height="{total_h}" viewBox="0 0 {total_w} {total_h}">',
        f'<rect x="0" y="0" width="{total_w}" height="{total_h}" fill="white"/>',
        f'<text x="{MARGIN_LEFT}" y="20" font-family="sans-serif" font-size="14">'
        f'{escape(title or metric.upper())}</text>',
        f'<g id="plot"><rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{WIDTH}" height="{HEIGHT}" '
        'fill="#eef3f7" stroke="#888"/>',
    ]
    for lon in range(-150, 180, 30):
        x, _ = _xy(0, lon)
        out.append(f'<line x1="{x:.2f}" y1="{MARGIN_TOP}" x2="{x:.2f}" y2="{MARGIN_TOP + HEIGHT}" '
                   'stroke="#ccc" stroke-width="0.5"/>')
    for lat in range(-60, 90, 30):
        _, y = _xy(lat, 0)
        out.append(f'<line x1="{MARGIN_LEFT}" y1="{y:.2f}" x2="{MARGIN_LEFT + WIDTH}" y2="{y:.2f}" '
                   'stroke="#ccc" stroke-width="0.5"/>')
    out.append('<g id="sites">')
    for s in sites:
        v = s.get(metric)
        if v is None:
            continue
        x, y = _xy(s["lat"], s["lon"])
        name = escape(str(s.get("site", s.get("name", ""))))
        out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="4" fill="{color(v)}" stroke="black" '
                   f'stroke-width="0.5"><title>{name}: {metric}={v:.4f}</title></circle>')
    out.append("</g></g>")

    # legend: 50-step color bar with end and midpoint labels
    ly = MARGIN_TOP + HEIGHT + 15
    bar_w, steps = 300, 50
    out.append('<g id="legend">')
    for i in range(steps):
        v = lo + (hi - lo) * (i + 0.5) / steps
        out.append(f'<rect x="{MARGIN_LEFT + i * bar_w / steps:.2f}" y="{ly}" '
                   f'width="{bar_w / steps + 0.5:.2f}" height="12" fill="{color(v)}"/>')
    for frac, v in ((0.0, lo), (0.5, (lo + hi) / 2), (1.0, hi)):
        out.append(f'<text x="{MARGIN_LEFT + frac * bar_w:.2f}" y="{ly + 28}" font-family="sans-serif" '
                   f'font-size="10" text-anchor="middle">{v:.3g}</text>')
    out.append(f'<text x="{MARGIN_LEFT + bar_w + 10}" y="{ly + 10}" font-family="sans-serif" '
               f'font-size="11">{metric.upper()}</text>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
