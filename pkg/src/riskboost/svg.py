"""Minimal static SVG output: curve polylines and horizontal bar charts."""

from __future__ import annotations

from html import escape
from typing import Sequence

W, H, PAD = 420, 420, 48
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _xy(x: float, y: float) -> tuple[float, float]:
    return PAD + x * (W - 2 * PAD), H - PAD - y * (H - 2 * PAD)


def curves(series: dict[str, Sequence[Sequence[float]]], title: str, xlabel: str, ylabel: str,
           diagonal: bool = False) -> str:
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<rect x="{PAD}" y="{PAD}" width="{W - 2 * PAD}" height="{H - 2 * PAD}" fill="none" stroke="black"/>',
        f'<text x="{W / 2}" y="{PAD / 2}" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{W / 2}" y="{H - 12}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="14" y="{H / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {H / 2})">{escape(ylabel)}</text>',
    ]
    if diagonal:
        (x0, y0), (x1, y1) = _xy(0, 0), _xy(1, 1)
        parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y1}" stroke="#999" stroke-dasharray="4 4"/>')
    for n, (name, pts) in enumerate(series.items()):
        color = COLORS[n % len(COLORS)]
        coords = " ".join("%.2f,%.2f" % _xy(float(x), float(y)) for x, y in pts)
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{PAD + 8}" y="{PAD + 16 + 14 * n}" font-size="11" fill="{color}">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def bars(entries: Sequence[tuple[str, float]], title: str) -> str:
    n = max(len(entries), 1)
    row = 18
    height = 2 * PAD + n * row
    label_w = 110
    top = max((v for _, v in entries), default=0.0) or 1.0
    span = W - PAD - label_w - 10
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{height}" viewBox="0 0 {W} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{W / 2}" y="{PAD / 2}" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]
    for i, (name, v) in enumerate(entries):
        y = PAD + i * row
        parts.append(f'<text x="{label_w - 4}" y="{y + 12}" text-anchor="end" font-size="11">{escape(name)}</text>')
        parts.append(f'<rect x="{label_w}" y="{y + 2}" width="{span * v / top:.2f}" height="{row - 4}" fill="{COLORS[0]}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
