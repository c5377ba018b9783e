"""Minimal standalone SVG rendering: polyline charts and heat grids.

Deliberately tiny; no plotting library.  Output is deterministic and each
file embeds its numeric data in a metadata block so plots can be diffed.
"""

import os
from typing import Sequence

import numpy as np

WIDTH, HEIGHT = 640, 480
MARGIN = 56
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _header(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="24" text-anchor="middle" font-size="16" '
        f'font-family="sans-serif">{title}</text>',
    ]


def _metadata(data_block: str) -> str:
    return f"<metadata><![CDATA[\n{data_block}\n]]></metadata>"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def render_line_plot(
    path: str,
    xs: Sequence[float],
    series: Sequence[tuple[str, Sequence[float]]],
    title: str,
    data_block: str,
) -> None:
    xs = np.asarray(xs, dtype=float)
    ys_all = np.concatenate([np.asarray(ys, dtype=float) for _, ys in series])
    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = float(min(ys_all.min(), 0.0)), float(ys_all.max())
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0
    plot_w, plot_h = WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN

    def sx(x: float) -> float:
        return MARGIN + (x - x_lo) / (x_hi - x_lo or 1.0) * plot_w

    def sy(y: float) -> float:
        return HEIGHT - MARGIN - (y - y_lo) / (y_hi - y_lo) * plot_h

    parts = _header(title)
    parts.append(_metadata(data_block))
    parts.append(
        f'<rect x="{MARGIN}" y="{MARGIN}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="black"/>'
    )
    for tx in _ticks(x_lo, x_hi):
        parts.append(
            f'<line x1="{sx(tx):.2f}" y1="{HEIGHT - MARGIN}" x2="{sx(tx):.2f}" '
            f'y2="{HEIGHT - MARGIN + 6}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{sx(tx):.2f}" y="{HEIGHT - MARGIN + 20}" text-anchor="middle" '
            f'font-size="11" font-family="sans-serif">{tx:.3g}</text>'
        )
    for ty in _ticks(y_lo, y_hi):
        parts.append(
            f'<line x1="{MARGIN - 6}" y1="{sy(ty):.2f}" x2="{MARGIN}" '
            f'y2="{sy(ty):.2f}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{MARGIN - 10}" y="{sy(ty):.2f}" text-anchor="end" '
            f'font-size="11" font-family="sans-serif">{ty:.3g}</text>'
        )
    for i, (label, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(
            f"{sx(float(x)):.2f},{sy(float(y)):.2f}" for x, y in zip(xs, ys)
        )
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(
            f'<text x="{WIDTH - MARGIN + 4}" y="{MARGIN + 16 * i + 12}" font-size="11" '
            f'font-family="sans-serif" fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    _write(path, parts)


def render_heat_grid(path: str, matrix: np.ndarray, title: str, data_block: str) -> None:
    matrix = np.asarray(matrix, dtype=float)
    rows, cols = matrix.shape
    top = matrix.max()
    scale = top if top > 0 else 1.0
    plot_w, plot_h = WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN
    cell_w, cell_h = plot_w / cols, plot_h / rows
    parts = _header(title)
    parts.append(_metadata(data_block))
    for r in range(rows):
        for c in range(cols):
            level = matrix[r, c] / scale
            # white -> dark blue ramp
            red = int(round(255 * (1.0 - level)))
            green = int(round(255 * (1.0 - 0.85 * level)))
            blue = int(round(255 - 90 * level))
            parts.append(
                f'<rect x="{MARGIN + c * cell_w:.2f}" y="{MARGIN + r * cell_h:.2f}" '
                f'width="{cell_w:.2f}" height="{cell_h:.2f}" '
                f'fill="rgb({red},{green},{blue})"/>'
            )
    parts.append(
        f'<rect x="{MARGIN}" y="{MARGIN}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="black"/>'
    )
    parts.append("</svg>")
    _write(path, parts)


def _write(path: str, parts: list[str]) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
