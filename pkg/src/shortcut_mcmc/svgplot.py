"""Minimal SVG scatter plots, single panel or a labeled grid of panels."""
from __future__ import annotations

from html import escape
from pathlib import Path
from typing import Sequence

import numpy as np

PANEL = 240
GAP = 12
LABEL = 28
MARKER_R = 1.0  # 2px markers


def data_bounds(point_sets: Sequence[np.ndarray], margin: float = 0.05):
    """Common (xmin, xmax, ymin, ymax) over all sets, padded by ``margin`` of the span."""
    allpts = np.concatenate([np.asarray(p) for p in point_sets])
    lo, hi = allpts.min(axis=0), allpts.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    lo, hi = lo - margin * span, hi + margin * span
    return float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1])


def _panel(points: np.ndarray, x0: float, y0: float, bounds, color: str) -> list[str]:
    xmin, xmax, ymin, ymax = bounds
    sx = PANEL / (xmax - xmin)
    sy = PANEL / (ymax - ymin)
    out = [f'<rect x="{x0:.2f}" y="{y0:.2f}" width="{PANEL}" height="{PANEL}" fill="white" stroke="#999"/>']
    px = x0 + (points[:, 0] - xmin) * sx
    py = y0 + PANEL - (points[:, 1] - ymin) * sy  # SVG y grows downward
    out.append(f'<g fill="{color}">')
    out.extend(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="{MARKER_R}"/>' for a, b in zip(px, py))
    out.append("</g>")
    return out


def render_grid(panels: Sequence[Sequence[np.ndarray | None]], row_labels: Sequence[str] = (),
                col_labels: Sequence[str] = (), title: str | None = None, color: str = "#1f5fa8") -> str:
    """Render a rows x cols grid; ``None`` cells are left empty. All panels share one viewport."""
    rows = len(panels)
    cols = max(len(r) for r in panels)
    present = [p for r in panels for p in r if p is not None]
    if not present or any(len(p) == 0 for p in present):
        raise ValueError("nothing to plot: every panel needs at least one point")
    bounds = data_bounds(present)
    left = LABEL if row_labels else 0
    top = (LABEL if col_labels else 0) + (LABEL if title else 0)
    width = left + cols * PANEL + (cols - 1) * GAP + 2 * GAP
    height = top + rows * PANEL + (rows - 1) * GAP + 2 * GAP
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="13">',
           f'<rect width="{width}" height="{height}" fill="white"/>']
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="{GAP + 14}" text-anchor="middle">{escape(title)}</text>')
    for j, lab in enumerate(col_labels):
        cx = GAP + left + j * (PANEL + GAP) + PANEL / 2
        out.append(f'<text x="{cx:.1f}" y="{top - 8}" text-anchor="middle">{escape(str(lab))}</text>')
    for i, row in enumerate(panels):
        y0 = GAP + top + i * (PANEL + GAP)
        if i < len(row_labels):
            cy = y0 + PANEL / 2
            out.append(f'<text x="{GAP + 8}" y="{cy:.1f}" text-anchor="middle" '
                       f'transform="rotate(-90 {GAP + 8} {cy:.1f})">{escape(str(row_labels[i]))}</text>')
        for j, pts in enumerate(row):
            if pts is not None:
                out.extend(_panel(np.asarray(pts), GAP + left + j * (PANEL + GAP), y0, bounds, color))
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path, panels, **kw) -> None:
    Path(path).write_text(render_grid(panels, **kw))
