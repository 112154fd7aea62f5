"""SVG rendering of stroke-5 sequences.

Offsets are integrated to absolute coordinates starting at the pen origin.
The pen lifts after a p2 point and the drawing ends at p3. Triples
(original, masked, completed) render as three labeled panels; segments
arriving at masked points are drawn dashed in the highlight color.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import P2, P3, Sketch
from .masking import MaskPlan

PANEL = 220.0
PAD = 16.0
LABEL_BAND = 22.0
STROKE_STYLE = 'stroke="#222" stroke-width="2.4" fill="none" stroke-linecap="round" stroke-linejoin="round"'
MASK_STYLE = 'stroke="#d33" stroke-width="2.4" fill="none" stroke-dasharray="5 4" stroke-linecap="round"'


def integrate_offsets(points: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Absolute coordinates of each point, pen origin at (0, 0)."""
    points = np.asarray(points, dtype=np.float64)
    return np.cumsum(points[:, :2] * scale, axis=0)


def _polylines(points: np.ndarray) -> list[list[tuple[float, float, int]]]:
    """Vertex runs between pen lifts; each vertex is (x, y, point index).

    Index -1 marks the origin vertex, which belongs to the first stroke.
    """
    coords = integrate_offsets(points)
    strokes: list[list[tuple[float, float, int]]] = []
    current: list[tuple[float, float, int]] = [(0.0, 0.0, -1)]
    for j in range(points.shape[0]):
        current.append((coords[j, 0], coords[j, 1], j))
        if points[j, P2] == 1 or points[j, P3] == 1:
            strokes.append(current)
            current = []
            if points[j, P3] == 1:
                break
    if current:
        strokes.append(current)
    return [s for s in strokes if len(s) >= 1]


def _panel_paths(points: np.ndarray, masked: set[int], offset_x: float,
                 transform) -> list[str]:
    parts = []
    for line in _polylines(points):
        if len(line) == 1:
            x, y = transform(line[0][0], line[0][1])
            parts.append(
                f'<circle cx="{x + offset_x:.2f}" cy="{y:.2f}" r="2" fill="#222"/>'
            )
            continue
        # Split the polyline into runs of same style: a segment inherits the
        # masked flag of the point it arrives at.
        runs: list[tuple[bool, list[tuple[float, float]]]] = []
        for (x0, y0, _), (x1, y1, j1) in zip(line[:-1], line[1:]):
            flag = j1 in masked
            if runs and runs[-1][0] == flag:
                runs[-1][1].append((x1, y1))
            else:
                runs.append((flag, [(x0, y0), (x1, y1)]))
        for flag, verts in runs:
            pts = [transform(x, y) for x, y in verts]
            d = "M " + " L ".join(f"{x + offset_x:.2f} {y:.2f}" for x, y in pts)
            style = MASK_STYLE if flag else STROKE_STYLE
            parts.append(f'<path d="{d}" {style}/>')
    return parts


def _bounds(panels: list[np.ndarray]) -> tuple[float, float, float, float]:
    xs, ys = [0.0], [0.0]
    for pts in panels:
        coords = integrate_offsets(pts)
        if coords.size:
            xs.extend([coords[:, 0].min(), coords[:, 0].max()])
            ys.extend([coords[:, 1].min(), coords[:, 1].max()])
    return min(xs), min(ys), max(xs), max(ys)


def _as_points(item) -> np.ndarray:
    return item.points if isinstance(item, Sketch) else np.asarray(item)


def render_svg(item, path, plan: MaskPlan | None = None,
               labels: tuple[str, ...] = ("original", "masked", "completed")) -> Path:
    """Write an SVG for one sketch or an (original, masked, completed) triple."""
    if isinstance(item, (tuple, list)):
        panels = [_as_points(p) for p in item]
        titles = list(labels[: len(panels)])
    else:
        panels = [_as_points(item)]
        titles = [labels[0]] if labels else [""]
    masked: set[int] = set()
    if plan is not None:
        masked = set(int(i) for i in plan.pos_masked) | set(int(i) for i in plan.state_masked)

    x0, y0, x1, y1 = _bounds(panels)
    span = max(x1 - x0, y1 - y0, 1e-9)
    inner = PANEL - 2 * PAD

    def transform(x, y):
        return (PAD + (x - x0) / span * inner, PAD + (y - y0) / span * inner)

    width = PANEL * len(panels)
    height = PANEL + LABEL_BAND
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
        f'height="{height:.0f}" viewBox="0 0 {width:.0f} {height:.0f}">',
        f'<rect width="{width:.0f}" height="{height:.0f}" fill="white"/>',
    ]
    for i, (pts, title) in enumerate(zip(panels, titles)):
        ox = i * PANEL
        highlight = masked if i != 0 else set()
        parts.append(
            f'<rect x="{ox + 2:.0f}" y="2" width="{PANEL - 4:.0f}" '
            f'height="{PANEL - 4:.0f}" fill="none" stroke="#bbb"/>'
        )
        parts.extend(_panel_paths(pts, highlight, ox, transform))
        parts.append(
            f'<text x="{ox + PANEL / 2:.1f}" y="{PANEL + 15:.1f}" font-family="sans-serif" '
            f'font-size="13" text-anchor="middle">{title}</text>'
        )
    parts.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(parts))
    return path
