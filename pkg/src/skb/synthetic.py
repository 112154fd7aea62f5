"""Procedural toy drawings in the line-delimited JSON drawing format.

Ten parametric shape classes with jittered placement, rotation, and point
noise. Deterministic given a seed, and intentionally easy enough that small
encoders separate them, which is what the desk-scale experiments need.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .data import Sketch, normalize_offsets, rdp_simplify, strokes_to_sketch, truncated

CLASS_NAMES = [
    "line", "circle", "square", "triangle", "zigzag",
    "star", "spiral", "cross", "arc", "stairs",
]


def _interp(verts: np.ndarray, per_edge: int) -> np.ndarray:
    out = [verts[0]]
    for a, b in zip(verts[:-1], verts[1:]):
        for t in np.linspace(0, 1, per_edge + 1)[1:]:
            out.append(a + t * (b - a))
    return np.asarray(out)


def _unit_shape(class_id: int, rng: np.random.Generator) -> list[np.ndarray]:
    name = CLASS_NAMES[class_id]
    if name == "line":
        return [_interp(np.array([[-1.0, 0.0], [1.0, 0.0]]), 13)]
    if name == "circle":
        t = np.linspace(0, 2 * np.pi, 21)
        return [np.stack([np.cos(t), np.sin(t)], axis=1)]
    if name == "square":
        v = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1], [-1, -1]], dtype=float)
        return [_interp(v, 4)]
    if name == "triangle":
        v = np.array([[-1, -0.8], [1, -0.8], [0, 1.0], [-1, -0.8]], dtype=float)
        return [_interp(v, 5)]
    if name == "zigzag":
        xs = np.linspace(-1, 1, 9)
        ys = np.where(np.arange(9) % 2 == 0, -0.5, 0.5)
        return [_interp(np.stack([xs, ys], axis=1), 2)]
    if name == "star":
        ang = -np.pi / 2 + np.arange(11) * np.pi / 5
        rad = np.where(np.arange(11) % 2 == 0, 1.0, 0.45)
        return [_interp(np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1), 2)]
    if name == "spiral":
        t = np.linspace(0, 5 * np.pi, 28)
        r = 0.15 + 0.85 * t / (5 * np.pi)
        return [np.stack([r * np.cos(t), r * np.sin(t)], axis=1)]
    if name == "cross":
        return [
            _interp(np.array([[-1.0, 0.0], [1.0, 0.0]]), 8),
            _interp(np.array([[0.0, -1.0], [0.0, 1.0]]), 8),
        ]
    if name == "arc":
        t = np.linspace(np.pi, 0, 14)
        return [np.stack([np.cos(t), 0.9 * np.sin(t)], axis=1)]
    if name == "stairs":
        v = [np.array([-1.0, -1.0])]
        step = 0.5
        for _ in range(4):
            v.append(v[-1] + [step, 0.0])
            v.append(v[-1] + [0.0, step])
        return [_interp(np.asarray(v), 2)]
    raise ValueError(f"unknown class id {class_id}")


def _wobble(pts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Low-frequency hand wobble so simplification keeps interior points."""
    n = pts.shape[0]
    t = np.linspace(0.0, 1.0, n)
    amp = rng.uniform(2.0, 4.5)
    freq = rng.uniform(1.5, 3.5)
    phase = rng.uniform(0, 2 * np.pi, size=2)
    dx = amp * np.sin(2 * np.pi * freq * t + phase[0])
    dy = amp * np.sin(2 * np.pi * freq * t + phase[1])
    return pts + np.stack([dx, dy], axis=1)


def make_drawing(class_id: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Absolute-coordinate strokes for one jittered instance, roughly [0, 255]."""
    strokes = _unit_shape(class_id, rng)
    theta = rng.uniform(-0.25, 0.25)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    radius = rng.uniform(55.0, 90.0)
    center = rng.uniform(105.0, 150.0, size=2)
    noise = 1.0
    placed = []
    for s in strokes:
        pts = (s @ rot.T) * radius + center
        pts = _wobble(pts, rng) + rng.normal(0.0, noise, size=s.shape)
        placed.append(np.clip(np.round(pts), 0, 255))
    return placed


def make_random_sketch(rng: np.random.Generator, n_min: int = 20, n_max: int = 60,
                       max_strokes: int = 5) -> Sketch:
    """A structurally valid random-walk sketch, for property tests."""
    n = int(rng.integers(n_min, n_max + 1))
    num_strokes = int(rng.integers(1, min(max_strokes, n) + 1))
    points = np.zeros((n, 5), dtype=np.float64)
    points[:, :2] = rng.normal(0.0, 0.3, size=(n, 2))
    points[np.abs(points[:, 0]).argmax(), 0] = 1.0  # pin the normalization scale
    ends = np.sort(rng.choice(np.arange(n - 1), size=num_strokes - 1, replace=False)) \
        if num_strokes > 1 else np.empty(0, dtype=np.int64)
    points[:, 0 + 2] = 1.0
    points[ends, 2] = 0.0
    points[ends, 3] = 1.0
    points[-1, 2] = 0.0
    points[-1, 3] = 0.0
    points[-1, 4] = 1.0
    ids = np.zeros(n, dtype=np.int32)
    if n > 1:
        ids[1:] = np.cumsum(points[:-1, 3] == 1)
    return Sketch(points=points, stroke_ids=ids, label=int(rng.integers(0, 10)))


def make_record(class_id: int, rng: np.random.Generator) -> dict:
    drawing = [
        [[float(x) for x in s[:, 0]], [float(y) for y in s[:, 1]]]
        for s in make_drawing(class_id, rng)
    ]
    return {"word": CLASS_NAMES[class_id], "drawing": drawing}


def write_ndjson(path, num_classes: int, per_class: int, seed: int) -> int:
    """Write ``num_classes * per_class`` shuffled records; returns the count."""
    if not 1 <= num_classes <= len(CLASS_NAMES):
        raise ValueError(f"num_classes must be in [1, {len(CLASS_NAMES)}]")
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(num_classes), per_class)
    rng.shuffle(labels)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for c in labels:
            f.write(json.dumps(make_record(int(c), rng)) + "\n")
    return len(labels)


def make_sketches(num_classes: int, per_class: int, seed: int,
                  rdp_epsilon: float = 2.0, max_len: int = 250) -> list[Sketch]:
    """In-memory convenience path: generate, simplify, normalize, label."""
    if not 1 <= num_classes <= len(CLASS_NAMES):
        raise ValueError(f"num_classes must be in [1, {len(CLASS_NAMES)}]")
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(num_classes), per_class)
    rng.shuffle(labels)
    out = []
    for c in labels:
        strokes = [rdp_simplify(s, rdp_epsilon) for s in make_drawing(int(c), rng)]
        sketch = strokes_to_sketch(strokes, label=int(c))
        out.append(normalize_offsets(truncated(sketch, max_len)))
    return out
