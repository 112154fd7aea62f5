"""Stroke-5 sketch data model and QuickDraw-style ingestion.

A sketch is an ordered sequence of points, each carrying a relative offset
(dx, dy) and a one-hot pen state: p1 while drawing, p2 at the end of a
stroke, p3 at the end of the whole sketch. Offsets are stored in float64
until cached; the binary cache quantizes to little-endian float32.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

CACHE_MAGIC = b"SKB5"
CACHE_VERSION = 1
_NO_LABEL = 0xFFFF  # u16 sentinel for unlabeled records

DX, DY, P1, P2, P3 = range(5)


class ParseError(ValueError):
    """Input line is not valid JSON."""


class FormatError(ValueError):
    """JSON parsed but does not describe a usable drawing."""


class DegenerateSketchError(ValueError):
    """Sketch carries no usable geometry (all offsets zero)."""


@dataclass(frozen=True)
class Point5:
    dx: float
    dy: float
    p1: int
    p2: int
    p3: int

    def is_valid(self) -> bool:
        return (self.p1, self.p2, self.p3).count(1) == 1 and self.p1 + self.p2 + self.p3 == 1

    def to_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.p1, self.p2, self.p3], dtype=np.float64)

    @classmethod
    def from_array(cls, row) -> "Point5":
        dx, dy, p1, p2, p3 = (float(v) for v in row)
        return cls(dx, dy, int(round(p1)), int(round(p2)), int(round(p3)))


@dataclass
class Sketch:
    points: np.ndarray            # [n, 5]
    stroke_ids: np.ndarray        # [n] int32
    label: int | None = None
    scale: float = 1.0

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points))
        self.stroke_ids = np.asarray(self.stroke_ids, dtype=np.int32)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def point(self, i: int) -> Point5:
        return Point5.from_array(self.points[i])

    def states(self) -> np.ndarray:
        """Per-point state class index: 0 for p1, 1 for p2, 2 for p3."""
        return np.argmax(self.points[:, 2:5], axis=1)

    def validate(self):
        """Raise if the parser invariants do not hold."""
        if self.points.shape[0] != self.stroke_ids.shape[0]:
            raise FormatError("points and stroke_ids lengths differ")
        states = self.points[:, 2:5]
        if not np.all(states.sum(axis=1) == 1):
            raise FormatError("every point must have exactly one state flag set")
        p3_rows = np.flatnonzero(self.points[:, P3] == 1)
        if p3_rows.size > 1 or (p3_rows.size == 1 and p3_rows[0] != self.n - 1):
            raise FormatError("p3 may appear only once, at the final point")
        diffs = np.diff(self.stroke_ids)
        if np.any(diffs < 0):
            raise FormatError("stroke ids must be non-decreasing")
        after_p2 = self.points[:-1, P2] == 1
        if not np.array_equal(diffs == 1, after_p2) or np.any(diffs > 1):
            raise FormatError("stroke id must increment exactly after a p2 point")


@dataclass
class SplitStats:
    p1: int
    p2: int
    p3: int
    stroke_start: int
    in_stroke: int


@dataclass
class DatasetSplit:
    train: list[Sketch] = field(default_factory=list)
    validation: list[Sketch] = field(default_factory=list)
    test: list[Sketch] = field(default_factory=list)
    class_names: list[str] = field(default_factory=list)


# -- parsing --------------------------------------------------------------


def decode_record(line: str) -> tuple[str | None, list[np.ndarray]]:
    """Decode one line of drawing JSON into (word, absolute strokes)."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise ParseError(f"malformed record JSON at byte {e.pos}: {e.msg}") from e
    drawing = obj.get("drawing")
    if not isinstance(drawing, list) or len(drawing) == 0:
        raise FormatError("record has no drawing strokes")
    strokes = []
    for i, stroke in enumerate(drawing):
        if not isinstance(stroke, (list, tuple)) or len(stroke) != 2:
            raise FormatError(f"stroke {i} is not a pair of coordinate arrays")
        xs, ys = stroke
        if len(xs) != len(ys):
            raise FormatError(
                f"stroke {i} has ragged coordinate arrays ({len(xs)} x vs {len(ys)} y)"
            )
        if len(xs) == 0:
            raise FormatError(f"stroke {i} is empty")
        strokes.append(np.stack([np.asarray(xs, dtype=np.float64),
                                 np.asarray(ys, dtype=np.float64)], axis=1))
    return obj.get("word"), strokes


def strokes_to_sketch(strokes: Sequence[np.ndarray], label: int | None = None) -> Sketch:
    """Convert absolute-coordinate strokes to offsets with pen states.

    The very first coordinate is the pen origin and is dropped; every later
    coordinate becomes one point whose offset is measured from its
    predecessor (across stroke boundaries too, that move is the pen-up jump).
    """
    coords, stroke_of, last_of_stroke = [], [], []
    for si, stroke in enumerate(strokes):
        for j in range(stroke.shape[0]):
            coords.append(stroke[j])
            stroke_of.append(si)
            last_of_stroke.append(j == stroke.shape[0] - 1)
    if len(coords) < 2:
        raise FormatError("drawing has fewer than 2 coordinates")
    coords = np.asarray(coords, dtype=np.float64)
    offsets = coords[1:] - coords[:-1]
    n = offsets.shape[0]
    points = np.zeros((n, 5), dtype=np.float64)
    points[:, :2] = offsets
    for i in range(n):
        src = i + 1  # coordinate index this point lands on
        if src == len(coords) - 1:
            points[i, P3] = 1.0
        elif last_of_stroke[src]:
            points[i, P2] = 1.0
        else:
            points[i, P1] = 1.0
    raw_ids = np.asarray(stroke_of[1:], dtype=np.int32)
    # A single-coordinate first stroke vanishes with the origin; reindex ids
    # so they stay consecutive from 0.
    _, stroke_ids = np.unique(raw_ids, return_inverse=True)
    return Sketch(points=points, stroke_ids=stroke_ids.astype(np.int32), label=label)


def parse_quickdraw_record(line: str, class_ids: dict[str, int] | None = None) -> Sketch:
    """Parse one line-delimited JSON drawing record into a Sketch."""
    word, strokes = decode_record(line)
    label = None
    if class_ids is not None and word is not None:
        label = class_ids.get(word)
    return strokes_to_sketch(strokes, label=label)


# -- preprocessing ---------------------------------------------------------


def rdp_simplify(stroke: np.ndarray, epsilon: float) -> np.ndarray:
    """Ramer-Douglas-Peucker simplification of an absolute polyline.

    Keeps both endpoints; a point survives only if some recursion level sees
    its perpendicular distance to the endpoint chord exceed ``epsilon``.
    """
    stroke = np.asarray(stroke, dtype=np.float64)
    if stroke.shape[0] < 2:
        return stroke.copy()
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    keep = np.zeros(stroke.shape[0], dtype=bool)
    keep[0] = keep[-1] = True
    _rdp_mark(stroke, 0, stroke.shape[0] - 1, epsilon, keep)
    return stroke[keep]


def _rdp_mark(pts: np.ndarray, first: int, last: int, eps: float, keep: np.ndarray):
    if last - first < 2:
        return
    seg = pts[first + 1 : last]
    a, b = pts[first], pts[last]
    chord = b - a
    length = np.hypot(chord[0], chord[1])
    if length == 0.0:
        dists = np.hypot(seg[:, 0] - a[0], seg[:, 1] - a[1])
    else:
        dists = np.abs(chord[0] * (seg[:, 1] - a[1]) - chord[1] * (seg[:, 0] - a[0])) / length
    i = int(np.argmax(dists))
    if dists[i] > eps:
        split = first + 1 + i
        keep[split] = True
        _rdp_mark(pts, first, split, eps, keep)
        _rdp_mark(pts, split, last, eps, keep)


def normalize_offsets(sketch: Sketch) -> Sketch:
    """Divide all offsets by the maximum absolute offset, recording it."""
    offs = sketch.points[:, :2]
    scale = float(np.abs(offs).max())
    if scale == 0.0:
        raise DegenerateSketchError("all offsets are zero; nothing to normalize")
    points = sketch.points.copy()
    points[:, :2] = offs / scale
    return replace(sketch, points=points, scale=scale)


def truncate_pad(sketch: Sketch, max_len: int, stroke_cap: int = 50
                 ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Fixed-length view: (points [max_len,5] f32, mask, stroke ids).

    Points beyond ``max_len`` are dropped; shorter sketches are right-padded
    with zero points and mask 0. Padded stroke ids repeat the last real id;
    all ids are clamped below ``stroke_cap`` so embedding lookups stay valid.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    points = np.zeros((max_len, 5), dtype=np.float32)
    mask = np.zeros(max_len, dtype=np.float32)
    ids = np.zeros(max_len, dtype=np.int32)
    n = min(sketch.n, max_len)
    if n > 0:
        points[:n] = sketch.points[:n].astype(np.float32)
        mask[:n] = 1.0
        ids[:n] = sketch.stroke_ids[:n]
        ids[n:] = sketch.stroke_ids[n - 1]
    np.minimum(ids, stroke_cap - 1, out=ids)
    return points, mask, ids


def truncated(sketch: Sketch, max_len: int) -> Sketch:
    if sketch.n <= max_len:
        return sketch
    return replace(
        sketch, points=sketch.points[:max_len], stroke_ids=sketch.stroke_ids[:max_len]
    )


def stroke_start_flags(sketch: Sketch) -> np.ndarray:
    """True where a point begins a stroke (first point, or predecessor had p2)."""
    flags = np.zeros(sketch.n, dtype=bool)
    if sketch.n:
        flags[0] = True
        flags[1:] = sketch.points[:-1, P2] == 1
    return flags


def derive_stroke_ids(points: np.ndarray) -> np.ndarray:
    """Stroke index per point implied by p2 boundaries."""
    n = points.shape[0]
    ids = np.zeros(n, dtype=np.int32)
    if n > 1:
        ids[1:] = np.cumsum(points[:-1, P2] == 1)
    return ids


def dataset_stats(sketches: Iterable[Sketch]) -> SplitStats:
    """Exact state and stroke-position counts over a split."""
    sketches = list(sketches)
    if not sketches:
        raise ValueError("dataset_stats needs at least one sketch")
    p_counts = np.zeros(3, dtype=np.int64)
    start = in_stroke = 0
    for s in sketches:
        p_counts += s.points[:, 2:5].sum(axis=0).astype(np.int64)
        flags = stroke_start_flags(s)
        start += int(flags.sum())
        in_stroke += int((~flags).sum())
    return SplitStats(
        p1=int(p_counts[0]), p2=int(p_counts[1]), p3=int(p_counts[2]),
        stroke_start=start, in_stroke=in_stroke,
    )


# -- binary cache ------------------------------------------------------------


def save_cache(path, sketches: Sequence[Sketch], class_names: Sequence[str] | None = None):
    """Write the compact binary cache plus a small JSON sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(CACHE_MAGIC)
        f.write(struct.pack("<HI", CACHE_VERSION, len(sketches)))
        for s in sketches:
            label = _NO_LABEL if s.label is None else int(s.label)
            if not 0 <= label <= 0xFFFF:
                raise ValueError(f"label {label} does not fit in u16")
            f.write(struct.pack("<HH", label, s.n))
            f.write(s.points.astype("<f4").tobytes())
    if class_names is not None:
        with open(str(path) + ".json", "w") as f:
            json.dump({"class_names": list(class_names), "count": len(sketches)}, f)


def load_cache(path) -> tuple[list[Sketch], list[str] | None]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"sketch cache not found: {path}")
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CACHE_MAGIC:
            raise FormatError(f"bad cache magic {magic!r} in {path}")
        version, count = struct.unpack("<HI", f.read(6))
        if version != CACHE_VERSION:
            raise FormatError(f"unsupported cache version {version}")
        sketches = []
        for _ in range(count):
            label, n = struct.unpack("<HH", f.read(4))
            pts = np.frombuffer(f.read(n * 5 * 4), dtype="<f4").reshape(n, 5)
            pts = pts.astype(np.float64)
            sketches.append(
                Sketch(
                    points=pts,
                    stroke_ids=derive_stroke_ids(pts),
                    label=None if label == _NO_LABEL else int(label),
                )
            )
    class_names = None
    sidecar = Path(str(path) + ".json")
    if sidecar.exists():
        with open(sidecar) as f:
            class_names = json.load(f).get("class_names")
    return sketches, class_names


def ingest_ndjson(in_path, out_path, rdp_epsilon: float = 2.0, max_len: int = 250,
                  class_names: Sequence[str] | None = None) -> tuple[int, list[str]]:
    """Parse an ndjson drawing file into a normalized binary cache.

    Returns (number of cached sketches, class names). Words missing from an
    explicit ``class_names`` list and degenerate drawings are skipped.
    """
    in_path = Path(in_path)
    if not in_path.exists():
        raise FileNotFoundError(f"input ndjson not found: {in_path}")
    records = []
    with open(in_path) as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(decode_record(line))
    if class_names is None:
        names = sorted({word for word, _ in records if word is not None})
    else:
        names = list(class_names)
    ids = {w: i for i, w in enumerate(names)}
    sketches = []
    for word, strokes in records:
        label = ids.get(word) if word is not None else None
        if word is not None and label is None:
            continue
        simplified = [rdp_simplify(s, rdp_epsilon) for s in strokes]
        try:
            sketch = strokes_to_sketch(simplified, label=label)
            sketch = normalize_offsets(truncated(sketch, max_len))
        except (FormatError, DegenerateSketchError):
            continue
        sketches.append(sketch)
    save_cache(out_path, sketches, class_names=names)
    return len(sketches), names
