import json

import numpy as np
import pytest

from skb.data import normalize_offsets, parse_quickdraw_record
from skb.masking import MaskPlan
from skb.render import integrate_offsets, render_svg
from skb.synthetic import make_record


def test_integration_round_trips_parsed_record(rng):
    record = make_record(2, rng)
    line = json.dumps(record)
    sketch = normalize_offsets(parse_quickdraw_record(line))
    coords = integrate_offsets(sketch.points, scale=sketch.scale)
    # original absolute coordinates, relative to the dropped origin
    absolute = np.concatenate(
        [np.stack([np.asarray(s[0]), np.asarray(s[1])], axis=1) for s in record["drawing"]]
    )
    expected = absolute[1:] - absolute[0]
    np.testing.assert_allclose(coords, expected, atol=1e-4)


def test_single_two_point_stroke_renders_one_segment(tmp_path):
    sketch = parse_quickdraw_record(json.dumps({"word": "x", "drawing": [[[0, 3], [0, 4]]]}))
    path = render_svg(sketch, tmp_path / "one.svg")
    svg = path.read_text()
    assert svg.count("<path ") == 1
    assert "M " in svg and " L " in svg


def test_triple_renders_three_labeled_panels(tmp_path, rng):
    pts = np.zeros((6, 5), dtype=np.float32)
    pts[:, 0] = rng.normal(size=6)
    pts[:, 1] = rng.normal(size=6)
    pts[:, 2] = 1.0
    pts[2, 2:] = [0, 1, 0]
    pts[-1, 2:] = [0, 0, 1]
    plan = MaskPlan.empty()
    plan.pos_masked = np.array([1, 4])
    masked = pts.copy()
    masked[plan.pos_masked, :2] = 0.0
    path = render_svg((pts, masked, pts), tmp_path / "triple.svg", plan=plan)
    svg = path.read_text()
    for label in ("original", "masked", "completed"):
        assert f">{label}</text>" in svg
    # masked panel carries the dashed highlight style; first panel does not
    assert "stroke-dasharray" in svg


def test_masked_style_only_on_masked_segments(tmp_path):
    pts = np.zeros((4, 5), dtype=np.float32)
    pts[:, 0] = [1.0, 1.0, 1.0, 1.0]
    pts[:, 2] = 1.0
    pts[-1, 2:] = [0, 0, 1]
    plan = MaskPlan.empty()
    plan.state_masked = np.array([2])
    path = render_svg((pts, pts, pts), tmp_path / "m.svg", plan=plan)
    svg = path.read_text()
    assert svg.count("stroke-dasharray") == 2  # panels 2 and 3, one run each


def test_pen_lift_splits_paths(tmp_path):
    pts = np.zeros((4, 5), dtype=np.float32)
    pts[:, 0] = 1.0
    pts[:, 2] = 1.0
    pts[1, 2:] = [0, 1, 0]   # pen lift after point 1
    pts[-1, 2:] = [0, 0, 1]
    path = render_svg(pts, tmp_path / "strokes.svg")
    svg = path.read_text()
    assert svg.count("<path ") == 2


def test_unwritable_path_raises(tmp_path):
    pts = np.zeros((2, 5), dtype=np.float32)
    pts[:, 0] = 1.0
    pts[:, 2] = 1.0
    pts[-1, 2:] = [0, 0, 1]
    with pytest.raises(OSError):
        render_svg(pts, "/proc/definitely/not/writable.svg")
