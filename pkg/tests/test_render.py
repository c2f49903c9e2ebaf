import math

import numpy as np
import pytest

from golden_scenes import _plan, _square
from polyplan.render import ArcPrimitive, RenderStyle, plot_door_arcs, render_floorplan, save_render


def transcription_oracle(doors):
    """Independent line-by-line transcription of the door-arc rules, kept
    deliberately literal: median split at 1.5x, dominant-axis branch,
    endpoint anchoring, single quadrant of radius len vs two opposite
    quadrants of radius len/2."""
    lines = [np.asarray(d, dtype=float) for d in doors]
    lengths = [float(np.hypot(*(l[1] - l[0]))) for l in lines]
    positive = [x for x in lengths if x > 0]
    if not positive:
        return []
    median = float(np.median(positive))
    out = []
    for line, length in zip(lines, lengths):
        if length == 0:
            continue
        (x1, y1), (x2, y2) = line
        if abs(y2 - y1) > abs(x2 - x1):
            if y2 > y1:
                e1, e2 = (x1, y1), (x2, y2)
            else:
                e1, e2 = (x2, y2), (x1, y1)
            if length < 1.5 * median:
                out.append(("single_vertical", e1, length, True))
            else:
                out.append(("double_vertical", e1, length / 2, True))
                out.append(("double_vertical", e2, length / 2, False))
        else:
            if x2 > x1:
                e1, e2 = (x2, y2), (x1, y1)
            else:
                e1, e2 = (x1, y1), (x2, y2)
            if length < 1.5 * median:
                out.append(("single_horizontal", e1, length, False))
            else:
                out.append(("double_horizontal", e1, length / 2, False))
                out.append(("double_horizontal", e2, length / 2, True))
    return out


class TestPlotDoorArcs:
    def test_vertical_median_door(self):
        arcs = plot_door_arcs([[(10, 30), (10, 10)]])
        assert len(arcs) == 1
        arc = arcs[0]
        assert arc.branch == "single_vertical"
        assert arc.center == (10, 10)  # lower-y endpoint anchors
        assert arc.radius == 20.0
        assert arc.clockwise is True
        assert arc.point(arc.start_angle) == pytest.approx((10, 30))

    def test_double_door_two_quadrants(self):
        doors = [[(0, 0), (0, 10)], [(50, 0), (50, 10)], [(100, 0), (100, 30)]]
        arcs = plot_door_arcs(doors)
        assert len(arcs) == 2 + 2  # two singles, one double
        double = [a for a in arcs if a.branch == "double_vertical"]
        assert len(double) == 2
        assert all(a.radius == 15.0 for a in double)
        assert {a.center for a in double} == {(100, 0), (100, 30)}
        assert double[0].clockwise != double[1].clockwise  # opposite quadrants

    def test_horizontal_anchor_is_larger_x(self):
        arcs = plot_door_arcs([[(5, 7), (25, 7)]])
        assert arcs[0].branch == "single_horizontal"
        assert arcs[0].center == (25, 7)
        assert arcs[0].clockwise is False

    def test_single_door_uses_own_length_as_median(self):
        arcs = plot_door_arcs([[(0, 0), (0, 40)]])
        assert len(arcs) == 1
        assert arcs[0].radius == 40.0  # 40 < 1.5 * 40 -> single quadrant

    def test_zero_length_skipped_with_warning(self):
        with pytest.warns(UserWarning, match="zero-length"):
            arcs = plot_door_arcs([[(5, 5), (5, 5)], [(0, 0), (0, 10)]])
        assert len(arcs) == 1

    def test_diagonal_tie_takes_horizontal_branch(self):
        arcs = plot_door_arcs([[(0, 0), (10, 10)]])
        assert arcs[0].branch == "single_horizontal"

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_transcription_oracle(self, seed):
        rng = np.random.default_rng(seed)
        doors = []
        for _ in range(int(rng.integers(1, 9))):
            a = rng.uniform(0, 200, size=2)
            delta = rng.uniform(-40, 40, size=2)
            doors.append([a.tolist(), (a + delta).tolist()])
        arcs = plot_door_arcs(doors)
        expected = transcription_oracle(doors)
        assert len(arcs) == len(expected)
        for arc, (branch, center, radius, clockwise) in zip(arcs, expected):
            assert arc.branch == branch
            assert arc.center == pytest.approx(center)
            assert arc.radius == pytest.approx(radius)
            assert arc.clockwise == clockwise

    def test_radii_are_len_or_half_len(self):
        rng = np.random.default_rng(99)
        doors = [[rng.uniform(0, 100, 2).tolist(), rng.uniform(0, 100, 2).tolist()] for _ in range(12)]
        lengths = [float(np.hypot(*(np.array(d[1]) - np.array(d[0])))) for d in doors]
        allowed = lengths + [x / 2 for x in lengths]
        for arc in plot_door_arcs(doors):
            assert min(abs(arc.radius - v) for v in allowed) < 1e-12


class TestRenderFloorplan:
    def test_empty_plan_blank_canvas(self):
        svg = render_floorplan(_plan())
        assert svg.startswith("<svg")
        assert "<polygon" not in svg and "<path" not in svg and "<line" not in svg

    def test_deterministic_bytes(self):
        gt = _plan(
            rooms=[(_square(10, 10, 60), 2)],
            doors=[[(20, 10), (35, 10)]],
            windows=[[(70, 30), (70, 50)]],
        )
        assert render_floorplan(gt) == render_floorplan(gt)

    def test_structural_counts(self):
        gt = _plan(
            rooms=[(_square(10, 10, 60), 2), (_square(100, 100, 80), 1)],
            doors=[[(20, 10), (35, 10)], [(100, 120), (100, 150)]],
            windows=[[(70, 30), (70, 50)]],
        )
        svg = render_floorplan(gt)
        assert svg.count("<polygon") == 2
        assert svg.count("<path") == len(plot_door_arcs(gt.doors))
        assert svg.count("<line") == 1

    def test_color_depends_on_location(self):
        a = _plan(rooms=[(_square(10, 10, 40), 0)])
        b = _plan(rooms=[(_square(200, 200, 40), 0)])
        color_a = render_floorplan(a).split('fill="')[2].split('"')[0]
        color_b = render_floorplan(b).split('fill="')[2].split('"')[0]
        assert color_a != color_b

    def test_save_svg_and_png(self, tmp_path):
        gt = _plan(rooms=[(_square(10, 10, 60), 2)], doors=[[(20, 10), (35, 10)]])
        save_render(gt, tmp_path / "plan.svg")
        save_render(gt, tmp_path / "plan.png")
        assert (tmp_path / "plan.svg").read_text().startswith("<svg")
        assert (tmp_path / "plan.png").stat().st_size > 0

    def test_unsupported_format_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            save_render(_plan(), tmp_path / "plan.pdf")
