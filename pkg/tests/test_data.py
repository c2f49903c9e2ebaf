import json

import numpy as np
import pytest

from polyplan.data import (
    AnnotationError,
    Floorplan,
    SyntheticConfig,
    generate_synthetic,
    generate_synthetic_cloud,
    load_annotations,
    load_density,
    pad_targets,
    project_to_density,
    save_annotations,
    save_density,
    unpad_targets,
)
from polyplan.geometry import polygon_iou, signed_area


def make_plan():
    room_a = np.array([(10.0, 10.0), (100.0, 10.0), (100.0, 80.0), (10.0, 80.0)])
    room_b = np.array([(120.0, 10.0), (200.0, 10.0), (200.0, 90.0), (160.0, 90.0), (160.0, 50.0), (120.0, 50.0)])
    plan = Floorplan(width=256, height=256)
    plan.rooms = [(room_a, 2), (room_b, 5)]
    plan.doors = [np.array([(40.0, 10.0), (55.0, 10.0)])]
    plan.windows = [np.array([(100.0, 30.0), (100.0, 45.0)])]
    return plan


class TestProjectToDensity:
    def test_single_pixel(self):
        cloud = np.tile([10.5, 20.5, 1.0], (50, 1))
        d = project_to_density(cloud, (0, 0, 256, 256), (256, 256))
        assert d[20, 10] == 1.0
        assert d.sum() == 1.0

    def test_two_pixel_ratio(self):
        cloud = np.array([[5.5, 5.5, 0.0]] * 10 + [[9.5, 5.5, 0.0]] * 5)
        d = project_to_density(cloud, (0, 0, 16, 16), (16, 16))
        assert d[5, 5] == 1.0
        assert d[5, 9] == 0.5

    def test_empty_cloud_raises(self):
        with pytest.raises(ValueError):
            project_to_density(np.zeros((0, 3)), (0, 0, 1, 1), (16, 16))

    def test_uniform_cloud_against_histogram_oracle(self):
        rng = np.random.default_rng(0)
        pts = rng.uniform(0, 256, size=(100_000, 2))
        cloud = np.concatenate([pts, np.zeros((len(pts), 1))], axis=1)
        d = project_to_density(cloud, (0, 0, 256, 256), (256, 256))
        assert d.max() == 1.0
        counts, _, _ = np.histogram2d(pts[:, 1], pts[:, 0], bins=256, range=((0, 256), (0, 256)))
        expected_mean = counts.mean() / counts.max()
        assert d.mean() == pytest.approx(expected_mean, rel=0.2)

    def test_values_in_unit_interval(self):
        rng = np.random.default_rng(1)
        cloud = rng.uniform(0, 64, size=(5000, 3))
        d = project_to_density(cloud, (0, 0, 64, 64), (64, 64))
        assert d.min() >= 0.0 and d.max() == 1.0


class TestPadTargets:
    def test_label_row_sums(self):
        plan = make_plan().normalized()
        padded = pad_targets(plan, 3, 6)
        assert padded.labels.sum(axis=1).tolist() == [4.0, 6.0, 0.0]
        assert padded.gt_count == 2
        assert padded.types.tolist() == [2, 5, -1]

    def test_empty_plan_all_zero(self):
        padded = pad_targets(Floorplan(width=1, height=1), 4, 8)
        assert padded.labels.sum() == 0
        assert padded.gt_count == 0

    def test_sentinel_beyond_length(self):
        plan = make_plan().normalized()
        padded = pad_targets(plan, 3, 6)
        assert np.all(padded.coords[0, 4:] == 0.0)
        assert np.all(padded.coords[2] == 0.0)

    def test_too_many_polygons_raises(self):
        plan = make_plan().normalized()
        with pytest.raises(ValueError, match="M=1"):
            pad_targets(plan, 1, 8)

    def test_too_many_vertices_raises(self):
        plan = make_plan().normalized()
        with pytest.raises(ValueError, match="N=4"):
            pad_targets(plan, 4, 4)

    def test_round_trip(self):
        plan = make_plan().normalized()
        padded = pad_targets(plan, 6, 8, include_lines=True)
        back = unpad_targets(padded)
        assert len(back.rooms) == 2 and len(back.doors) == 1 and len(back.windows) == 1
        for (c1, t1), (c2, t2) in zip(plan.rooms, back.rooms):
            np.testing.assert_array_equal(c1, c2)
            assert t1 == t2
        np.testing.assert_array_equal(plan.doors[0], back.doors[0])
        np.testing.assert_array_equal(plan.windows[0], back.windows[0])

    def test_normalize_scale_round_trip(self):
        plan = make_plan()
        back = plan.normalized().scaled(plan.width, plan.height)
        np.testing.assert_array_equal(back.rooms[0][0], plan.rooms[0][0])


class TestGenerateSynthetic:
    def test_deterministic(self):
        cfg = SyntheticConfig(with_lines=True)
        d1, p1 = generate_synthetic(42, cfg)
        d2, p2 = generate_synthetic(42, cfg)
        np.testing.assert_array_equal(d1, d2)
        assert len(p1.rooms) == len(p2.rooms)
        for (c1, t1), (c2, t2) in zip(p1.rooms, p2.rooms):
            np.testing.assert_array_equal(c1, c2)
            assert t1 == t2

    def test_single_rectangle(self):
        cfg = SyntheticConfig(min_rooms=1, max_rooms=1, min_vertices=4, max_vertices=4)
        _, plan = generate_synthetic(7, cfg)
        assert len(plan.rooms) == 1
        corners, _ = plan.rooms[0]
        assert corners.shape == (4, 2)
        assert signed_area(corners) > 0

    def test_all_walls_rendered_without_dropout(self):
        cfg = SyntheticConfig(dropout=0.0, noise=0.0, min_rooms=2, max_rooms=2)
        density, plan = generate_synthetic(3, cfg)
        # rendering oracle: walk each wall at sub-pixel steps; the density
        # pixel under every sample must be occupied
        for corners, _ in plan.rooms:
            closed = np.vstack([corners, corners[:1]])
            for a, b in zip(closed[:-1], closed[1:]):
                for t in np.linspace(0.02, 0.98, 40):
                    x, y = a + t * (b - a)
                    px, py = int(min(x, cfg.size - 1)), int(min(y, cfg.size - 1))
                    assert density[py, px] > 0.0

    def test_rooms_pairwise_disjoint(self):
        cfg = SyntheticConfig(min_rooms=3, max_rooms=4)
        for seed in range(5):
            _, plan = generate_synthetic(seed, cfg)
            polys = [c / cfg.size for c, _ in plan.rooms]
            for i in range(len(polys)):
                for j in range(i + 1, len(polys)):
                    assert polygon_iou(polys[i], polys[j], cfg.size) == 0.0

    def test_rooms_ccw_and_in_bounds(self):
        cfg = SyntheticConfig(min_rooms=1, max_rooms=4, with_lines=True)
        for seed in range(8):
            _, plan = generate_synthetic(seed, cfg)
            for corners, t in plan.rooms:
                assert signed_area(corners) > 0
                assert corners.min() >= 0 and corners.max() <= cfg.size
                assert 0 <= t < 16
                assert 4 <= len(corners) <= 8

    def test_vertex_range_respected(self):
        cfg = SyntheticConfig(min_vertices=4, max_vertices=6, min_rooms=2, max_rooms=4)
        for seed in range(6):
            _, plan = generate_synthetic(seed, cfg)
            for corners, _ in plan.rooms:
                assert 4 <= len(corners) <= 6

    def test_cloud_matches_density(self):
        cfg = SyntheticConfig()
        cloud, density, _ = generate_synthetic_cloud(11, cfg)
        redo = project_to_density(cloud, (0, 0, cfg.size, cfg.size), (cfg.size, cfg.size))
        np.testing.assert_array_equal(density, redo)


class TestAnnotationIO:
    def test_round_trip(self, tmp_path):
        plan = make_plan()
        path = tmp_path / "scene.json"
        save_annotations(plan, path)
        back = load_annotations(path)
        assert back.width == plan.width and back.height == plan.height
        for (c1, t1), (c2, t2) in zip(plan.rooms, back.rooms):
            np.testing.assert_array_equal(c1, c2)
            assert t1 == t2
        np.testing.assert_array_equal(back.doors[0], plan.doors[0])
        np.testing.assert_array_equal(back.windows[0], plan.windows[0])

    def test_cw_room_corrected_with_warning(self, tmp_path):
        plan = make_plan()
        plan.rooms[0] = (plan.rooms[0][0][::-1].copy(), 2)
        path = tmp_path / "cw.json"
        save_annotations(plan, path)
        with pytest.warns(UserWarning, match="clockwise"):
            back = load_annotations(path)
        assert signed_area(back.rooms[0][0]) > 0

    def test_cw_room_rejected_in_strict_mode(self, tmp_path):
        plan = make_plan()
        plan.rooms[0] = (plan.rooms[0][0][::-1].copy(), 2)
        path = tmp_path / "cw.json"
        save_annotations(plan, path)
        with pytest.raises(AnnotationError, match="clockwise"):
            load_annotations(path, fix_orientation=False)

    def test_missing_rooms_key(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"width": 256, "height": 256}))
        with pytest.raises(AnnotationError, match="rooms"):
            load_annotations(path)

    def test_bad_corner_arity(self, tmp_path):
        path = tmp_path / "bad.json"
        doc = {"width": 256, "height": 256, "rooms": [{"corners": [[1, 2, 3], [0, 0], [1, 1]]}]}
        path.write_text(json.dumps(doc))
        with pytest.raises(AnnotationError, match=r"rooms\[0\]"):
            load_annotations(path)

    def test_duplicate_consecutive_vertices_rejected(self, tmp_path):
        path = tmp_path / "dup.json"
        doc = {
            "width": 64,
            "height": 64,
            "rooms": [{"corners": [[0, 0], [10, 0], [10, 0], [10, 10], [0, 10]], "type": 0}],
        }
        path.write_text(json.dumps(doc))
        with pytest.raises(AnnotationError, match="duplicated"):
            load_annotations(path)


class TestDensityIO:
    def test_png_round_trip_quantized(self, tmp_path):
        rng = np.random.default_rng(0)
        d = rng.random((64, 64))
        d /= d.max()
        path = tmp_path / "d.png"
        save_density(d, path)
        back = load_density(path)
        assert back.shape == d.shape
        assert np.abs(back - d).max() <= 0.5 / 65535 + 1e-12

    def test_npy_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(1)
        d = rng.random((32, 32))
        path = tmp_path / "d.npy"
        save_density(d, path)
        np.testing.assert_array_equal(load_density(path), d)
