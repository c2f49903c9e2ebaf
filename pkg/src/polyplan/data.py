"""Point-cloud projection, floorplan annotations, target padding, synthetic scenes.

Floorplans are stored in pixel coordinates (origin top-left, y down) and
normalized to [0,1] only at the model boundary. Density maps are H×W float
arrays in [0,1], normalized by their maximum bin count.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import jsonschema
import numpy as np
from PIL import Image

from .geometry import _point_in_polygon, ensure_ccw, signed_area

# Semantic label layout: room types occupy [0, num_room_types); joint models
# append door and window labels after them. The "empty" class used by the
# classification head is always the last logit and never stored in a Floorplan.
NUM_ROOM_TYPES = 16
DOOR_OFFSET = 0
WINDOW_OFFSET = 1


class AnnotationError(ValueError):
    """Invalid floorplan annotation file."""


class SyntheticGenerationError(RuntimeError):
    """Layout constraints could not be satisfied within the retry budget."""


@dataclass
class Floorplan:
    """A set of room polygons plus optional door/window line segments.

    rooms: list of (corners, room_type) where corners is a CCW (N,2) float
    array in pixel coordinates. doors/windows: (2,2) endpoint arrays.
    """

    width: int
    height: int
    rooms: list = field(default_factory=list)
    doors: list = field(default_factory=list)
    windows: list = field(default_factory=list)

    def room_polygons(self):
        return [corners for corners, _ in self.rooms]

    def room_types(self):
        return [t for _, t in self.rooms]

    def normalized(self) -> "Floorplan":
        """Coordinates scaled into [0,1]; width/height become 1."""
        s = np.array([self.width, self.height], dtype=np.float64)
        return Floorplan(
            width=1,
            height=1,
            rooms=[(np.asarray(c, dtype=np.float64) / s, t) for c, t in self.rooms],
            doors=[np.asarray(d, dtype=np.float64) / s for d in self.doors],
            windows=[np.asarray(w, dtype=np.float64) / s for w in self.windows],
        )

    def scaled(self, width: int, height: int) -> "Floorplan":
        """Inverse of `normalized`: map [0,1] coordinates to pixel space."""
        s = np.array([width, height], dtype=np.float64)
        return Floorplan(
            width=width,
            height=height,
            rooms=[(np.asarray(c, dtype=np.float64) * s, t) for c, t in self.rooms],
            doors=[np.asarray(d, dtype=np.float64) * s for d in self.doors],
            windows=[np.asarray(w, dtype=np.float64) * s for w in self.windows],
        )


@dataclass
class PaddedTargets:
    """Fixed-shape training targets: M polygon slots of N vertex slots each.

    coords: (M, N, 2) in [0,1], sentinel (0,0) beyond each polygon's length.
    labels: (M, N) vertex-validity in {0,1}. lengths: true vertex count per
    real polygon. types: (M,) semantic label per slot, -1 for padding slots.
    """

    coords: np.ndarray
    labels: np.ndarray
    lengths: list
    gt_count: int
    types: np.ndarray


def project_to_density(points, bounds, size) -> np.ndarray:
    """Project a 3D point cloud along the gravity (z) axis into a density map.

    bounds: (xmin, ymin, xmax, ymax); size: (H, W). Each pixel counts the
    points landing in it; the grid is divided by the maximum count so values
    lie in [0,1] with max exactly 1 for a non-empty in-bounds cloud.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        raise ValueError("cannot project an empty point cloud")
    xmin, ymin, xmax, ymax = bounds
    if not (xmax > xmin and ymax > ymin):
        raise ValueError(f"bounds must have positive extent, got {bounds}")
    h, w = size
    counts, _, _ = np.histogram2d(
        pts[:, 1], pts[:, 0], bins=(h, w), range=((ymin, ymax), (xmin, xmax))
    )
    peak = counts.max()
    if peak == 0:
        return counts
    return counts / peak


def pad_targets(plan: Floorplan, max_polygons: int, max_vertices: int, include_lines: bool = False) -> PaddedTargets:
    """Pad a normalized floorplan to fixed (M, N) target arrays.

    The plan must already be normalized to [0,1] with CCW rooms. With
    include_lines, doors and windows are appended as 2-vertex entities with
    semantic labels NUM_ROOM_TYPES + DOOR_OFFSET / WINDOW_OFFSET.
    """
    entities = [(np.asarray(c, dtype=np.float64), int(t)) for c, t in plan.rooms]
    if include_lines:
        entities += [(np.asarray(d, dtype=np.float64), NUM_ROOM_TYPES + DOOR_OFFSET) for d in plan.doors]
        entities += [(np.asarray(w, dtype=np.float64), NUM_ROOM_TYPES + WINDOW_OFFSET) for w in plan.windows]
    gt_count = len(entities)
    lengths = [e.shape[0] for e, _ in entities]
    if gt_count > max_polygons:
        raise ValueError(f"scene has {gt_count} polygons but M={max_polygons}")
    if lengths and max(lengths) > max_vertices:
        raise ValueError(f"scene has a {max(lengths)}-vertex polygon but N={max_vertices}")
    coords = np.zeros((max_polygons, max_vertices, 2), dtype=np.float64)
    labels = np.zeros((max_polygons, max_vertices), dtype=np.float64)
    types = np.full(max_polygons, -1, dtype=np.int64)
    for m, (pts, t) in enumerate(entities):
        if np.any(pts < 0) or np.any(pts > 1):
            raise ValueError(f"polygon {m} is not normalized to [0,1]")
        coords[m, : pts.shape[0]] = pts
        labels[m, : pts.shape[0]] = 1.0
        types[m] = t
    return PaddedTargets(coords=coords, labels=labels, lengths=lengths, gt_count=gt_count, types=types)


def unpad_targets(padded: PaddedTargets) -> Floorplan:
    """Inverse of `pad_targets`: recover the normalized floorplan."""
    plan = Floorplan(width=1, height=1)
    for m in range(padded.gt_count):
        n = padded.lengths[m]
        pts = padded.coords[m, :n].copy()
        t = int(padded.types[m])
        if t == NUM_ROOM_TYPES + DOOR_OFFSET:
            plan.doors.append(pts)
        elif t == NUM_ROOM_TYPES + WINDOW_OFFSET:
            plan.windows.append(pts)
        else:
            plan.rooms.append((pts, t))
    return plan


# ---------------------------------------------------------------------------
# Synthetic floorplan generation
# ---------------------------------------------------------------------------


@dataclass
class SyntheticConfig:
    size: int = 256
    min_rooms: int = 1
    max_rooms: int = 4
    min_vertices: int = 4
    max_vertices: int = 8
    non_manhattan_prob: float = 0.2  # chamfered (diagonal) corner
    l_shape_prob: float = 0.3  # rectilinear notch (6 or 8 vertices)
    wall_thickness: float = 3.0
    points_per_pixel: float = 8.0
    noise: float = 0.6  # positional sigma, pixels
    dropout: float = 0.0  # probability a wall span is missing
    interior_fill: float = 0.04  # interior points per wall point
    with_lines: bool = False  # carve doors/windows and annotate them
    margin: int = 12
    min_room_extent: int = 36
    layout_retries: int = 20


def _bsp_cells(rng, region, count, min_extent, retries):
    """Split `region` (x0, y0, x1, y1) into `count` axis-aligned cells."""
    for _ in range(retries):
        cells = [region]
        ok = True
        while len(cells) < count:
            # split the largest cell
            areas = [(c[2] - c[0]) * (c[3] - c[1]) for c in cells]
            i = int(np.argmax(areas))
            x0, y0, x1, y1 = cells.pop(i)
            w, h = x1 - x0, y1 - y0
            vertical = w > h if abs(w - h) > 1 else bool(rng.integers(2))
            if vertical:
                if w < 2 * min_extent:
                    ok = False
                    break
                cut = x0 + w * rng.uniform(0.38, 0.62)
                cells += [(x0, y0, cut, y1), (cut, y0, x1, y1)]
            else:
                if h < 2 * min_extent:
                    ok = False
                    break
                cut = y0 + h * rng.uniform(0.38, 0.62)
                cells += [(x0, y0, x1, cut), (x0, cut, x1, y1)]
        if ok and all(c[2] - c[0] >= min_extent and c[3] - c[1] >= min_extent for c in cells):
            return cells
    raise SyntheticGenerationError(
        f"could not split region into {count} cells of extent >= {min_extent}"
    )


def _unit_shape(rng, shape: str) -> np.ndarray:
    """Room outline in the unit square; corners cut relative to corner (0,0)."""
    if shape == "rect":
        return np.array([(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)])
    cw = rng.uniform(0.25, 0.45)
    ch = rng.uniform(0.25, 0.45)
    if shape == "chamfer":
        return np.array([(cw, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.0, ch)])
    if shape == "notch":
        return np.array(
            [(cw, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.0, ch), (cw, ch)]
        )
    # double notch: opposite corners carved
    dw = rng.uniform(0.2, 0.35)
    dh = rng.uniform(0.2, 0.35)
    return np.array(
        [
            (cw, 0.0), (1.0, 0.0), (1.0, 1.0 - dh), (1.0 - dw, 1.0 - dh),
            (1.0 - dw, 1.0), (0.0, 1.0), (0.0, ch), (cw, ch),
        ]
    )


def _room_shape(rng, rect, cfg: SyntheticConfig):
    """Turn a cell rectangle into a room polygon (CCW, pixel coords)."""
    x0, y0, x1, y1 = [float(round(v)) for v in rect]
    w, h = x1 - x0, y1 - y0
    choices = []
    if cfg.min_vertices <= 4:
        choices.append(("rect", 1.0 - cfg.l_shape_prob - cfg.non_manhattan_prob))
    if cfg.min_vertices <= 5 <= cfg.max_vertices:
        choices.append(("chamfer", cfg.non_manhattan_prob))
    if cfg.min_vertices <= 6 <= cfg.max_vertices:
        choices.append(("notch", cfg.l_shape_prob * (0.7 if cfg.max_vertices >= 8 else 1.0)))
    if cfg.max_vertices >= 8 and cfg.min_vertices <= 8:
        choices.append(("double_notch", cfg.l_shape_prob * 0.3))
    names = [n for n, _ in choices]
    weights = np.array([max(wgt, 0.0) for _, wgt in choices])
    if weights.sum() <= 0:
        names, weights = ["rect"], np.array([1.0])
    shape = str(rng.choice(names, p=weights / weights.sum()))
    unit = _unit_shape(rng, shape)
    # rotate the carved corner to a random one of the four corners
    for _ in range(int(rng.integers(4))):
        unit = np.stack([1.0 - unit[:, 1], unit[:, 0]], axis=1)
    # half-integer coordinates center the walls on pixels when rendered
    poly = np.round(unit * np.array([w, h]) + np.array([x0, y0])) + 0.5
    return ensure_ccw(poly)


def _edge_spans(poly):
    """Consecutive vertex pairs of a closed polygon."""
    return list(zip(poly, np.roll(poly, -1, axis=0)))


def _carve_segment(rng, a, b, lo_px, hi_px):
    """A random subsegment of edge (a, b) between lo_px and hi_px long."""
    length = float(np.hypot(*(b - a)))
    seg = min(hi_px, max(lo_px, length * 0.25))
    if length < seg + 4:
        return None
    t0 = rng.uniform(2.0 / length, 1.0 - (seg + 2.0) / length)
    t1 = t0 + seg / length
    return np.array([a + t0 * (b - a), a + t1 * (b - a)])


def generate_synthetic(seed: int, config: SyntheticConfig | None = None):
    """Deterministic synthetic scene: returns (density_map, floorplan)."""
    _, density, plan = generate_synthetic_cloud(seed, config)
    return density, plan


def generate_synthetic_cloud(seed: int, config: SyntheticConfig | None = None):
    """Like `generate_synthetic` but also returns the sampled 3D point cloud."""
    cfg = config or SyntheticConfig()
    rng = np.random.default_rng(seed)
    size = cfg.size
    k = int(rng.integers(cfg.min_rooms, cfg.max_rooms + 1))
    region = (cfg.margin, cfg.margin, size - cfg.margin, size - cfg.margin)
    cells = _bsp_cells(rng, region, k, cfg.min_room_extent + cfg.wall_thickness, cfg.layout_retries)
    inset = cfg.wall_thickness / 2.0
    plan = Floorplan(width=size, height=size)
    for cell in cells:
        rect = (cell[0] + inset, cell[1] + inset, cell[2] - inset, cell[3] - inset)
        poly = _room_shape(rng, rect, cfg)
        area = abs(signed_area(poly))
        room_type = min(NUM_ROOM_TYPES - 1, int(area / (size * size) * 60))
        plan.rooms.append((poly, room_type))

    # openings: (edge span, density multiplier); doors are fully carved out,
    # windows keep a faint return
    openings = []
    if cfg.with_lines:
        for poly, _ in plan.rooms:
            edges = _edge_spans(poly)
            order = rng.permutation(len(edges))
            door = _carve_segment(rng, *edges[order[0]], lo_px=10, hi_px=18)
            if door is not None:
                plan.doors.append(door)
                openings.append((door, 0.0))
            if len(edges) > 1 and rng.random() < 0.6:
                window = _carve_segment(rng, *edges[order[1]], lo_px=8, hi_px=16)
                if window is not None:
                    plan.windows.append(window)
                    openings.append((window, 0.3))

    points = []
    for poly, _ in plan.rooms:
        for a, b in _edge_spans(poly):
            length = float(np.hypot(*(b - a)))
            n_spans = max(1, int(round(length / 8.0)))
            for s in range(n_spans):
                if cfg.dropout > 0 and rng.random() < cfg.dropout:
                    continue
                t0, t1 = s / n_spans, (s + 1) / n_spans
                count = max(1, int(round(length * (t1 - t0) * cfg.points_per_pixel)))
                t = rng.uniform(t0, t1, size=count)
                pts = a[None, :] + t[:, None] * (b - a)[None, :]
                if cfg.noise > 0:
                    pts = pts + rng.normal(scale=cfg.noise, size=pts.shape)
                keep = np.ones(len(pts), dtype=bool)
                for span, mult in openings:
                    d = span[1] - span[0]
                    denom = float(d @ d)
                    if denom == 0:
                        continue
                    proj = ((pts - span[0]) @ d) / denom
                    dist = np.abs((pts[:, 0] - span[0][0]) * d[1] - (pts[:, 1] - span[0][1]) * d[0]) / np.sqrt(denom)
                    inside = (proj >= 0) & (proj <= 1) & (dist < cfg.wall_thickness + 2 * cfg.noise + 1)
                    if mult == 0.0:
                        keep &= ~inside
                    else:
                        keep &= ~inside | (rng.random(len(pts)) < mult)
                points.append(pts[keep])
        if cfg.interior_fill > 0:
            xs, ys = poly[:, 0], poly[:, 1]
            n_fill = int(cfg.interior_fill * abs(signed_area(poly)) / 8.0)
            if n_fill > 0:
                cand = rng.uniform(
                    [xs.min(), ys.min()], [xs.max(), ys.max()], size=(n_fill * 2, 2)
                )
                inside = _point_in_polygon(cand[:, 0], cand[:, 1], poly)
                points.append(cand[inside][:n_fill])

    xy = np.concatenate([p for p in points if len(p)], axis=0)
    z = rng.uniform(0.0, 2.5, size=(xy.shape[0], 1))
    cloud = np.concatenate([xy, z], axis=1)
    density = project_to_density(cloud, (0, 0, size, size), (size, size))
    return cloud, density, plan


# ---------------------------------------------------------------------------
# Annotation and density-map I/O
# ---------------------------------------------------------------------------

ANNOTATION_SCHEMA = {
    "type": "object",
    "required": ["width", "height", "rooms"],
    "properties": {
        "width": {"type": "integer", "minimum": 1},
        "height": {"type": "integer", "minimum": 1},
        "rooms": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["corners"],
                "properties": {
                    "corners": {
                        "type": "array",
                        "minItems": 3,
                        "items": {
                            "type": "array",
                            "minItems": 2,
                            "maxItems": 2,
                            "items": {"type": "number"},
                        },
                    },
                    "type": {"type": "integer", "minimum": 0},
                },
            },
        },
        "doors": {"$ref": "#/$defs/lines"},
        "windows": {"$ref": "#/$defs/lines"},
    },
    "$defs": {
        "lines": {
            "type": "array",
            "items": {
                "type": "array",
                "minItems": 2,
                "maxItems": 2,
                "items": {
                    "type": "array",
                    "minItems": 2,
                    "maxItems": 2,
                    "items": {"type": "number"},
                },
            },
        }
    },
}


def load_annotations(path, fix_orientation: bool = True) -> Floorplan:
    """Load a floorplan annotation file, validating against the JSON schema.

    CW rooms are auto-corrected to CCW with a warning (set fix_orientation
    False to reject them instead). Degenerate rooms are always rejected.
    """
    with open(path) as f:
        raw = json.load(f)
    try:
        jsonschema.validate(raw, ANNOTATION_SCHEMA)
    except jsonschema.ValidationError as e:
        raise AnnotationError(f"{e.json_path}: {e.message}") from e
    plan = Floorplan(width=raw["width"], height=raw["height"])
    for i, room in enumerate(raw["rooms"]):
        pts = np.asarray(room["corners"], dtype=np.float64)
        if np.any(np.all(pts == np.roll(pts, -1, axis=0), axis=1)):
            raise AnnotationError(f"$.rooms[{i}].corners: duplicated consecutive vertices")
        try:
            area = signed_area(pts)
        except ValueError as e:
            raise AnnotationError(f"$.rooms[{i}].corners: {e}") from e
        if area == 0.0:
            raise AnnotationError(f"$.rooms[{i}].corners: degenerate polygon")
        if area < 0:
            if not fix_orientation:
                raise AnnotationError(f"$.rooms[{i}].corners: clockwise orientation")
            warnings.warn(f"room {i} in {path} is clockwise; reversing to CCW")
            pts = ensure_ccw(pts)
        plan.rooms.append((pts, int(room.get("type", 0))))
    for key, target in (("doors", plan.doors), ("windows", plan.windows)):
        for line in raw.get(key, []):
            target.append(np.asarray(line, dtype=np.float64))
    return plan


def save_annotations(plan: Floorplan, path) -> None:
    doc = {
        "width": int(plan.width),
        "height": int(plan.height),
        "rooms": [
            {"corners": np.asarray(c, dtype=np.float64).tolist(), "type": int(t)}
            for c, t in plan.rooms
        ],
        "doors": [np.asarray(d, dtype=np.float64).tolist() for d in plan.doors],
        "windows": [np.asarray(w, dtype=np.float64).tolist() for w in plan.windows],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)


def save_density(density: np.ndarray, path) -> None:
    """Write a density map; .png gets 16-bit grayscale, .npy raw floats."""
    path = str(path)
    if path.endswith(".npy"):
        np.save(path, np.asarray(density, dtype=np.float64))
        return
    values = np.round(np.clip(density, 0.0, 1.0) * 65535).astype(np.uint16)
    Image.fromarray(values).save(path)


def load_density(path) -> np.ndarray:
    path = str(path)
    if path.endswith(".npy"):
        return np.load(path)
    img = Image.open(path)
    return np.asarray(img, dtype=np.float64) / 65535.0
