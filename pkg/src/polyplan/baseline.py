"""Learning-free reconstruction: occupancy map, morphological closing,
boundary vectorization, polyline simplification.

Vectorization follows the cracks between foreground and background cells, so
each component's polygon covers it exactly before simplification; components
are 4-connected and only outer boundaries are kept (holes are ignored).
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .data import Floorplan
from .geometry import douglas_peucker, ensure_ccw, signed_area


def occupancy_from_cloud(points, bounds, size) -> np.ndarray:
    """Binary top-down occupancy: 1 wherever at least one point projects."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return np.zeros(size, dtype=np.uint8)
    xmin, ymin, xmax, ymax = bounds
    h, w = size
    counts, _, _ = np.histogram2d(
        pts[:, 1], pts[:, 0], bins=(h, w), range=((ymin, ymax), (xmin, xmax))
    )
    return (counts > 0).astype(np.uint8)


def morph_close(grid: np.ndarray, kernel: int = 3) -> np.ndarray:
    """Binary closing (dilation then erosion) with a square structuring element."""
    if kernel < 1:
        raise ValueError(f"kernel must be >= 1, got {kernel}")
    structure = np.ones((kernel, kernel), dtype=bool)
    closed = ndimage.binary_erosion(
        ndimage.binary_dilation(grid.astype(bool), structure), structure
    )
    return closed.astype(np.uint8)


def _component_edges(mask: np.ndarray):
    """Directed unit edges of the crack boundary, oriented so the outer cycle
    has positive shoelace area. Keyed by start vertex."""
    rows, cols = np.nonzero(mask)
    edges = {}

    def add(a, b):
        edges.setdefault(a, []).append(b)

    h, w = mask.shape
    for r, c in zip(rows.tolist(), cols.tolist()):
        if r == 0 or not mask[r - 1, c]:  # top side
            add((c, r), (c + 1, r))
        if c == w - 1 or not mask[r, c + 1]:  # right side
            add((c + 1, r), (c + 1, r + 1))
        if r == h - 1 or not mask[r + 1, c]:  # bottom side
            add((c + 1, r + 1), (c, r + 1))
        if c == 0 or not mask[r, c - 1]:  # left side
            add((c, r + 1), (c, r))
    return edges


def _pick_next(edges, point, incoming):
    """Choose the outgoing edge at a saddle vertex. Preferring the right turn
    treats diagonally-touching pixels as connected (8-connectivity), so a
    pinched ring still separates into an outer cycle and a hole cycle."""
    candidates = edges.get(point)
    if not candidates:
        return None
    if len(candidates) == 1:
        return candidates.pop()
    dx, dy = incoming
    for turn in ((dy, -dx), (dx, dy), (-dy, dx)):
        target = (point[0] + turn[0], point[1] + turn[1])
        if target in candidates:
            candidates.remove(target)
            return target
    return candidates.pop()


def _trace_cycles(edges):
    cycles = []
    while edges:
        start = min(edges)
        current = start
        nxt = edges[start].pop()
        if not edges[start]:
            del edges[start]
        cycle = [current]
        incoming = (nxt[0] - current[0], nxt[1] - current[1])
        current = nxt
        while current != start:
            cycle.append(current)
            nxt = _pick_next(edges, current, incoming)
            if nxt is None:
                break  # open chain cannot happen on a well-formed mask
            if not edges.get(current):
                edges.pop(current, None)
            incoming = (nxt[0] - current[0], nxt[1] - current[1])
            current = nxt
        cycles.append(cycle)
    return cycles


def _merge_collinear(cycle):
    out = []
    n = len(cycle)
    for i, p in enumerate(cycle):
        prev_p = cycle[(i - 1) % n]
        next_p = cycle[(i + 1) % n]
        d1 = (p[0] - prev_p[0], p[1] - prev_p[1])
        d2 = (next_p[0] - p[0], next_p[1] - p[1])
        if d1[0] * d2[1] - d1[1] * d2[0] != 0:
            out.append(p)
    return out


def vectorize(grid: np.ndarray) -> list[np.ndarray]:
    """One CCW polygon per 8-connected foreground component (outer boundary).

    Vertices lie on the pixel-corner lattice; collinear runs are merged, so a
    solid rectangle comes back with exactly 4 corners.
    """
    grid = np.asarray(grid).astype(bool)
    if not grid.any():
        return []
    labels, count = ndimage.label(grid, structure=np.ones((3, 3), dtype=bool))
    polygons = []
    for idx in range(1, count + 1):
        mask = labels == idx
        cycles = _trace_cycles(_component_edges(mask))
        best, best_area = None, 0.0
        for cycle in cycles:
            if len(cycle) < 4:
                continue
            merged = _merge_collinear(cycle)
            if len(merged) < 3:
                continue
            poly = np.array(merged, dtype=np.float64)
            area = signed_area(poly)
            if area > best_area:  # holes trace negative and are dropped
                best, best_area = poly, area
        if best is not None:
            polygons.append(ensure_ccw(best))
    return polygons


def run_baseline(
    density_or_cloud,
    epsilon: float = 3.0,
    close_kernel: int = 3,
    size: int = 256,
    bounds=None,
    min_area: float = 25.0,
) -> Floorplan:
    """Occupancy -> closing -> vectorize -> simplify. Rooms only, no semantics.

    Accepts either an H x W density map or an (N, 3) point cloud with
    `bounds`; `min_area` (px^2) discards speck components.
    """
    arr = np.asarray(density_or_cloud)
    if arr.ndim == 2 and arr.shape[1] == 3 and arr.shape[0] != arr.shape[1]:
        occupancy = occupancy_from_cloud(arr, bounds or (0, 0, size, size), (size, size))
        h = w = size
    else:
        occupancy = (arr > 0).astype(np.uint8)
        h, w = arr.shape
    closed = morph_close(occupancy, close_kernel)
    plan = Floorplan(width=w, height=h)
    for poly in vectorize(closed):
        simplified = douglas_peucker(poly, epsilon, closed=True)
        if simplified.shape[0] < 3:
            continue
        area = signed_area(simplified)
        if abs(area) < min_area:
            continue
        plan.rooms.append((ensure_ccw(simplified), 0))
    return plan
