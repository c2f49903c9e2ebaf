"""Pure 2D polygon and polyline primitives.

Axis convention used throughout the package: image coordinates, origin at the
top-left corner, x to the right, y increasing *downward*. A polygon is called
CCW iff its shoelace sum is positive, i.e. counter-clockwise under the y-up
reading of the same coordinates; on screen (y down) such a polygon winds
clockwise. The name follows the mathematical convention, the frame is the
image frame, and both are fixed package-wide. All functions are pure and
thread-safe.

Polygons are arrays of shape (N, 2) holding vertex coordinates; closed
polygons are stored without repeating the first vertex. Functions accept
numpy arrays and, where differentiability matters (`cyclic_coord_distance`,
`rasterize_soft`), torch tensors as well.
"""

from __future__ import annotations

import numpy as np
import torch


class DegeneratePolygonError(ValueError):
    """Raised when an operation requires a polygon with non-zero area."""


def signed_area(poly) -> float:
    """Shoelace area of a closed polygon; positive iff CCW in the y-down frame.

    Collinear/degenerate input yields 0.0; the caller decides how to react.
    """
    pts = np.asarray(poly, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 3 or pts.shape[1] != 2:
        raise ValueError(f"closed polygon needs shape (N>=3, 2), got {pts.shape}")
    x, y = pts[:, 0], pts[:, 1]
    x2, y2 = np.roll(x, -1), np.roll(y, -1)
    return float(0.5 * np.sum(x * y2 - x2 * y))


def ensure_ccw(poly):
    """Return `poly` oriented CCW (y-down frame); reverses CW input.

    Idempotent and multiset-preserving: the result is either the input or its
    reversal starting from the same first vertex.
    """
    pts = np.asarray(poly, dtype=np.float64)
    area = signed_area(pts)
    if area == 0.0:
        raise DegeneratePolygonError("degenerate polygon: zero signed area")
    if area > 0:
        return pts.copy()
    # Reverse edge order but keep the starting vertex in place.
    return np.concatenate([pts[:1], pts[:0:-1]], axis=0)


def cyclic_coord_distance(gt, pred):
    """Minimum over starting-vertex rotations of the summed per-vertex L1 gap.

    `gt` and `pred` are equal-length (N, 2) sequences. Orientation is taken
    as fixed (GT must already be CCW); only the N rotations of `gt`'s start
    index are searched. Works on numpy arrays (returns float) and on torch
    tensors (returns a 0-dim tensor, differentiable through the selected
    rotation).
    """
    dist, _ = cyclic_align(gt, pred)
    return dist


def cyclic_align(gt, pred):
    """Like `cyclic_coord_distance` but also returns the minimizing rotation.

    Rotation r means gt is read starting at index r: gt[r], gt[r+1], ...
    Ties break toward the lowest rotation index.
    """
    n = gt.shape[0]
    if pred.shape[0] != n:
        raise ValueError(f"length mismatch: gt has {n} vertices, pred has {pred.shape[0]}")
    best_val = None
    best_rot = 0
    best_dist = None
    for r in range(n):
        idx = list(range(r, n)) + list(range(0, r))
        d = abs(gt[idx] - pred).sum()
        v = float(d.detach()) if isinstance(d, torch.Tensor) else float(d)
        if best_val is None or v < best_val:
            best_val = v
            best_rot = r
            best_dist = d
    return best_dist, best_rot


def _point_in_polygon(px, py, poly):
    """Vectorized even-odd (ray crossing) inside test.

    px, py: arrays of query coordinates. Returns a boolean array. Points
    exactly on an edge are resolved by the half-open crossing rule, which is
    deterministic also for self-intersecting polygons.
    """
    inside = np.zeros(px.shape, dtype=bool)
    n = poly.shape[0]
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        crosses = (y1 > py) != (y2 > py)
        if not crosses.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (px < xint)
    return inside


def _cell_centers(resolution: int) -> np.ndarray:
    """Centers of an R×R grid over the unit square, row-major (y, x)."""
    step = 1.0 / resolution
    c = (np.arange(resolution) + 0.5) * step
    yy, xx = np.meshgrid(c, c, indexing="ij")
    return xx, yy


def rasterize_hard(poly, resolution: int) -> np.ndarray:
    """Binary occupancy mask: cell = 1 iff its center is inside the polygon.

    The polygon lives in normalized [0,1]² coordinates; the mask is R×R with
    mask[row, col] covering y ∈ [row/R, (row+1)/R), x likewise. Degenerate
    input produces an all-zero mask.
    """
    pts = np.asarray(poly, dtype=np.float64)
    mask = np.zeros((resolution, resolution), dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 3:
        return mask
    xx, yy = _cell_centers(resolution)
    mask[_point_in_polygon(xx, yy, pts)] = 1.0
    return mask


def polygon_iou(a, b, resolution: int = 256) -> float:
    """Raster IoU of two closed polygons at the given resolution.

    Symmetric; identical polygons give 1.0, disjoint ones 0.0. Degenerate
    polygons rasterize empty, giving IoU 0.
    """
    ma = rasterize_hard(a, resolution)
    mb = rasterize_hard(b, resolution)
    inter = float(np.sum(ma * mb))
    union = float(np.sum(np.maximum(ma, mb)))
    if union == 0.0:
        return 0.0
    return inter / union


def _segment_distances(points: torch.Tensor, poly: torch.Tensor) -> torch.Tensor:
    """Distance from each point to the closest polygon edge (torch, batched).

    points: (P, 2), poly: (N, 2). Returns (P,).
    """
    a = poly
    b = torch.roll(poly, shifts=-1, dims=0)
    ab = b - a  # (N, 2)
    ab_sq = (ab * ab).sum(dim=1).clamp_min(1e-30)  # (N,)
    ap = points[:, None, :] - a[None, :, :]  # (P, N, 2)
    t = (ap * ab[None, :, :]).sum(dim=2) / ab_sq[None, :]
    t = t.clamp(0.0, 1.0)
    proj = a[None, :, :] + t[:, :, None] * ab[None, :, :]
    d = torch.linalg.norm(points[:, None, :] - proj, dim=2)  # (P, N)
    return d.min(dim=1).values


def rasterize_soft(poly, resolution: int, temperature: float = 0.03) -> torch.Tensor:
    """Differentiable occupancy mask via a signed-distance sigmoid.

    Each cell takes the value sigmoid(sd / temperature) where sd is the
    distance from the cell center to the polygon boundary measured in cell
    widths, positive inside (even-odd rule) and negative outside. Measuring
    in cells keeps the transition band the same number of pixels wide at
    every resolution; the default temperature confines it to a fraction of
    a cell. The inside/outside sign is treated as a constant in autograd;
    gradients flow through the distance term, so the mask is differentiable
    w.r.t. every vertex coordinate. As the temperature goes to 0 the mask
    converges to `rasterize_hard` away from the boundary.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    if not isinstance(poly, torch.Tensor):
        poly = torch.as_tensor(np.asarray(poly, dtype=np.float64))
    if poly.ndim != 2 or poly.shape[0] < 3:
        return torch.zeros((resolution, resolution), dtype=poly.dtype)
    xx, yy = _cell_centers(resolution)
    centers = torch.as_tensor(
        np.stack([xx.ravel(), yy.ravel()], axis=1), dtype=poly.dtype, device=poly.device
    )
    dist = _segment_distances(centers, poly) * resolution
    with torch.no_grad():
        inside = _point_in_polygon(xx.ravel(), yy.ravel(), poly.detach().cpu().numpy())
    sign = torch.as_tensor(np.where(inside, 1.0, -1.0), dtype=poly.dtype, device=poly.device)
    values = torch.sigmoid(sign * dist / temperature)
    return values.reshape(resolution, resolution)


def _perpendicular_deviation(points: np.ndarray, start: np.ndarray, end: np.ndarray) -> np.ndarray:
    """Distance from each point to the line through start-end (or to start when
    the segment is degenerate)."""
    d = end - start
    norm = np.hypot(d[0], d[1])
    if norm == 0.0:
        return np.hypot(points[:, 0] - start[0], points[:, 1] - start[1])
    return np.abs((points[:, 0] - start[0]) * d[1] - (points[:, 1] - start[1]) * d[0]) / norm


def _douglas_peucker_open(points: np.ndarray, epsilon: float) -> np.ndarray:
    keep = np.zeros(points.shape[0], dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, points.shape[0] - 1)]
    while stack:
        lo, hi = stack.pop()
        if hi - lo < 2:
            continue
        dev = _perpendicular_deviation(points[lo + 1 : hi], points[lo], points[hi])
        i = int(np.argmax(dev))
        if dev[i] > epsilon:
            split = lo + 1 + i
            keep[split] = True
            stack.append((lo, split))
            stack.append((split, hi))
    return points[keep]


def douglas_peucker(line, epsilon: float, closed: bool = False) -> np.ndarray:
    """Polyline simplification keeping a subsequence of the input vertices.

    Every removed vertex lies within `epsilon` of the simplified chain's
    corresponding segment. With epsilon = 0 the input is returned unchanged.
    Closed polygons are handled by splitting at the two mutually farthest
    vertices and simplifying the halves independently.
    """
    if epsilon < 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    pts = np.asarray(line, dtype=np.float64)
    if epsilon == 0 or pts.shape[0] <= 2:
        return pts.copy()
    if not closed:
        return _douglas_peucker_open(pts, epsilon)
    # Closed: anchor at the two mutually farthest vertices so neither can be
    # simplified away, then treat the two arcs as open polylines.
    diff = pts[:, None, :] - pts[None, :, :]
    d2 = (diff**2).sum(axis=2)
    i, j = np.unravel_index(int(np.argmax(d2)), d2.shape)
    i, j = min(i, j), max(i, j)
    first = _douglas_peucker_open(pts[i : j + 1], epsilon)
    wrapped = np.concatenate([pts[j:], pts[: i + 1]], axis=0)
    second = _douglas_peucker_open(wrapped, epsilon)
    return np.concatenate([first[:-1], second[:-1]], axis=0)
