"""Reconstruction metrics: room / corner / angle P, R, F1 plus semantic and
door/window scores.

Room matching loops over groundtruth rooms in order and greedily takes the
unused prediction with the highest raster IoU (threshold theta_room).
Corners are matched globally, greedy nearest within theta_c pixels; an angle
counts when its corner matched and the interior angles differ by at most
theta_a degrees. All thresholds are carried into every report so results are
self-describing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import __version__
from .data import Floorplan
from .geometry import polygon_iou


@dataclass
class EvalThresholds:
    room_iou: float = 0.5
    corner_px: float = 10.0
    angle_deg: float = 5.0
    line_px: float = 10.0
    line_mode: str = "endpoints"  # or "midpoint"

    def to_dict(self) -> dict:
        return {
            "room_iou": self.room_iou,
            "corner_px": self.corner_px,
            "angle_deg": self.angle_deg,
            "line_px": self.line_px,
            "line_mode": self.line_mode,
        }


def prf(matched: int, num_pred: int, num_gt: int):
    precision = matched / num_pred if num_pred else 0.0
    recall = matched / num_gt if num_gt else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def match_rooms(gt: Floorplan, pred: Floorplan, theta_room: float = 0.5, resolution: int | None = None):
    """One-to-one room pairing: per groundtruth room, the best unused
    prediction by IoU; pairs under theta_room are discarded.

    Returns a list of (gt_index, pred_index, iou).
    """
    resolution = resolution or int(gt.width)
    scale = np.array([gt.width, gt.height], dtype=np.float64)
    gt_polys = [np.asarray(c, dtype=np.float64) / scale for c, _ in gt.rooms]
    pred_polys = [np.asarray(c, dtype=np.float64) / scale for c, _ in pred.rooms]
    used = set()
    pairs = []
    for gi, gpoly in enumerate(gt_polys):
        best_iou, best_pi = 0.0, -1
        for pi, ppoly in enumerate(pred_polys):
            if pi in used:
                continue
            iou = polygon_iou(gpoly, ppoly, resolution)
            if iou > best_iou:
                best_iou, best_pi = iou, pi
        if best_pi >= 0 and best_iou >= theta_room:
            used.add(best_pi)
            pairs.append((gi, best_pi, best_iou))
    return pairs


def room_counts(gt: Floorplan, pred: Floorplan, theta_room: float = 0.5):
    pairs = match_rooms(gt, pred, theta_room)
    return len(pairs), len(pred.rooms), len(gt.rooms)


def room_prf(gt: Floorplan, pred: Floorplan, theta_room: float = 0.5):
    return prf(*room_counts(gt, pred, theta_room))


def semantic_room_counts(gt: Floorplan, pred: Floorplan, theta_room: float = 0.5):
    pairs = match_rooms(gt, pred, theta_room)
    correct = sum(1 for gi, pi, _ in pairs if gt.rooms[gi][1] == pred.rooms[pi][1])
    return correct, len(pred.rooms), len(gt.rooms)


def semantic_room_prf(gt: Floorplan, pred: Floorplan, theta_room: float = 0.5):
    return prf(*semantic_room_counts(gt, pred, theta_room))


def mean_room_iou(gt: Floorplan, pred: Floorplan, theta_room: float = 0.5) -> float:
    """Average IoU over groundtruth rooms; unmatched rooms count as 0."""
    if not gt.rooms:
        return 0.0
    pairs = match_rooms(gt, pred, theta_room)
    return sum(iou for _, _, iou in pairs) / len(gt.rooms)


def _all_corners(plan: Floorplan):
    """(room_index, vertex_index, xy) triples in room order, vertex order."""
    out = []
    for ri, (corners, _) in enumerate(plan.rooms):
        for vi, xy in enumerate(np.asarray(corners, dtype=np.float64)):
            out.append((ri, vi, xy))
    return out


def match_corners(gt: Floorplan, pred: Floorplan, theta_c: float = 10.0):
    """Greedy nearest-neighbor one-to-one corner pairing within theta_c px."""
    gt_corners = _all_corners(gt)
    pred_corners = _all_corners(pred)
    used = set()
    pairs = []
    for g_idx, (gri, gvi, gxy) in enumerate(gt_corners):
        best_d, best_p = math.inf, -1
        for p_idx, (_, _, pxy) in enumerate(pred_corners):
            if p_idx in used:
                continue
            d = float(np.hypot(*(gxy - pxy)))
            if d < best_d:
                best_d, best_p = d, p_idx
        if best_p >= 0 and best_d < theta_c:
            used.add(best_p)
            pairs.append((g_idx, best_p, best_d))
    return pairs, len(gt_corners), len(pred_corners)


def corner_counts(gt: Floorplan, pred: Floorplan, theta_c: float = 10.0):
    pairs, n_gt, n_pred = match_corners(gt, pred, theta_c)
    return len(pairs), n_pred, n_gt


def corner_prf(gt: Floorplan, pred: Floorplan, theta_c: float = 10.0):
    return prf(*corner_counts(gt, pred, theta_c))


def interior_angle(corners: np.ndarray, i: int) -> float:
    """Interior angle in degrees at vertex i of a CCW polygon (0..360)."""
    pts = np.asarray(corners, dtype=np.float64)
    n = pts.shape[0]
    v = pts[i]
    incoming = v - pts[(i - 1) % n]
    outgoing = pts[(i + 1) % n] - v
    cross = incoming[0] * outgoing[1] - incoming[1] * outgoing[0]
    dot = incoming @ outgoing
    turn = math.atan2(cross, dot)
    return math.degrees(math.pi - turn)


def angle_counts(gt: Floorplan, pred: Floorplan, theta_c: float = 10.0, theta_a: float = 5.0):
    pairs, n_gt, n_pred = match_corners(gt, pred, theta_c)
    gt_corners = _all_corners(gt)
    pred_corners = _all_corners(pred)
    correct = 0
    for g_idx, p_idx, _ in pairs:
        gri, gvi, _ = gt_corners[g_idx]
        pri, pvi, _ = pred_corners[p_idx]
        a_gt = interior_angle(gt.rooms[gri][0], gvi)
        a_pred = interior_angle(pred.rooms[pri][0], pvi)
        if abs(a_gt - a_pred) <= theta_a:
            correct += 1
    return correct, n_pred, n_gt


def angle_prf(gt: Floorplan, pred: Floorplan, theta_c: float = 10.0, theta_a: float = 5.0):
    return prf(*angle_counts(gt, pred, theta_c, theta_a))


def _line_gap(a: np.ndarray, b: np.ndarray, mode: str) -> float:
    """Distance between two segments under the better endpoint pairing (or
    between midpoints)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if mode == "midpoint":
        return float(np.hypot(*(a.mean(axis=0) - b.mean(axis=0))))
    direct = max(float(np.hypot(*(a[0] - b[0]))), float(np.hypot(*(a[1] - b[1]))))
    swapped = max(float(np.hypot(*(a[0] - b[1]))), float(np.hypot(*(a[1] - b[0]))))
    return min(direct, swapped)


def _match_lines(gt_lines, pred_lines, theta: float, mode: str):
    used = set()
    matched = 0
    for g in gt_lines:
        best_d, best_p = math.inf, -1
        for pi, p in enumerate(pred_lines):
            if pi in used:
                continue
            d = _line_gap(g, p, mode)
            if d < best_d:
                best_d, best_p = d, pi
        if best_p >= 0 and best_d < theta:
            used.add(best_p)
            matched += 1
    return matched


def door_window_counts(gt: Floorplan, pred: Floorplan, theta: float = 10.0, mode: str = "endpoints"):
    """Doors match doors and windows match windows; the counts are pooled."""
    matched = _match_lines(gt.doors, pred.doors, theta, mode)
    matched += _match_lines(gt.windows, pred.windows, theta, mode)
    return matched, len(pred.doors) + len(pred.windows), len(gt.doors) + len(gt.windows)


def door_window_prf(gt: Floorplan, pred: Floorplan, theta: float = 10.0, mode: str = "endpoints"):
    return prf(*door_window_counts(gt, pred, theta, mode))


_LEVELS = ("room", "room_semantic", "corner", "angle", "door_window")


def scene_counts(gt: Floorplan, pred: Floorplan, thresholds: EvalThresholds) -> dict:
    return {
        "room": room_counts(gt, pred, thresholds.room_iou),
        "room_semantic": semantic_room_counts(gt, pred, thresholds.room_iou),
        "corner": corner_counts(gt, pred, thresholds.corner_px),
        "angle": angle_counts(gt, pred, thresholds.corner_px, thresholds.angle_deg),
        "door_window": door_window_counts(gt, pred, thresholds.line_px, thresholds.line_mode),
        "room_iou": mean_room_iou(gt, pred, thresholds.room_iou),
    }


def evaluate_scenes(pairs, thresholds: EvalThresholds | None = None) -> dict:
    """Full report over (gt, pred) floorplan pairs.

    Aggregate P/R/F1 pools matched/predicted/groundtruth counts over scenes;
    room_iou averages per-scene means over scenes with rooms.
    """
    thresholds = thresholds or EvalThresholds()
    scenes = []
    totals = {level: [0, 0, 0] for level in _LEVELS}
    iou_values = []
    for gt, pred in pairs:
        counts = scene_counts(gt, pred, thresholds)
        scene_report = {}
        for level in _LEVELS:
            matched, n_pred, n_gt = counts[level]
            totals[level][0] += matched
            totals[level][1] += n_pred
            totals[level][2] += n_gt
            p, r, f1 = prf(matched, n_pred, n_gt)
            scene_report[level] = {"precision": p, "recall": r, "f1": f1}
        scene_report["room_iou"] = counts["room_iou"]
        if gt.rooms:
            iou_values.append(counts["room_iou"])
        scenes.append(scene_report)
    aggregate = {}
    for level in _LEVELS:
        p, r, f1 = prf(*totals[level])
        aggregate[level] = {"precision": p, "recall": r, "f1": f1}
    aggregate["room_iou"] = float(np.mean(iou_values)) if iou_values else 0.0
    return {
        "tool_version": __version__,
        "thresholds": thresholds.to_dict(),
        "num_scenes": len(scenes),
        "aggregate": aggregate,
        "scenes": scenes,
    }
