"""Bipartite assignment between predicted and padded groundtruth polygons.

The matching cost for a (groundtruth, prediction) pair combines a vertex
validity term (L1 over all N slots) and a coordinate term (cyclic-alignment
L1 over the groundtruth's true length, the prediction sliced to the same
length). Padded groundtruth rows cost 0 against every prediction, so only
real rows influence the optimal assignment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data import PaddedTargets
from .geometry import cyclic_coord_distance

LAMBDA_CLS = 2.0
LAMBDA_COORD = 5.0
LAMBDA_RAS = 1.0


@dataclass
class MatchAssignment:
    """perm[m] = prediction index assigned to groundtruth row m."""

    perm: np.ndarray
    per_pair_cost: list  # (cls_cost, coord_cost) per groundtruth row
    total_cost: float


def pair_cost(
    gt: PaddedTargets,
    m: int,
    pred_coords: np.ndarray,
    pred_probs: np.ndarray,
    k: int,
    lambda_cls: float = LAMBDA_CLS,
    lambda_coord: float = LAMBDA_COORD,
):
    """Matching cost between groundtruth row m and prediction row k.

    Returns (cost, cls_cost, coord_cost); all three are 0 for padded rows.
    """
    if m >= gt.gt_count:
        return 0.0, 0.0, 0.0
    cls_cost = float(np.abs(gt.labels[m] - pred_probs[k]).sum())
    n_m = gt.lengths[m]
    coord_cost = float(cyclic_coord_distance(gt.coords[m, :n_m], pred_coords[k, :n_m]))
    return lambda_cls * cls_cost + lambda_coord * coord_cost, cls_cost, coord_cost


def cost_matrix(
    gt: PaddedTargets,
    pred_coords: np.ndarray,
    pred_probs: np.ndarray,
    lambda_cls: float = LAMBDA_CLS,
    lambda_coord: float = LAMBDA_COORD,
) -> np.ndarray:
    """Dense (M, M) cost matrix; rows are groundtruth slots, columns predictions."""
    m_total = gt.coords.shape[0]
    costs = np.zeros((m_total, m_total), dtype=np.float64)
    for m in range(gt.gt_count):
        for k in range(m_total):
            costs[m, k], _, _ = pair_cost(gt, m, pred_coords, pred_probs, k, lambda_cls, lambda_coord)
    return costs


def match(
    gt: PaddedTargets,
    pred_coords: np.ndarray,
    pred_probs: np.ndarray,
    lambda_cls: float = LAMBDA_CLS,
    lambda_coord: float = LAMBDA_COORD,
) -> MatchAssignment:
    """Minimum-cost permutation of predictions onto groundtruth rows.

    Real rows are solved exactly (Hungarian on the rectangular submatrix);
    the leftover predictions are handed to padding rows in ascending index
    order, which fixes the tie-break since padding rows cost nothing.
    """
    m_total = gt.coords.shape[0]
    if pred_coords.shape[0] != m_total:
        raise ValueError(f"expected {m_total} predictions, got {pred_coords.shape[0]}")
    costs = cost_matrix(gt, pred_coords, pred_probs, lambda_cls, lambda_coord)
    if not np.isfinite(costs).all():
        raise ValueError("non-finite matching costs")
    perm = np.full(m_total, -1, dtype=np.int64)
    if gt.gt_count > 0:
        rows, cols = linear_sum_assignment(costs[: gt.gt_count])
        perm[rows] = cols
    used = set(perm[: gt.gt_count].tolist())
    leftovers = [k for k in range(m_total) if k not in used]
    perm[gt.gt_count :] = leftovers
    per_pair = []
    total = 0.0
    for m in range(m_total):
        cost, cls_cost, coord_cost = pair_cost(
            gt, m, pred_coords, pred_probs, int(perm[m]), lambda_cls, lambda_coord
        )
        per_pair.append((cls_cost, coord_cost))
        total += cost
    return MatchAssignment(perm=perm, per_pair_cost=per_pair, total_cost=total)
