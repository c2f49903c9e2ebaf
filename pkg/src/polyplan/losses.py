"""Supervised losses: vertex validity BCE, cyclic L1 regression, raster Dice.

All functions take predictions as torch tensors and groundtruth as
`PaddedTargets`; they are differentiable w.r.t. the prediction tensors.
The total follows sum-over-polygons weighting with coefficients
(lambda_cls, lambda_coord, lambda_ras) defaulting to (2, 5, 1).
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from .data import PaddedTargets
from .geometry import cyclic_coord_distance, rasterize_hard, rasterize_soft
from .matching import LAMBDA_CLS, LAMBDA_COORD, LAMBDA_RAS, MatchAssignment, match

PROB_EPS = 1e-7


def vertex_cls_loss(labels, probs) -> torch.Tensor:
    """Mean binary cross-entropy over all N vertex slots of one polygon."""
    labels_t = torch.as_tensor(labels, dtype=probs.dtype, device=probs.device)
    p = probs.clamp(PROB_EPS, 1.0 - PROB_EPS)
    return -(labels_t * torch.log(p) + (1.0 - labels_t) * torch.log(1.0 - p)).mean()


def coord_loss(gt: PaddedTargets, m: int, pred_coords_row: torch.Tensor) -> torch.Tensor:
    """Length-normalized cyclic L1 between groundtruth row m and its match.

    Zero for padding rows; the prediction is sliced to the groundtruth's
    true vertex count before alignment.
    """
    if m >= gt.gt_count:
        return pred_coords_row.sum() * 0.0
    n_m = gt.lengths[m]
    gt_prefix = torch.as_tensor(
        gt.coords[m, :n_m], dtype=pred_coords_row.dtype, device=pred_coords_row.device
    )
    return cyclic_coord_distance(gt_prefix, pred_coords_row[:n_m]) / n_m


def dice(mask_a: torch.Tensor, mask_b: torch.Tensor) -> torch.Tensor:
    """Dice distance 1 - 2|A.B| / (|A| + |B|); 0 when both masks are empty."""
    inter = (mask_a * mask_b).sum()
    total = mask_a.sum() + mask_b.sum()
    if float(total.detach()) == 0.0:
        return total * 0.0
    return 1.0 - 2.0 * inter / total


def raster_dice_loss(
    gt: PaddedTargets,
    m: int,
    pred_coords_row: torch.Tensor,
    resolution: int = 64,
    temperature: float = 0.03,
) -> torch.Tensor:
    """Dice between the hard groundtruth mask and the soft prediction mask.

    The prediction is sliced to the groundtruth length before rasterizing,
    mirroring the coordinate term. Padding rows and sub-triangle rows
    contribute 0.
    """
    if m >= gt.gt_count:
        return pred_coords_row.sum() * 0.0
    n_m = gt.lengths[m]
    if n_m < 3:
        return pred_coords_row.sum() * 0.0
    gt_mask = torch.as_tensor(
        rasterize_hard(gt.coords[m, :n_m], resolution),
        dtype=pred_coords_row.dtype,
        device=pred_coords_row.device,
    )
    pred_mask = rasterize_soft(pred_coords_row[:n_m], resolution, temperature)
    return dice(gt_mask, pred_mask)


def room_type_loss(
    types: np.ndarray,
    gt_count: int,
    logits: torch.Tensor,
    assignment: MatchAssignment,
) -> torch.Tensor:
    """Mean cross-entropy over all polygon slots; unmatched slots target the
    trailing empty class."""
    m_total, num_classes = logits.shape
    empty = num_classes - 1
    target = torch.full((m_total,), empty, dtype=torch.long, device=logits.device)
    for m in range(gt_count):
        target[int(assignment.perm[m])] = int(types[m])
    return F.cross_entropy(logits, target)


def total_loss(
    gt: PaddedTargets,
    pred_coords: torch.Tensor,
    pred_probs: torch.Tensor,
    assignment: MatchAssignment,
    lambda_cls: float = LAMBDA_CLS,
    lambda_coord: float = LAMBDA_COORD,
    lambda_ras: float = LAMBDA_RAS,
    resolution: int = 64,
    temperature: float = 0.03,
):
    """Weighted sum over polygon slots of the three loss terms.

    Returns (total, breakdown) where breakdown holds the unweighted float
    sums of each component.
    """
    device = pred_coords.device
    total = torch.zeros((), dtype=pred_coords.dtype, device=device)
    parts = {"cls": 0.0, "coord": 0.0, "ras": 0.0}
    m_total = gt.coords.shape[0]
    for m in range(m_total):
        k = int(assignment.perm[m])
        cls_term = vertex_cls_loss(gt.labels[m], pred_probs[k])
        total = total + lambda_cls * cls_term
        parts["cls"] += float(cls_term.detach())
        if m < gt.gt_count:
            coord_term = coord_loss(gt, m, pred_coords[k])
            total = total + lambda_coord * coord_term
            parts["coord"] += float(coord_term.detach())
            if lambda_ras != 0.0:
                ras_term = raster_dice_loss(gt, m, pred_coords[k], resolution, temperature)
                total = total + lambda_ras * ras_term
                parts["ras"] += float(ras_term.detach())
    return total, parts


def matched_total_loss(
    gt: PaddedTargets,
    pred_coords: torch.Tensor,
    pred_probs: torch.Tensor,
    lambda_cls: float = LAMBDA_CLS,
    lambda_coord: float = LAMBDA_COORD,
    lambda_ras: float = LAMBDA_RAS,
    resolution: int = 64,
    temperature: float = 0.03,
    use_mask_cost: bool = False,
):
    """Hungarian matching (on detached values) followed by `total_loss`.

    With use_mask_cost the coordinate matching cost is replaced by a raster
    Dice cost and the coordinate loss term is dropped (ablation switch); the
    remaining terms are unchanged.
    """
    coords_np = pred_coords.detach().cpu().numpy()
    probs_np = pred_probs.detach().cpu().numpy()
    if use_mask_cost:
        assignment = match_with_mask_cost(gt, coords_np, probs_np, lambda_cls, lambda_coord, resolution)
        total, parts = total_loss(
            gt, pred_coords, pred_probs, assignment,
            lambda_cls=lambda_cls, lambda_coord=0.0, lambda_ras=lambda_ras,
            resolution=resolution, temperature=temperature,
        )
    else:
        assignment = match(gt, coords_np, probs_np, lambda_cls, lambda_coord)
        total, parts = total_loss(
            gt, pred_coords, pred_probs, assignment,
            lambda_cls=lambda_cls, lambda_coord=lambda_coord, lambda_ras=lambda_ras,
            resolution=resolution, temperature=temperature,
        )
    return total, parts, assignment


def match_with_mask_cost(
    gt: PaddedTargets,
    pred_coords: np.ndarray,
    pred_probs: np.ndarray,
    lambda_cls: float = LAMBDA_CLS,
    lambda_mask: float = LAMBDA_COORD,
    resolution: int = 64,
) -> MatchAssignment:
    """Ablation matcher: rasterized-mask Dice replaces the coordinate cost."""
    from scipy.optimize import linear_sum_assignment

    m_total = gt.coords.shape[0]
    if pred_coords.shape[0] != m_total:
        raise ValueError(f"expected {m_total} predictions, got {pred_coords.shape[0]}")
    gt_masks = [
        rasterize_hard(gt.coords[m, : gt.lengths[m]], resolution) for m in range(gt.gt_count)
    ]
    pred_masks = []
    for k in range(m_total):
        valid = pred_coords[k][pred_probs[k] >= 0.5]
        pred_masks.append(rasterize_hard(valid, resolution) if valid.shape[0] >= 3 else None)
    costs = np.zeros((m_total, m_total), dtype=np.float64)
    for m in range(gt.gt_count):
        for k in range(m_total):
            cls_cost = float(np.abs(gt.labels[m] - pred_probs[k]).sum())
            if pred_masks[k] is None:
                mask_cost = 1.0
            else:
                inter = float((gt_masks[m] * pred_masks[k]).sum())
                total = float(gt_masks[m].sum() + pred_masks[k].sum())
                mask_cost = 1.0 if total == 0 else 1.0 - 2.0 * inter / total
            costs[m, k] = lambda_cls * cls_cost + lambda_mask * mask_cost
    if not np.isfinite(costs).all():
        raise ValueError("non-finite matching costs")
    perm = np.full(m_total, -1, dtype=np.int64)
    if gt.gt_count > 0:
        rows, cols = linear_sum_assignment(costs[: gt.gt_count])
        perm[rows] = cols
    used = set(perm[: gt.gt_count].tolist())
    perm[gt.gt_count :] = [k for k in range(m_total) if k not in used]
    per_pair = [(0.0, float(costs[m, perm[m]])) for m in range(m_total)]
    total = float(sum(costs[m, perm[m]] for m in range(gt.gt_count)))
    return MatchAssignment(perm=perm, per_pair_cost=per_pair, total_cost=total)
