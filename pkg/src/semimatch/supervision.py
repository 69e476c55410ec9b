"""Ground-truth construction and the three loss terms.

Coarse supervision targets the dual-softmax probability matrix at warped
cell pairs; fine supervision splits into a log-likelihood over each local
score matrix (stage 1) and an L2 penalty on the sub-pixel points (stage 2).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .geometry import apply_homography, normalize_homography
from .refine import CELL_CENTER_OFFSET, COARSE_STRIDE
from .tensor import Tensor

PROB_FLOOR = 1e-12


@dataclass
class LossWeights:
    alpha: float = 1.0
    beta: float = 0.25

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass
class GroundTruth:
    """Cell-level correspondence derived from a known warp.

    ``pairs_a``/``pairs_b`` are flat cell indices; ``warped_centers`` is the
    exact sub-pixel image-B location of each paired A cell center. The
    homography is kept so fine targets can be recomputed for any pixel.
    """

    homography: np.ndarray
    grid_a: tuple[int, int]
    grid_b: tuple[int, int]
    pairs_a: np.ndarray
    pairs_b: np.ndarray
    warped_centers: np.ndarray
    valid_mask: np.ndarray  # over all A cells, flat

    def __len__(self) -> int:
        return len(self.pairs_a)

    def warp(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return apply_homography(self.homography, pts)


def build_gt_homography(h: np.ndarray, dims_a: tuple[int, int], dims_b: tuple[int, int]) -> GroundTruth:
    """Warp every A cell center by h and pair it with the nearest B cell.

    dims are (height, width) in full-resolution pixels, divisible by the
    coarse stride. Cells whose center leaves image B are masked out.
    """
    h = normalize_homography(h)  # rejects singular warps up front
    ha, wa = dims_a
    hb, wb = dims_b
    grid_a = (ha // COARSE_STRIDE, wa // COARSE_STRIDE)
    grid_b = (hb // COARSE_STRIDE, wb // COARSE_STRIDE)
    rows, cols = np.meshgrid(np.arange(grid_a[0]), np.arange(grid_a[1]), indexing="ij")
    centers = np.stack(
        [cols.ravel() * COARSE_STRIDE + CELL_CENTER_OFFSET,
         rows.ravel() * COARSE_STRIDE + CELL_CENTER_OFFSET], axis=1
    ).astype(np.float64)
    warped, finite = apply_homography(h, centers)
    inside = (
        finite
        & (warped[:, 0] >= 0.0) & (warped[:, 0] < wb)
        & (warped[:, 1] >= 0.0) & (warped[:, 1] < hb)
    )
    b_col = np.clip(np.round((warped[:, 0] - CELL_CENTER_OFFSET) / COARSE_STRIDE), 0, grid_b[1] - 1)
    b_row = np.clip(np.round((warped[:, 1] - CELL_CENTER_OFFSET) / COARSE_STRIDE), 0, grid_b[0] - 1)
    flat_a = np.arange(centers.shape[0])
    flat_b = (b_row * grid_b[1] + b_col).astype(np.int64)
    return GroundTruth(
        homography=np.asarray(h, dtype=np.float64),
        grid_a=grid_a,
        grid_b=grid_b,
        pairs_a=flat_a[inside],
        pairs_b=flat_b[inside],
        warped_centers=warped[inside],
        valid_mask=inside,
    )


def warp_points_depth_pose(
    pts: np.ndarray,
    depths: np.ndarray,
    k_a: np.ndarray,
    k_b: np.ndarray,
    t_ab: np.ndarray,
    dims_b: tuple[int, int] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Backproject with per-point depth, rigidly transform, reproject.

    t_ab is a 4x4 transform taking camera-A coordinates to camera-B.
    Validity requires positive depth on both sides and, when dims_b is
    given, projection inside image B.
    """
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    depths = np.asarray(depths, dtype=np.float64).reshape(-1)
    homog = np.hstack([pts, np.ones((pts.shape[0], 1))])
    rays = homog @ np.linalg.inv(np.asarray(k_a, dtype=np.float64)).T
    cam_a = rays * depths[:, None]
    cam_b = cam_a @ np.asarray(t_ab, dtype=np.float64)[:3, :3].T + np.asarray(t_ab, dtype=np.float64)[:3, 3]
    valid = (depths > 0) & (cam_b[:, 2] > 0)
    proj = cam_b @ np.asarray(k_b, dtype=np.float64).T
    safe = np.where(np.abs(proj[:, 2]) > 1e-12, proj[:, 2], 1.0)
    warped = proj[:, :2] / safe[:, None]
    if dims_b is not None:
        hb, wb = dims_b
        valid &= (warped[:, 0] >= 0) & (warped[:, 0] < wb) & (warped[:, 1] >= 0) & (warped[:, 1] < hb)
    return warped, valid


class EmptySupervisionError(ValueError):
    """No supervised entries; returning 0 here would hide data bugs."""


def coarse_loss(p: Tensor, gt: GroundTruth) -> Tensor:
    """Mean negative log of p at the ground-truth cell pairs."""
    if len(gt) == 0:
        raise EmptySupervisionError("ground truth holds no coarse pairs")
    picked = T.gather_nd(p, (gt.pairs_a, gt.pairs_b))
    return -(picked.clamp_min(PROB_FLOOR).log().mean())


def fine_loss_stage1(score_matrices: Tensor, idx_a: np.ndarray, idx_b: np.ndarray,
                     valid: np.ndarray) -> Tensor:
    """Mean negative log dual-softmax of each local matrix at its GT pair.

    ``score_matrices`` is (n, w^2, w^2); matches whose GT pixel fell outside
    the patch arrive with valid=False and are excluded. All-invalid input is
    an error.
    """
    valid = np.asarray(valid, dtype=bool)
    if not valid.any():
        raise EmptySupervisionError("every fine ground-truth pixel fell outside its patch")
    keep = np.flatnonzero(valid)
    probs = T.softmax(score_matrices, axis=2) * T.softmax(score_matrices, axis=1)
    picked = T.gather_nd(probs, (keep, np.asarray(idx_a)[keep], np.asarray(idx_b)[keep]))
    return -(picked.clamp_min(PROB_FLOOR).log().mean())


def fine_loss_stage2(pred_b: Tensor, target_b: np.ndarray) -> Tensor:
    """Mean squared Euclidean distance (px^2) between predictions and targets."""
    target_b = np.asarray(target_b, dtype=np.float64)
    if pred_b.shape != target_b.shape:
        raise ValueError(f"prediction/target shape mismatch: {pred_b.shape} vs {target_b.shape}")
    diff = pred_b - T.tensor(target_b, dtype=pred_b.dtype)
    return (diff * diff).sum(axis=1).mean()


def total_loss(l_c, l_f1, l_f2, weights: LossWeights = LossWeights()):
    """l_c + alpha * l_f1 + beta * l_f2."""
    for name, term in (("l_c", l_c), ("l_f1", l_f1), ("l_f2", l_f2)):
        value = term.data if isinstance(term, Tensor) else term
        if not np.all(np.isfinite(value)):
            raise ValueError(f"non-finite loss component {name}")
    return l_c + weights.alpha * l_f1 + weights.beta * l_f2
