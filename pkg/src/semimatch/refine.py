"""Fine feature fusion and two-stage sub-pixel match refinement.

Stage 1 picks the best mutual pixel pair inside a local patch (pure argmax,
no spatial averaging); stage 2 moves the point in B by a softmax-expectation
over a 3x3 correlation window, so the final offset is bounded by one pixel
per axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .matching import CoarseMatch
from .tensor import Tensor

COARSE_STRIDE = 8
CELL_CENTER_OFFSET = 4

# window cell (row r, col c) corresponds to offset (dx, dy) = (c-1, r-1)
_OFFSET_GRID = np.array([[c - 1, r - 1] for r in range(3) for c in range(3)], dtype=np.float64)


@dataclass
class FinePatchPair:
    patch_a: Tensor  # (d_f, w, w)
    patch_b: Tensor
    origin_a: tuple[int, int]  # (x0, y0) full-resolution top-left
    origin_b: tuple[int, int]
    padded: bool


@dataclass
class FineMatch:
    pt_a: tuple[int, int]  # integer pixel in A, (x, y)
    pt_b: tuple[float, float]  # sub-pixel point in B
    confidence: float


class FineFusion:
    """Ladder that lifts transformed 1/8 features to a full-resolution map.

    up x2 -> 1x1-projected skip-add with the 1/4 backbone features -> 3x3
    conv -> up x2 -> skip-add with the 1/2 features -> 3x3 conv -> up x2.
    Only feed-forward convolutions, no attention.
    """

    def __init__(self, d_model: int, c_quarter: int, c_half: int, d_fine: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.d_fine = d_fine
        self.proj_quarter = _conv_param(rng, d_model, c_quarter, 1, dtype)
        self.proj_quarter_bias = T.parameter(np.zeros(d_model), dtype=dtype)
        self.conv_mid = _conv_param(rng, c_half, d_model, 3, dtype)
        self.conv_mid_bias = T.parameter(np.zeros(c_half), dtype=dtype)
        self.conv_out = _conv_param(rng, d_fine, c_half, 3, dtype)
        self.conv_out_bias = T.parameter(np.zeros(d_fine), dtype=dtype)

    def forward(self, f_coarse_t: Tensor, f_quarter: Tensor, f_half: Tensor) -> Tensor:
        if f_quarter.shape[1:] != tuple(2 * n for n in f_coarse_t.shape[1:]):
            raise ValueError("1/4 features do not match 2x the coarse grid")
        if f_half.shape[1:] != tuple(4 * n for n in f_coarse_t.shape[1:]):
            raise ValueError("1/2 features do not match 4x the coarse grid")
        x = T.bilinear_upsample(f_coarse_t, 2)
        x = x + T.conv2d(f_quarter, self.proj_quarter, self.proj_quarter_bias)
        x = T.conv2d(x.relu(), self.conv_mid, self.conv_mid_bias, pad=1)
        x = T.bilinear_upsample(x, 2)
        x = x + f_half
        x = T.conv2d(x.relu(), self.conv_out, self.conv_out_bias, pad=1)
        return T.bilinear_upsample(x, 2)

    def named_tensors(self, prefix: str = "fine_fusion"):
        yield f"{prefix}.proj_quarter.kernel", self.proj_quarter
        yield f"{prefix}.proj_quarter.bias", self.proj_quarter_bias
        yield f"{prefix}.conv_mid.kernel", self.conv_mid
        yield f"{prefix}.conv_mid.bias", self.conv_mid_bias
        yield f"{prefix}.conv_out.kernel", self.conv_out
        yield f"{prefix}.conv_out.bias", self.conv_out_bias


def _conv_param(rng, out_c, in_c, k, dtype):
    std = math.sqrt(2.0 / (in_c * k * k))
    return T.parameter(rng.normal(0.0, std, size=(out_c, in_c, k, k)), dtype=dtype)


def cell_center_fullres(cell: tuple[int, int]) -> tuple[int, int]:
    """Full-resolution (x, y) center of a coarse cell given as (row, col)."""
    row, col = cell
    return (col * COARSE_STRIDE + CELL_CENTER_OFFSET, row * COARSE_STRIDE + CELL_CENTER_OFFSET)


def crop_patches(fine_a: Tensor, fine_b: Tensor, matches: list[CoarseMatch],
                 grid_a: tuple[int, int], grid_b: tuple[int, int], w: int = 8) -> list[FinePatchPair]:
    """w-by-w patches centered on each coarse match's full-resolution center.

    Origins are clamped into the image; a pair is flagged when either origin
    sits at the clamp boundary.
    """
    if w % 2:
        raise ValueError("patch width must be even")
    pairs = []
    for match in matches:
        origin_a, pad_a = _clamped_origin(match.cell_a(grid_a), fine_a.shape, w)
        origin_b, pad_b = _clamped_origin(match.cell_b(grid_b), fine_b.shape, w)
        patch_a = fine_a[:, origin_a[1]:origin_a[1] + w, origin_a[0]:origin_a[0] + w]
        patch_b = fine_b[:, origin_b[1]:origin_b[1] + w, origin_b[0]:origin_b[0] + w]
        pairs.append(FinePatchPair(patch_a, patch_b, origin_a, origin_b, pad_a or pad_b))
    return pairs


def _clamped_origin(cell: tuple[int, int], map_shape, w: int) -> tuple[tuple[int, int], bool]:
    _, height, width = map_shape
    if w > height or w > width:
        raise ValueError(f"patch width {w} exceeds map size {height}x{width}")
    cx, cy = cell_center_fullres(cell)
    x0 = min(max(cx - w // 2, 0), width - w)
    y0 = min(max(cy - w // 2, 0), height - w)
    at_border = x0 in (0, width - w) or y0 in (0, height - w)
    return (x0, y0), at_border


def local_score_matrix(pair: FinePatchPair) -> Tensor:
    """(w^2, w^2) correlation of the two patches, scaled by 1/sqrt(d_f)."""
    d = pair.patch_a.shape[0]
    w2 = pair.patch_a.shape[1] * pair.patch_a.shape[2]
    ta = pair.patch_a.reshape((d, w2)).transpose((1, 0))
    tb = pair.patch_b.reshape((d, w2))
    return T.matmul(ta, tb) * (1.0 / math.sqrt(d))


def stack_score_matrices(pairs: list[FinePatchPair]) -> Tensor:
    """(n, w^2, w^2) batch of local score matrices."""
    d = pairs[0].patch_a.shape[0]
    w2 = pairs[0].patch_a.shape[1] * pairs[0].patch_a.shape[2]
    ta = T.concat([p.patch_a.reshape((1, d, w2)) for p in pairs], axis=0).transpose((0, 2, 1))
    tb = T.concat([p.patch_b.reshape((1, d, w2)) for p in pairs], axis=0)
    return T.matmul(ta, tb) * (1.0 / math.sqrt(d))


def stage1_mnn(pair: FinePatchPair) -> tuple[tuple[int, int], tuple[int, int], float]:
    """Top-scoring mutual pixel pair of the local score matrix.

    The global argmax of the matrix is always mutual, so this is the global
    argmax with ties broken toward the smallest row-major flat index.
    Returns ((x_a, y_a), (x_b, y_b), score) in full-resolution pixels.
    """
    with T.no_grad():
        scores = local_score_matrix(pair).data
    w = pair.patch_a.shape[1]
    flat = int(scores.argmax())
    a_idx, b_idx = divmod(flat, scores.shape[1])
    ar, ac = divmod(a_idx, w)
    br, bc = divmod(b_idx, w)
    pixel_a = (pair.origin_a[0] + ac, pair.origin_a[1] + ar)
    pixel_b = (pair.origin_b[0] + bc, pair.origin_b[1] + br)
    return pixel_a, pixel_b, float(scores[a_idx, b_idx])


def stage2_windows(fine_b: Tensor, pixels_b: list[tuple[int, int]]) -> tuple[Tensor, np.ndarray]:
    """3x3 windows of fine_b around each pixel plus an in-image mask.

    Border windows are zero-filled outside the image and the mask marks the
    out-of-image cells so they can be pushed to -inf before the softmax.
    """
    d, height, width = fine_b.shape
    windows = []
    masks = np.zeros((len(pixels_b), 9), dtype=bool)
    for n, (x, y) in enumerate(pixels_b):
        rows = []
        for r in range(3):
            for c in range(3):
                yy, xx = y + r - 1, x + c - 1
                inside = 0 <= yy < height and 0 <= xx < width
                masks[n, r * 3 + c] = inside
                if inside:
                    rows.append(fine_b[:, yy:yy + 1, xx:xx + 1].reshape((1, d, 1)))
                else:
                    rows.append(T.tensor(np.zeros((1, d, 1)), dtype=fine_b.dtype))
        windows.append(T.concat(rows, axis=2))
    return T.concat(windows, axis=0), masks


def stage2_offsets(feats_a: Tensor, windows: Tensor, masks: np.ndarray) -> Tensor:
    """Softmax-expectation offsets in [-1, 1]^2, differentiable.

    feats_a is (n, d), windows is (n, d, 9); out-of-image cells are masked
    to a large negative logit so the expectation stays inside the image.
    """
    n, d = feats_a.shape
    if not masks.any(axis=1).all():
        raise ValueError("a refinement window has no valid cell")
    scores = T.matmul(feats_a.reshape((n, 1, d)), windows).reshape((n, 9)) * (1.0 / math.sqrt(d))
    bias = np.where(masks, 0.0, -1e30)
    probs = T.softmax(scores + T.tensor(bias, dtype=scores.dtype), axis=1)
    return T.matmul(probs, T.tensor(_OFFSET_GRID, dtype=probs.dtype))


def stage2_expectation(feat_a: Tensor, window_b: Tensor, mask: np.ndarray | None = None) -> tuple[float, float]:
    """Single-match convenience wrapper around stage2_offsets."""
    if mask is None:
        mask = np.ones((1, 9), dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool).reshape(1, 9)
    d = feat_a.shape[0]
    with T.no_grad():
        offsets = stage2_offsets(feat_a.reshape((1, d)), window_b.reshape((1, d, 9)), mask)
    return float(offsets.data[0, 0]), float(offsets.data[0, 1])


def refine(matches: list[CoarseMatch], fine_a: Tensor, fine_b: Tensor,
           grid_a: tuple[int, int], grid_b: tuple[int, int], w: int = 8,
           two_stage: bool = True) -> list[FineMatch]:
    """Refine each coarse match to one sub-pixel fine match.

    Point A is fixed at the stage-1 pixel; point B adds the stage-2 offset.
    ``two_stage=False`` stops after stage 1 (ablation baseline).
    """
    if not matches:
        return []
    with T.no_grad():
        pairs = crop_patches(fine_a, fine_b, matches, grid_a, grid_b, w)
        stage1 = [stage1_mnn(pair) for pair in pairs]
        if not two_stage:
            return [
                FineMatch(pa, (float(pb[0]), float(pb[1])), score)
                for (pa, pb, score) in stage1
            ]
        pixels_b = [pb for (_, pb, _) in stage1]
        feats = T.concat(
            [fine_a[:, pa[1]:pa[1] + 1, pa[0]:pa[0] + 1].reshape((1, -1)) for (pa, _, _) in stage1],
            axis=0,
        )
        windows, masks = stage2_windows(fine_b, pixels_b)
        keep = masks.any(axis=1)
        offsets = stage2_offsets(feats, windows, np.where(keep[:, None], masks, True)).data
    out = []
    for n, (pa, pb, score) in enumerate(stage1):
        if not keep[n]:
            continue
        out.append(FineMatch(pa, (pb[0] + float(offsets[n, 0]), pb[1] + float(offsets[n, 1])), score))
    return out
