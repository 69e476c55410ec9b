"""Toy end-to-end training on synthetic homography pairs.

Coarse and fine stages train together from scratch with an adaptive-moment
optimizer. Fine supervision teacher-forces the ground-truth coarse pairs so
the local patches always contain signal.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import refine as R
from . import tensor as T
from .matching import CoarseMatch, correlate, dual_softmax
from .pipeline import normalize_cells
from .supervision import (
    EmptySupervisionError,
    GroundTruth,
    LossWeights,
    build_gt_homography,
    coarse_loss,
    fine_loss_stage1,
    fine_loss_stage2,
    total_loss,
)
from .tensor import Tensor


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""


@dataclass
class TrainConfig:
    steps: int = 800
    batch_size: int = 2
    lr: float = 4e-3
    weight_decay: float = 1e-2
    warmup_steps: int = 100
    clip_norm: float = 1.0
    seed: int = 0
    max_fine_matches: int = 48
    weights: LossWeights = field(default_factory=LossWeights)


@dataclass
class LossRow:
    step: int
    l_c: float
    l_f1: float
    l_f2: float
    total: float


class AdamW:
    """Adaptive-moment optimizer with decoupled weight decay.

    Decay applies to matrices/kernels only; biases and per-channel scales
    are exempt, standard practice.
    """

    def __init__(self, params: list[Tensor], lr: float, weight_decay: float = 1e-2,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data, dtype=np.float64) for p in params]
        self.v = [np.zeros_like(p.data, dtype=np.float64) for p in params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr_scale: float = 1.0) -> None:
        self.t += 1
        b1, b2 = self.betas
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        lr = self.lr * lr_scale
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad.astype(np.float64)
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            if self.weight_decay and p.data.ndim >= 2:
                update = update + self.weight_decay * p.data
            p.data = (p.data - lr * update).astype(p.data.dtype)


def clip_gradients(params: list[Tensor], max_norm: float) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


def pair_losses(matcher, image_a: np.ndarray, image_b: np.ndarray, h: np.ndarray,
                cfg: TrainConfig, rng: np.random.Generator):
    """Forward pass and the three loss terms for one training pair."""
    ta = T.tensor(image_a[None, :, :], dtype=matcher.dtype)
    tb = T.tensor(image_b[None, :, :], dtype=matcher.dtype)
    pyr_a = matcher.backbone.forward_train(ta)
    pyr_b = matcher.backbone.forward_train(tb)
    fa_t, fb_t = matcher.transform.forward(pyr_a.f_coarse, pyr_b.f_coarse)
    score = dual_softmax(
        correlate(normalize_cells(fa_t), normalize_cells(fb_t), matcher.inv_temperature)
    )
    gt = build_gt_homography(h, image_a.shape, image_b.shape)
    l_c = coarse_loss(score.p, gt)

    fine_a = normalize_cells(matcher.fusion.forward(fa_t, pyr_a.f_quarter, pyr_a.f_half))
    fine_b = normalize_cells(matcher.fusion.forward(fb_t, pyr_b.f_quarter, pyr_b.f_half))
    l_f1, l_f2 = _fine_losses(fine_a, fine_b, gt, matcher.fine_patch_width, cfg, rng)
    return l_c, l_f1, l_f2


def _fine_losses(fine_a: Tensor, fine_b: Tensor, gt: GroundTruth, w: int,
                 cfg: TrainConfig, rng: np.random.Generator):
    n_pairs = len(gt)
    if n_pairs == 0:
        return None, None
    order = np.arange(n_pairs)
    if n_pairs > cfg.max_fine_matches:
        order = rng.choice(n_pairs, size=cfg.max_fine_matches, replace=False)
    matches = [CoarseMatch(int(gt.pairs_a[k]), int(gt.pairs_b[k]), 1.0) for k in order]
    patches = R.crop_patches(fine_a, fine_b, matches, gt.grid_a, gt.grid_b, w)

    # stage-1 targets: patch-A center pixel against the rounded warp in B
    idx_a = np.zeros(len(patches), dtype=np.int64)
    idx_b = np.zeros(len(patches), dtype=np.int64)
    valid = np.zeros(len(patches), dtype=bool)
    for n, (patch, match) in enumerate(zip(patches, matches)):
        center = R.cell_center_fullres(match.cell_a(gt.grid_a))
        ax = center[0] - patch.origin_a[0]
        ay = center[1] - patch.origin_a[1]
        idx_a[n] = ay * w + ax
        target, ok = gt.warp(np.array([center], dtype=np.float64))
        bx = int(round(target[0, 0])) - patch.origin_b[0]
        by = int(round(target[0, 1])) - patch.origin_b[1]
        if ok[0] and 0 <= bx < w and 0 <= by < w:
            idx_b[n] = by * w + bx
            valid[n] = True
    score_matrices = R.stack_score_matrices(patches)
    try:
        l_f1 = fine_loss_stage1(score_matrices, idx_a, idx_b, valid)
    except EmptySupervisionError:
        l_f1 = None

    # stage-2: supervise the expectation only where the target is reachable
    stage1 = [R.stage1_mnn(p) for p in patches]
    targets, reach = [], []
    for (pa, pb, _score), _patch in zip(stage1, patches):
        target, ok = gt.warp(np.array([pa], dtype=np.float64))
        reach.append(bool(ok[0]) and abs(target[0, 0] - pb[0]) <= 1.0 and abs(target[0, 1] - pb[1]) <= 1.0)
        targets.append(target[0])
    keep = np.flatnonzero(reach)
    if keep.size == 0:
        return l_f1, None
    feats = T.concat(
        [fine_a[:, stage1[k][0][1]:stage1[k][0][1] + 1, stage1[k][0][0]:stage1[k][0][0] + 1].reshape((1, -1))
         for k in keep],
        axis=0,
    )
    windows, masks = R.stage2_windows(fine_b, [stage1[k][1] for k in keep])
    offsets = R.stage2_offsets(feats, windows, masks)
    base = np.array([stage1[k][1] for k in keep], dtype=np.float64)
    pred_b = offsets + T.tensor(base, dtype=offsets.dtype)
    l_f2 = fine_loss_stage2(pred_b, np.array([targets[k] for k in keep]))
    return l_f1, l_f2


def train_toy(matcher, dataset, cfg: TrainConfig, log=None) -> list[LossRow]:
    """Gradient-descent training; deterministic for a fixed config and seed."""
    params = matcher.trainable_parameters()
    optimizer = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    curve: list[LossRow] = []
    zero = 0.0
    for step in range(cfg.steps):
        if cfg.lr == 0.0:
            lr_scale = 0.0
        elif cfg.warmup_steps > 0 and step < cfg.warmup_steps:
            lr_scale = (step + 1) / cfg.warmup_steps
        else:
            lr_scale = 1.0
        optimizer.zero_grad()
        batch = [dataset[int(i)] for i in rng.integers(0, len(dataset), size=cfg.batch_size)]
        terms = {"l_c": [], "l_f1": [], "l_f2": []}
        for image_a, image_b, h in batch:
            l_c, l_f1, l_f2 = pair_losses(matcher, image_a, image_b, h, cfg, rng)
            terms["l_c"].append(l_c)
            if l_f1 is not None:
                terms["l_f1"].append(l_f1)
            if l_f2 is not None:
                terms["l_f2"].append(l_f2)
        l_c = _mean(terms["l_c"])
        l_f1 = _mean(terms["l_f1"]) if terms["l_f1"] else zero
        l_f2 = _mean(terms["l_f2"]) if terms["l_f2"] else zero
        loss = total_loss(l_c, l_f1, l_f2, cfg.weights)
        value = float(loss.data)
        if not math.isfinite(value):
            raise DivergenceError(f"loss became {value} at step {step}")
        loss.backward()
        clip_gradients(params, cfg.clip_norm)
        optimizer.step(lr_scale)
        row = LossRow(
            step=step,
            l_c=float(l_c.data) if isinstance(l_c, Tensor) else float(l_c),
            l_f1=float(l_f1.data) if isinstance(l_f1, Tensor) else float(l_f1),
            l_f2=float(l_f2.data) if isinstance(l_f2, Tensor) else float(l_f2),
            total=value,
        )
        curve.append(row)
        if log is not None:
            log(row)
    return curve


def _mean(terms):
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out * (1.0 / len(terms))


def loss_curve_csv(curve: list[LossRow]) -> str:
    lines = ["step,l_c,l_f1,l_f2,total"]
    for row in curve:
        lines.append(f"{row.step},{row.l_c:.6f},{row.l_f1:.6f},{row.l_f2:.6f},{row.total:.6f}")
    return "\n".join(lines) + "\n"
