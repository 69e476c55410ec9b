"""End-to-end matcher: backbone -> transform -> coarse match -> refinement.

The Matcher owns every parameter tensor; inference runs the fused deploy
backbone and reports per-stage wall-clock so the benchmark harness can
mirror the stage decomposition of the timing tables.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .backbone import Backbone, BackboneConfig, FusedBackbone, pad_to_multiple
from .matching import CoarseMatch, match_coarse
from .refine import COARSE_STRIDE, FineFusion, FineMatch, refine
from .tensor import Tensor
from .transform import AggAttnConfig, FeatureTransform


@dataclass
class MatcherConfig:
    widths: tuple[int, ...] = (64, 64, 128, 256)
    blocks: tuple[int, ...] = (1, 2, 4, 14)
    n_layers: int = 4
    n_heads: int = 8
    s: int = 4
    d_fine: int = 64
    fine_patch_width: int = 8
    inv_temperature: float | None = None
    tau: float = 0.2

    @property
    def d_model(self) -> int:
        return self.widths[-1]

    @classmethod
    def toy(cls) -> "MatcherConfig":
        return cls(widths=(8, 8, 16, 32), blocks=(1, 1, 2, 2), n_layers=2,
                   n_heads=4, s=2, d_fine=16)

    def to_dict(self) -> dict:
        return {
            "widths": ",".join(str(w) for w in self.widths),
            "blocks": ",".join(str(b) for b in self.blocks),
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "s": self.s,
            "d_fine": self.d_fine,
            "fine_patch_width": self.fine_patch_width,
            "inv_temperature": "" if self.inv_temperature is None else self.inv_temperature,
            "tau": self.tau,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MatcherConfig":
        cfg = cls()
        for key, value in data.items():
            if key not in cfg.__dataclass_fields__:
                raise KeyError(f"unknown matcher config key {key!r}")
            if key in ("widths", "blocks"):
                value = tuple(int(v) for v in str(value).split(","))
            elif key == "inv_temperature":
                value = None if value in ("", None, "none") else float(value)
            elif key == "tau":
                value = float(value)
            else:
                value = int(value)
            setattr(cfg, key, value)
        return cfg


def normalize_cells(features: Tensor) -> Tensor:
    """Scale each cell's feature vector to norm sqrt(d).

    Correlation scores then become d * cosine similarity, so the configured
    inverse temperature bounds the softmax logits regardless of raw feature
    magnitude.
    """
    d = features.shape[0]
    sq = (features * features).sum(axis=0, keepdims=True)
    return features * (float(np.sqrt(d)) / (sq + 1e-12).sqrt())


@dataclass
class MatchResult:
    coarse: list[CoarseMatch]
    fine: list[FineMatch]
    grid_a: tuple[int, int]
    grid_b: tuple[int, int]
    dims_a: tuple[int, int]  # original (height, width), pre-padding
    dims_b: tuple[int, int]
    mode: str
    timings: dict[str, float] = field(default_factory=dict)


class Matcher:
    def __init__(self, config: MatcherConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        self.backbone = Backbone(BackboneConfig(stage_widths=config.widths, stage_blocks=config.blocks), rng, dtype=dtype)
        self.transform = FeatureTransform(
            AggAttnConfig(s=config.s, n_layers=config.n_layers, n_heads=config.n_heads, d_model=config.d_model),
            rng, dtype=dtype,
        )
        self.fusion = FineFusion(
            d_model=config.d_model, c_quarter=config.widths[2], c_half=config.widths[1],
            d_fine=config.d_fine, rng=rng, dtype=dtype,
        )

    @property
    def inv_temperature(self) -> float:
        if self.config.inv_temperature is not None:
            return self.config.inv_temperature
        return 10.0 / self.config.d_model

    @property
    def fine_patch_width(self) -> int:
        return self.config.fine_patch_width

    def named_tensors(self):
        yield from self.backbone.named_tensors()
        yield from self.transform.named_tensors()
        yield from self.fusion.named_tensors()

    def trainable_parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors() if t.requires_grad]

    def fuse(self) -> FusedBackbone:
        return self.backbone.fuse()

    def match_pair(
        self,
        image_a: np.ndarray,
        image_b: np.ndarray,
        mode: str = "full",
        tau: float | None = None,
        fused: FusedBackbone | None = None,
        two_stage: bool = True,
    ) -> MatchResult:
        """Match two grayscale [0, 1] images end to end (inference path).

        ``two_stage=False`` keeps stage-1 pixel matches only (ablation).
        """
        tau = self.config.tau if tau is None else tau
        multiple = COARSE_STRIDE * self.config.s  # coarse grid must divide s too
        padded_a, dims_a = pad_to_multiple(np.asarray(image_a, dtype=self.dtype), multiple)
        padded_b, dims_b = pad_to_multiple(np.asarray(image_b, dtype=self.dtype), multiple)
        timings: dict[str, float] = {}
        with T.no_grad():
            if fused is None:
                fused = self.fuse()
            t0 = time.perf_counter()
            pyr_a = fused.forward_deploy(T.tensor(padded_a[None]))
            pyr_b = fused.forward_deploy(T.tensor(padded_b[None]))
            t1 = time.perf_counter()
            fa_t, fb_t = self.transform.forward(pyr_a.f_coarse, pyr_b.f_coarse)
            t2 = time.perf_counter()
            coarse, score = match_coarse(
                normalize_cells(fa_t), normalize_cells(fb_t),
                mode=mode, tau=tau, inv_temperature=self.inv_temperature,
                valid_a=_valid_cells(padded_a.shape, dims_a),
                valid_b=_valid_cells(padded_b.shape, dims_b),
            )
            t3 = time.perf_counter()
            fine_a = normalize_cells(self.fusion.forward(fa_t, pyr_a.f_quarter, pyr_a.f_half))
            fine_b = normalize_cells(self.fusion.forward(fb_t, pyr_b.f_quarter, pyr_b.f_half))
            t4 = time.perf_counter()
            fine = refine(coarse, fine_a, fine_b, score.grid_a, score.grid_b,
                          w=self.fine_patch_width, two_stage=two_stage)
            t5 = time.perf_counter()
        fine = [m for m in fine if _in_bounds(m, dims_a, dims_b)]
        timings.update(
            backbone=t1 - t0, transform=t2 - t1, coarse_match=t3 - t2,
            fine_fusion=t4 - t3, refinement=t5 - t4, total=t5 - t0,
        )
        return MatchResult(
            coarse=coarse, fine=fine, grid_a=score.grid_a, grid_b=score.grid_b,
            dims_a=dims_a, dims_b=dims_b, mode=mode, timings=timings,
        )


def _valid_cells(padded_shape: tuple[int, int], original: tuple[int, int]) -> np.ndarray | None:
    ph, pw = padded_shape
    oh, ow = original
    if (ph, pw) == (oh, ow):
        return None
    rows = np.arange(ph // COARSE_STRIDE)
    cols = np.arange(pw // COARSE_STRIDE)
    ok_r = (rows + 1) * COARSE_STRIDE <= oh
    ok_c = (cols + 1) * COARSE_STRIDE <= ow
    return (ok_r[:, None] & ok_c[None, :]).reshape(-1)


def _in_bounds(match: FineMatch, dims_a: tuple[int, int], dims_b: tuple[int, int]) -> bool:
    (ha, wa), (hb, wb) = dims_a, dims_b
    xa, ya = match.pt_a
    xb, yb = match.pt_b
    return 0 <= xa < wa and 0 <= ya < ha and 0 <= xb <= wb - 1 and 0 <= yb <= hb - 1
