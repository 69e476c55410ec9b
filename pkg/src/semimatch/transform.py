"""Local feature transform: 2D rotary encoding plus aggregated attention.

Tokens are aggregated before every attention (strided depthwise conv for
queries, max-pool for keys/values), cutting the score matrix by s^2 per
side; the attended map is upsampled back and fused with the input map.
Self-attention blocks rotate q/k by position; cross blocks never do.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as T
from .instrument import counters
from .tensor import Tensor


@dataclass
class AggAttnConfig:
    s: int = 4
    n_layers: int = 4
    n_heads: int = 8
    d_model: int = 256
    ffn_dim: int | None = None

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must divide evenly into heads")
        if (self.d_model // self.n_heads) % 4:
            raise ValueError("head dim must be divisible by 4 for 2D rotary encoding")
        if self.ffn_dim is None:
            self.ffn_dim = 2 * self.d_model


@dataclass(frozen=True)
class RoPEParams:
    d: int
    theta: tuple[float, ...]


def rope_params(d: int) -> RoPEParams:
    """Frequencies theta_k = 10000^(-4k/d), k = 1..d/4."""
    if d % 4:
        raise ValueError(f"rotary encoding needs d divisible by 4, got {d}")
    k = np.arange(1, d // 4 + 1)
    return RoPEParams(d=d, theta=tuple(10000.0 ** (-4.0 * k / d)))


def _rope_maps(params: RoPEParams, positions: np.ndarray, dtype) -> tuple[np.ndarray, np.ndarray]:
    """Per-token cos/sin planes with block layout [ax, ax, ay, ay] per 4-block."""
    theta = np.asarray(params.theta, dtype=np.float64)
    x = positions[:, 0:1] * theta[None, :]
    y = positions[:, 1:2] * theta[None, :]
    angles = np.stack([x, x, y, y], axis=2).reshape(positions.shape[0], params.d)
    return np.cos(angles).astype(dtype), np.sin(angles).astype(dtype)


def _rotate_pairs(x: Tensor) -> Tensor:
    # (a, b) -> (-b, a) within each channel pair
    paired = x.reshape((*x.shape[:-1], x.shape[-1] // 2, 2))
    even = paired[..., 0:1]
    odd = paired[..., 1:2]
    return T.concat([-odd, even], axis=-1).reshape(x.shape)


def rope_encode(features: Tensor, positions: np.ndarray, params: RoPEParams | None = None) -> Tensor:
    """Rotate feature channels by position so dot products depend only on offsets.

    ``features`` is (..., n, d) and ``positions`` is (n, 2) in grid units.
    The rotation is orthogonal, so norms are preserved exactly.
    """
    d = features.shape[-1]
    if params is None:
        params = rope_params(d)
    elif params.d != d:
        raise ValueError(f"rope params built for d={params.d}, features have d={d}")
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    if positions.shape[0] != features.shape[-2]:
        raise ValueError("one (x, y) position per token is required")
    cos, sin = _rope_maps(params, positions, features.dtype)
    counters.add("rope")
    return features * T.tensor(cos) + _rotate_pairs(features) * T.tensor(sin)


@lru_cache(maxsize=64)
def _grid_positions(h: int, w: int, s: int) -> np.ndarray:
    """Centers of s-by-s aggregation cells, (x, y) in coarse-grid units."""
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    centers = np.stack([xs, ys], axis=-1).reshape(-1, 2).astype(np.float64)
    return centers * s + (s - 1) / 2.0


def aggregate_tokens(f: Tensor, s: int, conv_kernel: Tensor) -> tuple[Tensor, Tensor]:
    """Reduce a (d, H, W) map to H*W/s^2 tokens per side.

    Queries come from a learned strided depthwise conv, keys/values from a
    max-pool with the same window; both outputs are (d, H/s, W/s).
    """
    _, h, w = f.shape
    if h % s or w % s:
        raise ValueError(f"grid {h}x{w} not divisible by aggregation range {s}")
    q_map = T.depthwise_conv2d(f, conv_kernel, stride=s, pad=0)
    kv_map = f if s == 1 else T.maxpool2d(f, s, s)
    return q_map, kv_map


def _to_tokens(feature_map: Tensor) -> Tensor:
    d = feature_map.shape[0]
    return feature_map.reshape((d, -1)).transpose((1, 0))


def _to_map(tokens: Tensor, h: int, w: int) -> Tensor:
    return tokens.transpose((1, 0)).reshape((tokens.shape[1], h, w))


def _split_heads(tokens: Tensor, n_heads: int) -> Tensor:
    n, d = tokens.shape
    return tokens.reshape((n, n_heads, d // n_heads)).transpose((1, 0, 2))


def _merge_heads(tokens: Tensor) -> Tensor:
    h, n, dh = tokens.shape
    return tokens.transpose((1, 0, 2)).reshape((n, h * dh))


class AggAttentionBlock:
    """One aggregated attention block (self or cross flavor)."""

    def __init__(self, kind: str, config: AggAttnConfig, rng: np.random.Generator, dtype=np.float32):
        if kind not in ("self", "cross"):
            raise ValueError(f"unknown block kind {kind!r}")
        self.kind = kind
        self.config = config
        d = config.d_model
        s = config.s
        box = np.full((d, s, s), 1.0 / (s * s))
        self.agg_conv = T.parameter(box + rng.normal(0.0, 0.01, size=box.shape), dtype=dtype)
        self.q_proj = T.parameter(_xavier(rng, d, d), dtype=dtype)
        self.k_proj = T.parameter(_xavier(rng, d, d), dtype=dtype)
        self.v_proj = T.parameter(_xavier(rng, d, d), dtype=dtype)
        self.out_proj = T.parameter(_xavier(rng, d, d), dtype=dtype)
        self.fuse = T.parameter(_xavier(rng, d, 2 * d), dtype=dtype)
        self.fc1 = T.parameter(_xavier(rng, config.ffn_dim, d), dtype=dtype)
        self.fc1_bias = T.parameter(np.zeros(config.ffn_dim), dtype=dtype)
        self.fc2 = T.parameter(_xavier(rng, d, config.ffn_dim), dtype=dtype)
        self.fc2_bias = T.parameter(np.zeros(d), dtype=dtype)
        self._rope = rope_params(d // config.n_heads)

    def forward(self, target: Tensor, source: Tensor, probe: dict | None = None,
                position_offset: tuple[float, float] = (0.0, 0.0)) -> Tensor:
        """position_offset shifts the coordinate frame; with relative encoding
        the output must not depend on it (and cross blocks never encode)."""
        if target.shape[0] != source.shape[0]:
            raise ValueError(f"feature dims differ: {target.shape} vs {source.shape}")
        if self.kind == "self" and target is not source:
            raise ValueError("self block expects the same map as target and source")
        s = self.config.s
        _, h, w = target.shape
        if h % s or w % s:
            raise ValueError(f"grid {h}x{w} not divisible by aggregation range {s}")
        q_map = T.depthwise_conv2d(target, self.agg_conv, stride=s, pad=0)
        kv_map = source if s == 1 else T.maxpool2d(source, s, s)
        ah, aw = q_map.shape[1], q_map.shape[2]

        q_tokens = T.layer_norm(_to_tokens(q_map))
        kv_tokens = T.layer_norm(_to_tokens(kv_map))
        q = _split_heads(T.linear(q_tokens, self.q_proj), self.config.n_heads)
        k = _split_heads(T.linear(kv_tokens, self.k_proj), self.config.n_heads)
        v = _split_heads(T.linear(kv_tokens, self.v_proj), self.config.n_heads)

        if self.kind == "self":
            positions = _grid_positions(ah, aw, s) + np.asarray(position_offset, dtype=np.float64)
            q = rope_encode(q, positions, self._rope)
            k = rope_encode(k, positions, self._rope)

        mix = T.vanilla_attention(q, k, v)
        attended = T.linear(_merge_heads(mix), self.out_proj)
        if probe is not None:
            probe["v_tokens"] = v.detach()
            probe["attn_mix"] = mix.detach()
            probe["attended_map_pre_upsample"] = _to_map(attended, ah, aw).detach()
            probe["rope_applied"] = self.kind == "self"

        up = T.bilinear_upsample(_to_map(attended, ah, aw), s)
        merged = _to_tokens(T.concat([target, up], axis=0))
        fused = T.linear(merged, self.fuse)
        hidden = T.layer_norm(fused)
        hidden = T.linear(hidden, self.fc1, self.fc1_bias).relu()
        hidden = T.linear(hidden, self.fc2, self.fc2_bias)
        return target + _to_map(hidden, h, w)

    def named_tensors(self, prefix: str):
        yield f"{prefix}.agg_conv.kernel", self.agg_conv
        yield f"{prefix}.q_proj.kernel", self.q_proj
        yield f"{prefix}.k_proj.kernel", self.k_proj
        yield f"{prefix}.v_proj.kernel", self.v_proj
        yield f"{prefix}.out_proj.kernel", self.out_proj
        yield f"{prefix}.ffn.fuse.kernel", self.fuse
        yield f"{prefix}.ffn.fc1.kernel", self.fc1
        yield f"{prefix}.ffn.fc1.bias", self.fc1_bias
        yield f"{prefix}.ffn.fc2.kernel", self.fc2
        yield f"{prefix}.ffn.fc2.bias", self.fc2_bias


class FeatureTransform:
    """N interleaved rounds of self/self/cross/cross aggregated attention.

    One set of weights serves both images, which makes the matcher exactly
    symmetric: transform(B, A) is the swap of transform(A, B).
    """

    def __init__(self, config: AggAttnConfig, rng: np.random.Generator, dtype=np.float32):
        self.config = config
        self.layers = [
            (AggAttentionBlock("self", config, rng, dtype), AggAttentionBlock("cross", config, rng, dtype))
            for _ in range(config.n_layers)
        ]

    def forward(self, f_a: Tensor, f_b: Tensor) -> tuple[Tensor, Tensor]:
        if f_a.shape[0] != f_b.shape[0]:
            raise ValueError("both images must share the coarse feature dim")
        for self_block, cross_block in self.layers:
            f_a = self_block.forward(f_a, f_a)
            f_b = self_block.forward(f_b, f_b)
            f_a, f_b = cross_block.forward(f_a, f_b), cross_block.forward(f_b, f_a)
        return f_a, f_b

    def named_tensors(self, prefix: str = "transform"):
        for i, (self_block, cross_block) in enumerate(self.layers):
            yield from self_block.named_tensors(f"{prefix}.layer{i}.self")
            yield from cross_block.named_tensors(f"{prefix}.layer{i}.cross")


def _xavier(rng: np.random.Generator, out_dim: int, in_dim: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-bound, bound, size=(out_dim, in_dim))
