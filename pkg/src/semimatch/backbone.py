"""Reparameterizable convolutional backbone producing a 1/2, 1/4, 1/8 pyramid.

Training mode runs every block through its parallel 3x3 / 1x1 / identity
branches (each with folded-statistics batch norm); ``fuse()`` collapses the
branches into one 3x3 kernel + bias per block so the deploy path runs a
single convolution per block with identical outputs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

BN_EPS = 1e-5


@dataclass
class BackboneConfig:
    stage_widths: tuple[int, ...] = (64, 64, 128, 256)
    stage_blocks: tuple[int, ...] = (1, 2, 4, 14)
    stage_strides: tuple[int, ...] = (1, 2, 2, 2)
    scale_factor: float = 1.0  # toy models shrink every stage width by this

    def __post_init__(self):
        if not (len(self.stage_widths) == len(self.stage_blocks) == len(self.stage_strides) == 4):
            raise ValueError("backbone uses exactly four stages")
        if tuple(self.stage_strides) != (1, 2, 2, 2):
            raise ValueError("stage strides are fixed at (1, 2, 2, 2) for a 1/2, 1/4, 1/8 pyramid")
        if self.scale_factor <= 0:
            raise ValueError("scale_factor must be positive")

    def widths(self) -> tuple[int, ...]:
        if self.scale_factor == 1.0:
            return tuple(self.stage_widths)
        return tuple(max(1, round(w * self.scale_factor)) for w in self.stage_widths)


@dataclass
class FeaturePyramid:
    f_half: Tensor
    f_quarter: Tensor
    f_coarse: Tensor


class BatchNormStats:
    """Per-channel normalization with stored statistics.

    Forward passes always normalize with the stored (mean, var); scale and
    shift are the trainable parameters. Stored statistics make the fused
    deploy network bit-for-bit comparable with the training-mode network.
    """

    def __init__(self, channels: int, dtype=np.float32):
        self.mean = T.tensor(np.zeros(channels), dtype=dtype)
        self.var = T.tensor(np.ones(channels), dtype=dtype)
        self.scale = T.parameter(np.ones(channels), dtype=dtype)
        self.shift = T.parameter(np.zeros(channels), dtype=dtype)
        self.eps = BN_EPS

    def apply(self, x: Tensor) -> Tensor:
        inv_std = 1.0 / np.sqrt(self.var.data + self.eps)
        w = (self.scale * T.tensor(inv_std, dtype=x.dtype)).reshape((-1, 1, 1))
        b = (self.shift - self.scale * T.tensor(self.mean.data * inv_std, dtype=x.dtype)).reshape((-1, 1, 1))
        return x * w + b

    def fold(self, kernel: np.ndarray, bias: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Fold the normalization into a preceding conv's kernel and bias."""
        t = self.scale.data / np.sqrt(self.var.data + self.eps)
        shape = (-1,) + (1,) * (kernel.ndim - 1)
        return kernel * t.reshape(shape), (bias - self.mean.data) * t + self.shift.data

    def named_tensors(self, prefix: str):
        yield f"{prefix}.bn_mean", self.mean
        yield f"{prefix}.bn_var", self.var
        yield f"{prefix}.bn_scale", self.scale
        yield f"{prefix}.bn_shift", self.shift


class ConvBranch:
    def __init__(self, in_c: int, out_c: int, k: int, rng: np.random.Generator, dtype=np.float32):
        std = np.sqrt(2.0 / (in_c * k * k))
        self.kernel = T.parameter(rng.normal(0.0, std, size=(out_c, in_c, k, k)), dtype=dtype)
        self.bias = T.parameter(np.zeros(out_c), dtype=dtype)
        self.bn = BatchNormStats(out_c, dtype=dtype)
        self.k = k

    def apply(self, x: Tensor, stride: int) -> Tensor:
        out = T.conv2d(x, self.kernel, self.bias, stride=stride, pad=(self.k - 1) // 2)
        return self.bn.apply(out)

    def named_tensors(self, prefix: str):
        yield f"{prefix}.kernel", self.kernel
        yield f"{prefix}.bias", self.bias
        yield from self.bn.named_tensors(prefix)


class RepVGGBlock:
    """3x3 + 1x1 + optional identity branches, summed then ReLU."""

    def __init__(self, in_c: int, out_c: int, stride: int, rng: np.random.Generator, dtype=np.float32):
        self.in_c = in_c
        self.out_c = out_c
        self.stride = stride
        self.conv3x3 = ConvBranch(in_c, out_c, 3, rng, dtype)
        self.conv1x1 = ConvBranch(in_c, out_c, 1, rng, dtype)
        self.identity = BatchNormStats(out_c, dtype=dtype) if (in_c == out_c and stride == 1) else None

    def forward(self, x: Tensor) -> Tensor:
        out = self.conv3x3.apply(x, self.stride) + self.conv1x1.apply(x, self.stride)
        if self.identity is not None:
            out = out + self.identity.apply(x)
        return out.relu()

    def fuse(self) -> tuple[np.ndarray, np.ndarray]:
        """Collapse all branches into one 3x3 kernel and bias.

        The 1x1 kernel is zero-padded into the center tap and the identity
        branch becomes a per-channel centered Dirac kernel; batch norm folds
        into each branch before summation.
        """
        k3, b3 = self.conv3x3.bn.fold(self.conv3x3.kernel.data, self.conv3x3.bias.data)
        k1, b1 = self.conv1x1.bn.fold(self.conv1x1.kernel.data, self.conv1x1.bias.data)
        k1_pad = np.zeros_like(k3)
        k1_pad[:, :, 1:2, 1:2] = k1
        kernel = k3 + k1_pad
        bias = b3 + b1
        if self.identity is not None:
            dirac = np.zeros_like(k3)
            dirac[np.arange(self.out_c), np.arange(self.in_c), 1, 1] = 1.0
            k_id, b_id = self.identity.fold(dirac, np.zeros(self.out_c, dtype=b3.dtype))
            kernel = kernel + k_id
            bias = bias + b_id
        return kernel, bias

    def named_tensors(self, prefix: str):
        yield from self.conv3x3.named_tensors(f"{prefix}.conv3x3")
        yield from self.conv1x1.named_tensors(f"{prefix}.conv1x1")
        if self.identity is not None:
            yield from self.identity.named_tensors(f"{prefix}.identity")


@dataclass
class FusedBlock:
    kernel: Tensor
    bias: Tensor
    stride: int


class Backbone:
    def __init__(self, config: BackboneConfig, rng: np.random.Generator, in_channels: int = 1, dtype=np.float32):
        self.config = config
        self.stages: list[list[RepVGGBlock]] = []
        c_in = in_channels
        for width, n_blocks, stride in zip(config.widths(), config.stage_blocks, config.stage_strides):
            stage = []
            for b in range(n_blocks):
                stage.append(RepVGGBlock(c_in, width, stride if b == 0 else 1, rng, dtype))
                c_in = width
            self.stages.append(stage)

    def forward_train(self, image: Tensor) -> FeaturePyramid:
        """Run the multi-branch network; image is (1, H, W) with H, W % 8 == 0."""
        _check_dims(image)
        x = image
        outputs = []
        for stage in self.stages:
            for block in stage:
                x = block.forward(x)
            outputs.append(x)
        return FeaturePyramid(f_half=outputs[1], f_quarter=outputs[2], f_coarse=outputs[3])

    def fuse(self) -> "FusedBackbone":
        fused = []
        for stage in self.stages:
            row = []
            for block in stage:
                kernel, bias = block.fuse()
                row.append(FusedBlock(T.tensor(kernel), T.tensor(bias), block.stride))
            fused.append(row)
        return FusedBackbone(fused)

    def named_tensors(self, prefix: str = "backbone"):
        for s, stage in enumerate(self.stages):
            for b, block in enumerate(stage):
                yield from block.named_tensors(f"{prefix}.stage{s}.block{b}")


class FusedBackbone:
    """Single-branch deployment form: one convolution per block."""

    def __init__(self, stages: list[list[FusedBlock]]):
        self.stages = stages

    def forward_deploy(self, image: Tensor) -> FeaturePyramid:
        _check_dims(image)
        x = image
        outputs = []
        for stage in self.stages:
            for block in stage:
                x = T.conv2d(x, block.kernel, block.bias, stride=block.stride, pad=1).relu()
            outputs.append(x)
        return FeaturePyramid(f_half=outputs[1], f_quarter=outputs[2], f_coarse=outputs[3])


def _check_dims(image: Tensor) -> None:
    if image.ndim != 3 or image.shape[0] != 1:
        raise ValueError(f"backbone expects a (1, H, W) grayscale map, got {image.shape}")
    _, h, w = image.shape
    if h % 8 or w % 8:
        raise ValueError(f"image dims must be divisible by 8, got {h}x{w}; pad first")


def pad_to_multiple(image: np.ndarray, multiple: int = 8) -> tuple[np.ndarray, tuple[int, int]]:
    """Right/bottom zero-pad so both dims divide; returns (padded, original hw).

    The pipeline pads to 8*s so the coarse grid also divides the attention
    aggregation range.
    """
    h, w = image.shape
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph or pw:
        image = np.pad(image, ((0, ph), (0, pw)))
    return image, (h, w)


def to_grayscale(rgb: np.ndarray) -> np.ndarray:
    """Luma conversion for (H, W, 3) arrays in [0, 1]."""
    return rgb @ np.array([0.299, 0.587, 0.114], dtype=rgb.dtype)
