"""Convolutional feature extractor: grayscale strip -> feature sequence.

Each block is a 3x3 convolution + ReLU followed by a max-pool.  Width pooling
is 1/4 overall and height pooling 1/16; whatever height remains is averaged
away, so the output is one feature vector per 4 input columns.

Width padding is causal by default (all padding on the left), which makes
feature slice ``i`` depend only on input columns up to its own receptive
right edge; appending columns to an image never changes earlier slices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .errors import ContractError
from .nn import Module
from .tensor import Tensor


# He-uniform bound for ReLU stacks; the plain 1/sqrt(fan_in) bound shrinks activations ~3x per layer.
RELU_GAIN = math.sqrt(6.0)


@dataclass(frozen=True)
class ConvBlock:
    out_channels: int
    kernel: tuple[int, int] = (3, 3)
    stride: tuple[int, int] = (1, 1)
    pool: tuple[int, int] = (1, 1)


DEFAULT_BLOCKS = (
    ConvBlock(8, pool=(2, 2)),
    ConvBlock(16, pool=(2, 2)),
    ConvBlock(32, pool=(2, 1)),
    ConvBlock(64, pool=(2, 1)),
)


@dataclass(frozen=True)
class EncoderConfig:
    height: int = 32
    in_channels: int = 1
    blocks: tuple[ConvBlock, ...] = field(default=DEFAULT_BLOCKS)
    width_padding: str = "causal"
    residual: bool = False

    def __post_init__(self):
        if self.width_padding not in ("causal", "same"):
            raise ContractError(f"width_padding must be 'causal' or 'same', got {self.width_padding!r}")
        for b in self.blocks:
            if min(b.kernel + b.stride + b.pool) < 1 or b.out_channels < 1:
                raise ContractError(f"invalid block {b}")
            if self.residual and b.stride != (1, 1):
                raise ContractError("residual blocks require unit stride")

    @property
    def feature_dim(self) -> int:
        return self.blocks[-1].out_channels if self.blocks else self.in_channels

    @property
    def width_ratio(self) -> float:
        return 1.0 / math.prod(b.stride[1] * b.pool[1] for b in self.blocks)

    @property
    def height_ratio(self) -> float:
        return 1.0 / math.prod(b.stride[0] * b.pool[0] for b in self.blocks)

    @property
    def min_width(self) -> int:
        return 1


def _same_pad(size, k, s):
    out = -(-size // s)
    return out, max((out - 1) * s + k - size, 0)


def conv_padding(config: EncoderConfig, block: ConvBlock, height: int, width: int):
    """(top, bottom, left, right) padding and output size; outputs are ceil(size / stride)."""
    Ho, ph = _same_pad(height, block.kernel[0], block.stride[0])
    Wo, pw = _same_pad(width, block.kernel[1], block.stride[1])
    left, right = (pw, 0) if config.width_padding == "causal" else (pw // 2, pw - pw // 2)
    return (ph // 2, ph - ph // 2, left, right), Ho, Wo


def shape_plan(config: EncoderConfig, width: int, height: int | None = None) -> list[tuple[str, tuple[int, int, int]]]:
    """Static (channels, height, width) after every layer for an input of ``width`` columns."""
    H = config.height if height is None else height
    if width < config.min_width or H < 1:
        raise ContractError(f"input {H}x{width} is smaller than the encoder minimum")
    C, W = config.in_channels, width
    plan = [("input", (C, H, W))]
    for n, block in enumerate(config.blocks, 1):
        _, H, W = conv_padding(config, block, H, W)
        C = block.out_channels
        plan.append((f"conv{n}", (C, H, W)))
        if config.residual:
            plan.append((f"res{n}", (C, H, W)))
        if block.pool != (1, 1):
            H, W = -(-H // block.pool[0]), -(-W // block.pool[1])
            plan.append((f"pool{n}", (C, H, W)))
    plan.append(("height_avg", (C, 1, W)))
    return plan


def sequence_length(config: EncoderConfig, width: int) -> int:
    return shape_plan(config, width)[-1][1][2]


class Encoder(Module):
    """Trainable CNN backbone; an optional ``rectifier`` image transform runs first."""

    def __init__(self, config: EncoderConfig, rng, prefix: str = "encoder", rectifier=None):
        super().__init__(prefix, rng)
        self.config = config
        self.rectifier = rectifier
        cin = config.in_channels
        for n, block in enumerate(config.blocks, 1):
            kh, kw = block.kernel
            self.uniform(f"conv{n}.weight", (block.out_channels, cin, kh, kw), cin * kh * kw, RELU_GAIN)
            self.zeros(f"conv{n}.bias", (block.out_channels,))
            if config.residual:
                c = block.out_channels
                self.uniform(f"res{n}.weight", (c, c, 3, 3), c * 9, RELU_GAIN)
                self.zeros(f"res{n}.bias", (c,))
            cin = block.out_channels

    @property
    def feature_dim(self) -> int:
        return self.config.feature_dim

    def feature_maps(self, images: Tensor) -> list[tuple[str, Tensor]]:
        """Run every layer, returning the named intermediate maps."""
        cfg = self.config
        x = images
        if x.ndim == 3:
            x = tn.reshape(x, (x.shape[0], 1) + x.shape[1:])
        if x.shape[1] != cfg.in_channels or x.shape[2] != cfg.height:
            raise ContractError(
                f"expected images with {cfg.in_channels} channel(s) of height {cfg.height}, got {x.shape[1:]}"
            )
        if self.rectifier is not None:
            x = self.rectifier(x)
        maps = [("input", x)]
        for n, block in enumerate(cfg.blocks, 1):
            pad, _, _ = conv_padding(cfg, block, x.shape[2], x.shape[3])
            x = tn.relu(tn.conv2d(x, self[f"conv{n}.weight"], self[f"conv{n}.bias"], block.stride, pad))
            maps.append((f"conv{n}", x))
            if cfg.residual:
                rpad, _, _ = conv_padding(cfg, ConvBlock(block.out_channels), x.shape[2], x.shape[3])
                y = tn.conv2d(x, self[f"res{n}.weight"], self[f"res{n}.bias"], (1, 1), rpad)
                x = tn.relu(tn.add(x, y))
                maps.append((f"res{n}", x))
            if block.pool != (1, 1):
                x = tn.maxpool2d(x, block.pool)
                maps.append((f"pool{n}", x))
        x = tn.avgpool2d(x, (x.shape[2], 1))
        maps.append(("height_avg", x))
        return maps

    def __call__(self, images) -> Tensor:
        """(B, H, W) or (B, 1, H, W) images -> (B, T, C) feature sequence."""
        if not isinstance(images, Tensor):
            images = Tensor(np.asarray(images, dtype=np.float64))
        x = self.feature_maps(images)[-1][1]
        B, C, _, T = x.shape
        return tn.transpose2d(tn.reshape(x, (B, C, T)))
