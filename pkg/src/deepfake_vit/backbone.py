"""Small convolutional network used twice: as the student's feature-token
extractor and, with its own weights, as the standalone teacher classifier."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import PIXEL_MEAN
from .errors import ConfigError, ShapeError
from .nn import Conv2d, Linear, Module, adaptive_pool_matrix, conv2d_forward
from .tensor import Tensor


@dataclass
class BackboneConfig:
    stage_channels: list[int] = field(default_factory=lambda: [16, 32, 64, 64])
    strides: list[int] = field(default_factory=lambda: [2, 2, 2, 2])
    feature_tokens: int = 4
    embed_dim: int = 64
    in_channels: int = 3
    kernel_size: int = 3

    def validate(self) -> None:
        if not self.stage_channels or len(self.stage_channels) != len(self.strides):
            raise ConfigError("backbone needs one stride per stage and at least one stage")
        if any(c < 1 for c in self.stage_channels) or any(s < 1 for s in self.strides):
            raise ConfigError("backbone channels and strides must be >= 1")
        if self.feature_tokens < 1:
            raise ConfigError(f"feature_tokens must be >= 1, got {self.feature_tokens}")
        if self.embed_dim < 1 or self.in_channels < 1:
            raise ConfigError("backbone embed_dim and in_channels must be >= 1")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd, got {self.kernel_size}")

    @property
    def total_stride(self) -> int:
        return math.prod(self.strides)

    def feature_grid(self, height: int, width: int) -> tuple[int, int]:
        s = self.total_stride
        if height % s or width % s:
            raise ConfigError(f"image {height}x{width} is not divisible by the backbone's "
                              f"cumulative stride {s}")
        return height // s, width // s


class Backbone(Module):
    """Conv stages ("same"-padded, GELU) followed by token pooling and a
    per-token projection to the embedding width."""

    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator | None = None,
                 with_projection: bool = True):
        cfg.validate()
        self.cfg = cfg
        chans = [cfg.in_channels, *cfg.stage_channels]
        self.stages = [Conv2d(chans[i], chans[i + 1], cfg.kernel_size, cfg.strides[i], "same", rng)
                       for i in range(len(cfg.stage_channels))]
        self.projection = Linear(cfg.stage_channels[-1], cfg.embed_dim, rng) if with_projection else None

    def feature_map(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise ShapeError(f"backbone expects [B, {self.cfg.in_channels}, H, W], got {x.shape}")
        self.cfg.feature_grid(x.shape[2], x.shape[3])
        for conv in self.stages:
            x = T.gelu(conv2d_forward(conv, x))
        return x

    def __call__(self, x: Tensor) -> Tensor:
        return extract_features(self, x)


def extract_features(backbone: Backbone, x: Tensor) -> Tensor:
    """``x[B, C, H, W]`` -> feature tokens ``[B, M, E]``.

    Final-map cells are taken in row-major order and adaptively averaged
    into M groups before projection.
    """
    if backbone.projection is None:
        raise ConfigError("this backbone was built without a token projection")
    fmap = backbone.feature_map(x)
    B, ch, h, w = fmap.shape
    cells = fmap.reshape(B, ch, h * w)                                # B, ch, cells
    pooled = T.matmul(cells, Tensor(adaptive_pool_matrix(h * w, backbone.cfg.feature_tokens).T))
    return backbone.projection(pooled.transpose(0, 2, 1))             # B, M, E


class TeacherHead(Module):
    def __init__(self, channels: int, rng: np.random.Generator | None = None):
        self.classifier = Linear(channels, 1, rng)

    def __call__(self, fmap: Tensor) -> Tensor:
        return self.classifier(fmap.mean(axis=(2, 3)))


class Teacher(Module):
    """Backbone conv stages + global average pooling + one logit."""

    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator | None = None):
        self.backbone = Backbone(cfg, rng, with_projection=False)
        self.head = TeacherHead(cfg.stage_channels[-1], rng)

    def __call__(self, x: Tensor) -> Tensor:
        return teacher_logit(self, x)


def teacher_logit(teacher: Teacher, x: Tensor) -> Tensor:
    """One real-valued logit per image in [0, 1], shape ``[B, 1]``."""
    return teacher.head(teacher.backbone.feature_map(T.as_tensor(x) - PIXEL_MEAN))
