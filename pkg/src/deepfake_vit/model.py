"""Hybrid vision transformer: patch tokens fused with CNN feature tokens,
a class token and a distillation token, and one logit head per token."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .backbone import Backbone, BackboneConfig, extract_features
from .data import PIXEL_MEAN
from .errors import ConfigError, ContractError, ShapeError
from .nn import TOKEN_INIT_STD, EncoderBlock, LayerNorm, Linear, Module, parameter, sequence_pool
from .tensor import Tensor


@dataclass
class PatchConfig:
    height: int = 64
    width: int = 64
    channels: int = 3
    patch_size: int = 8
    embed_dim: int = 64

    def validate(self) -> None:
        if min(self.height, self.width, self.channels, self.patch_size, self.embed_dim) < 1:
            raise ConfigError("patch config values must all be >= 1")
        if self.height % self.patch_size or self.width % self.patch_size:
            raise ConfigError(f"patch size {self.patch_size} does not divide image "
                              f"{self.height}x{self.width}")

    @property
    def grid(self) -> tuple[int, int]:
        return self.height // self.patch_size, self.width // self.patch_size

    @property
    def num_patches(self) -> int:
        gh, gw = self.grid
        return gh * gw

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels


@dataclass
class ModelConfig:
    patch: PatchConfig = field(default_factory=PatchConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    layers: int = 4
    heads: int = 4
    mlp_ratio: int = 4

    def validate(self) -> None:
        self.patch.validate()
        self.backbone.validate()
        E = self.patch.embed_dim
        if self.layers < 1 or self.heads < 1 or self.mlp_ratio < 1:
            raise ConfigError("layers, heads and mlp_ratio must be >= 1")
        if E % self.heads:
            raise ConfigError(f"embed_dim {E} is not divisible by {self.heads} heads")
        if self.backbone.embed_dim != E:
            raise ConfigError(f"backbone embed_dim {self.backbone.embed_dim} != model embed_dim {E}")
        if self.backbone.in_channels != self.patch.channels:
            raise ConfigError(f"backbone in_channels {self.backbone.in_channels} != "
                              f"image channels {self.patch.channels}")
        self.backbone.feature_grid(self.patch.height, self.patch.width)

    @property
    def sequence_length(self) -> int:
        return self.patch.num_patches + 2


@dataclass
class TokenSequence:
    """Encoder input: ``[class; fused tokens; distillation] + pos_embedding``."""
    tokens: Tensor
    pos_embedding: Tensor

    @property
    def num_fused(self) -> int:
        return self.tokens.shape[1] - 2


@dataclass
class HeadOutputs:
    class_logit: Tensor
    distill_logit: Tensor


class HybridViT(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | None = None):
        cfg.validate()
        self.cfg = cfg
        E, N = cfg.patch.embed_dim, cfg.patch.num_patches
        self.patch_embedding = Linear(cfg.patch.patch_dim, E, rng)
        self.backbone = Backbone(cfg.backbone, rng)
        normal = (lambda shape: rng.standard_normal(shape) * TOKEN_INIT_STD) if rng is not None \
            else np.zeros
        self.class_token = parameter(normal(E))
        self.distill_token = parameter(normal(E))
        self.pos_embedding = parameter(normal((N + 2, E)))
        self.blocks = [EncoderBlock(E, cfg.heads, cfg.mlp_ratio * E, rng) for _ in range(cfg.layers)]
        self.norm = LayerNorm(E)
        self.class_head = Linear(E, 1, rng)
        self.distill_head = Linear(E, 1, rng)

    def __call__(self, x: Tensor) -> HeadOutputs:
        return forward(self, x)


def patchify(cfg: PatchConfig, x: Tensor) -> Tensor:
    """``[B, C, H, W]`` -> ``[B, N, P*P*C]``; patches in row-major grid order,
    each flattened as (row, col, channel)."""
    if x.ndim != 4 or x.shape[1:] != (cfg.channels, cfg.height, cfg.width):
        raise ShapeError(f"expected images [B, {cfg.channels}, {cfg.height}, {cfg.width}], got {x.shape}")
    B, P = x.shape[0], cfg.patch_size
    gh, gw = cfg.grid
    x = x.reshape(B, cfg.channels, gh, P, gw, P).transpose(0, 2, 4, 3, 5, 1)
    return x.reshape(B, gh * gw, cfg.patch_dim)


def patch_embed(cfg: PatchConfig, embedding: Linear, x: Tensor) -> Tensor:
    cfg.validate()
    return embedding(patchify(cfg, x))


def assemble_tokens(z_patch: Tensor, z_feat: Tensor | None, class_token: Tensor,
                    distill_token: Tensor, pos_embedding: Tensor) -> TokenSequence:
    """Concatenate patch and CNN tokens, pool N+M back to N, wrap with the
    class (front) and distillation (back) tokens, add positions."""
    B, N, E = z_patch.shape
    if z_feat is not None and (z_feat.ndim != 3 or z_feat.shape[0] != B or z_feat.shape[2] != E):
        raise ShapeError(f"feature tokens {z_feat.shape} do not match patch tokens {z_patch.shape}")
    if class_token.shape != (E,) or distill_token.shape != (E,):
        raise ShapeError(f"special tokens must have shape ({E},)")
    if pos_embedding.shape != (N + 2, E):
        raise ShapeError(f"positional embedding {pos_embedding.shape} != ({N + 2}, {E})")
    fused = z_patch if z_feat is None else sequence_pool(T.concat([z_patch, z_feat], axis=1), N)
    zeros = Tensor(np.zeros((B, 1, E)))
    cls = zeros + class_token.reshape(1, 1, E)
    dist = zeros + distill_token.reshape(1, 1, E)
    tokens = T.concat([cls, fused, dist], axis=1) + pos_embedding
    return TokenSequence(tokens, pos_embedding)


def embed(model: HybridViT, x: Tensor) -> TokenSequence:
    z_patch = patch_embed(model.cfg.patch, model.patch_embedding, x)
    z_feat = extract_features(model.backbone, x)
    return assemble_tokens(z_patch, z_feat, model.class_token, model.distill_token,
                           model.pos_embedding)


def encode(model: HybridViT, tokens: Tensor) -> Tensor:
    """Encoder stack + final LayerNorm; sequence length is preserved."""
    for block in model.blocks:
        tokens = block(tokens)
    return model.norm(tokens)


def read_heads(model: HybridViT, encoded: Tensor) -> HeadOutputs:
    last = encoded.shape[1] - 1
    return HeadOutputs(model.class_head(encoded[:, 0, :]), model.distill_head(encoded[:, last, :]))


def forward(model: HybridViT, x: Tensor) -> HeadOutputs:
    """Images in [0, 1] -> class and distillation logits ``[B, 1]`` each."""
    x = T.as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"forward expects [B, C, H, W] images, got {x.shape}")
    model.cfg.validate()
    seq = embed(model, x - PIXEL_MEAN)
    return read_heads(model, encode(model, seq.tokens))


HEAD_MODES = ("class", "distill")


def predict_probability(model: HybridViT, x, mode: str = "distill", batch_size: int = 64) -> np.ndarray:
    """Fake-probability per image from the selected head (no gradient tracking)."""
    if mode not in HEAD_MODES:
        raise ContractError(f"mode must be one of {HEAD_MODES}, got {mode!r}")
    logits = predict_logits(model, x, batch_size)
    return T.stable_sigmoid(logits[mode])


def predict_logits(model: HybridViT, x, batch_size: int = 64) -> dict[str, np.ndarray]:
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    cls, dist = [], []
    with T.no_grad():
        for lo in range(0, len(data), batch_size):
            out = forward(model, Tensor(data[lo:lo + batch_size]))
            cls.append(out.class_logit.data[:, 0])
            dist.append(out.distill_logit.data[:, 0])
    return {"class": np.concatenate(cls), "distill": np.concatenate(dist)}
