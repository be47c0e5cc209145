"""Layers built on :mod:`deepfake_vit.tensor`.

Every layer is a :class:`Module`: a plain container whose parameters are
found by walking attributes in assignment order, which gives a stable
naming used by the optimizer and the checkpoint format.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .tensor import Tensor

LN_EPS = 1e-5
TOKEN_INIT_STD = 0.02


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class Module:
    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Linear(Module):
    """``y = x @ weight + bias`` applied to the last axis."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator | None = None):
        if in_features < 1 or out_features < 1:
            raise ConfigError(f"linear layer dims must be >= 1, got {in_features}->{out_features}")
        self.in_features = in_features
        self.out_features = out_features
        w = he_normal(rng, (in_features, out_features), in_features) if rng is not None \
            else np.zeros((in_features, out_features))
        self.weight = parameter(w)
        self.bias = parameter(np.zeros(out_features))

    def __call__(self, x: Tensor) -> Tensor:
        return linear_forward(self, x)


def linear_forward(layer: Linear, x: Tensor) -> Tensor:
    if x.shape[-1] != layer.in_features:
        raise ShapeError(f"linear: input last dim {x.shape[-1]} != in_features {layer.in_features}")
    if x.ndim == 2:
        return T.matmul(x, layer.weight) + layer.bias
    lead = x.shape[:-1]
    flat = x.reshape(-1, layer.in_features)
    y = T.matmul(flat, layer.weight) + layer.bias
    return y.reshape(*lead, layer.out_features)


class Conv2d(Module):
    """2-D cross-correlation layer.

    ``padding`` is a non-negative int or ``"same"``, which pads so the output
    extent is ceil(n / stride), putting any odd pixel of padding after.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3,
                 stride: int = 1, padding: int | str = 0, rng: np.random.Generator | None = None):
        if padding != "same" and (not isinstance(padding, int) or padding < 0):
            raise ConfigError(f"padding must be a non-negative int or 'same', got {padding!r}")
        if kernel_size < 1 or stride < 1:
            raise ConfigError(f"bad conv geometry: kernel={kernel_size} stride={stride} padding={padding}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        fan_in = in_channels * kernel_size * kernel_size
        self.kernels = parameter(he_normal(rng, shape, fan_in) if rng is not None else np.zeros(shape))
        self.bias = parameter(np.zeros(out_channels))

    def pads(self, h: int, w: int) -> tuple[tuple[int, int], tuple[int, int]]:
        if self.padding != "same":
            p = self.padding
            return (p, p), (p, p)
        k, s = self.kernel_size, self.stride

        def one(n):
            total = max((-(-n // s) - 1) * s + k - n, 0)
            return total // 2, total - total // 2

        return one(h), one(w)

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        k, s = self.kernel_size, self.stride
        (pt, pb), (pl, pr) = self.pads(h, w)
        hp, wp = h + pt + pb, w + pl + pr
        if (hp - k) % s or (wp - k) % s or hp < k or wp < k:
            raise ConfigError(f"conv: input {h}x{w} with kernel {k}, stride {s}, padding "
                              f"{self.padding} gives a non-integral output size")
        return (hp - k) // s + 1, (wp - k) // s + 1

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d_forward(self, x)


def conv2d_forward(layer: Conv2d, x: Tensor) -> Tensor:
    """Cross-correlation of ``x[B, C, H, W]`` -> ``[B, out, H', W']``."""
    if x.ndim != 4 or x.shape[1] != layer.in_channels:
        raise ShapeError(f"conv2d: expected [B, {layer.in_channels}, H, W], got {x.shape}")
    B, _, H, W = x.shape
    ho, wo = layer.output_size(H, W)
    k = layer.kernel_size
    cols = T.im2col(x, k, k, layer.stride, layer.pads(H, W))            # B, ho*wo, C*k*k
    wmat = layer.kernels.reshape(layer.out_channels, -1).transpose(1, 0)
    y = T.matmul(cols, wmat) + layer.bias                             # B, ho*wo, out
    return y.transpose(0, 2, 1).reshape(B, layer.out_channels, ho, wo)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.dim = dim
        self.gain = parameter(np.ones(dim))
        self.shift = parameter(np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return layernorm_forward(x, self.gain, self.shift)


def layernorm_forward(x: Tensor, gain: Tensor, shift: Tensor, eps: float = LN_EPS) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered * T.power(var + eps, -0.5) * gain + shift


class MultiHeadAttention(Module):
    def __init__(self, dim: int, num_heads: int, rng: np.random.Generator | None = None):
        if num_heads < 1 or dim % num_heads:
            raise ConfigError(f"embedding dim {dim} is not divisible by {num_heads} heads")
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.query = Linear(dim, dim, rng)
        self.key = Linear(dim, dim, rng)
        self.value = Linear(dim, dim, rng)
        self.output = Linear(dim, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return mhsa_forward(self, x)


def mhsa_forward(attn: MultiHeadAttention, x: Tensor, return_weights: bool = False):
    """Scaled dot-product self-attention per head, concatenated and projected.

    With ``return_weights`` also returns the attention weights as a
    ``[B, heads, T, T]`` tensor.
    """
    B, n, D = x.shape
    h, hd = attn.num_heads, attn.head_dim
    if D != h * hd:
        raise ConfigError(f"mhsa: input dim {D} != heads {h} x head_dim {hd}")

    def split(t: Tensor) -> Tensor:
        return t.reshape(B, n, h, hd).transpose(0, 2, 1, 3)

    q, k, v = split(attn.query(x)), split(attn.key(x)), split(attn.value(x))
    scores = T.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(hd))
    weights = T.softmax(scores, axis=-1)
    mixed = T.matmul(weights, v).transpose(0, 2, 1, 3).reshape(B, n, D)
    out = attn.output(mixed)
    return (out, weights) if return_weights else out


class MLP(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator | None = None):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


class EncoderBlock(Module):
    """Pre-norm transformer block: x + MSA(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, dim: int, num_heads: int, mlp_hidden: int, rng: np.random.Generator | None = None):
        self.norm1 = LayerNorm(dim)
        self.attention = MultiHeadAttention(dim, num_heads, rng)
        self.norm2 = LayerNorm(dim)
        self.mlp = MLP(dim, mlp_hidden, rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attention(self.norm1(x))
        return x + self.mlp(self.norm2(x))


def pool_windows(length: int, target: int) -> list[tuple[int, int]]:
    """Half-open windows of adaptive average pooling from ``length`` to ``target``."""
    if not 1 <= target <= length:
        raise ContractError(f"cannot pool a sequence of {length} down to {target}")
    return [((i * length) // target, ((i + 1) * length) // target) for i in range(target)]


def pool_matrix(length: int, target: int) -> np.ndarray:
    mat = np.zeros((target, length))
    for i, (lo, hi) in enumerate(pool_windows(length, target)):
        mat[i, lo:hi] = 1.0 / (hi - lo)
    return mat


def adaptive_pool_matrix(length: int, target: int) -> np.ndarray:
    """Pooling windows [floor(i*L/n), ceil((i+1)*L/n)); never empty, so
    ``target`` may exceed ``length`` (cells are then shared)."""
    mat = np.zeros((target, length))
    for i in range(target):
        lo, hi = (i * length) // target, -((-(i + 1) * length) // target)
        mat[i, lo:hi] = 1.0 / (hi - lo)
    return mat


def sequence_pool(x: Tensor, target_len: int) -> Tensor:
    """Adaptive average pooling along axis 1 of ``x[B, L, D]`` down to ``target_len``."""
    if x.ndim != 3:
        raise ShapeError(f"sequence_pool expects [B, L, D], got {x.shape}")
    length = x.shape[1]
    if length == target_len:
        return x
    return T.matmul(Tensor(pool_matrix(length, target_len)), x)
