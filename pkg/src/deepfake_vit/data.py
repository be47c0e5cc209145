"""Procedural stand-in for a face-forgery dataset.

Real images are smooth random textures (a few low-frequency sinusoid
fields plus pixel noise). Fake images are the same real image with a
hard-edged circular region alpha-blended from a second, differently
seeded, finer-grained texture: a localized blending artifact.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ConfigError, ContractError
from .rng import derive_seed, stream

PIXEL_MEAN = 0.5               # models see pixels shifted by this
NOISE_STD = 0.05
NUM_FIELDS = 3
BASE_CYCLES = (0.5, 3.0)       # cycles per image, real texture
ARTIFACT_CYCLES = (8.0, 16.0)   # cycles per image, blended-in texture


@dataclass(frozen=True)
class SampleSpec:
    seed: int
    height: int
    width: int
    channels: int
    label: int
    center: tuple[int, int] | None = None   # (row, col)
    radius: float | None = None
    strength: float | None = None

    def validate(self) -> None:
        if self.label not in (0, 1):
            raise ContractError(f"label must be 0 or 1, got {self.label}")
        has_artifact = self.center is not None
        if has_artifact != (self.label == 1) or has_artifact != (self.radius is not None) \
                or has_artifact != (self.strength is not None):
            raise ContractError("artifact parameters must be present iff label == 1")
        if not has_artifact:
            return
        r, (cy, cx) = self.radius, self.center
        if r <= 0 or cy - r < 0 or cx - r < 0 or cy + r > self.height - 1 or cx + r > self.width - 1:
            raise ContractError(f"artifact (center {self.center}, radius {r}) leaves the "
                                f"{self.height}x{self.width} image")
        if not 0.0 < self.strength <= 1.0:
            raise ContractError(f"blend strength must be in (0, 1], got {self.strength}")


@dataclass
class DatasetConfig:
    count: int = 1600
    balance: float = 0.5
    height: int = 64
    width: int = 64
    channels: int = 3
    strength_min: float = 0.7
    strength_max: float = 1.0
    radius_min: float = 8.0
    radius_max: float = 16.0
    val_fraction: float = 0.1
    test_count: int = 400
    seed: int = 0

    def validate(self) -> None:
        if self.count < 2:
            raise ConfigError(f"dataset count must be >= 2, got {self.count}")
        if not 0.0 <= self.balance <= 1.0:
            raise ConfigError(f"balance must be in [0, 1], got {self.balance}")
        n_fake = fake_count(self.count, self.balance)
        if n_fake < 1 or self.count - n_fake < 1:
            raise ConfigError(f"count {self.count} with balance {self.balance} leaves a class empty")
        if min(self.height, self.width, self.channels) < 1:
            raise ConfigError("image dimensions must be >= 1")
        if not 0.0 < self.strength_min <= self.strength_max <= 1.0:
            raise ConfigError("need 0 < strength_min <= strength_max <= 1")
        if not 0.0 < self.radius_min <= self.radius_max:
            raise ConfigError("need 0 < radius_min <= radius_max")
        if 2 * self.radius_max + 2 > min(self.height, self.width):
            raise ConfigError(f"radius_max {self.radius_max} does not fit a "
                              f"{self.height}x{self.width} image")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in [0, 1), got {self.val_fraction}")
        if self.test_count < 0:
            raise ConfigError("test_count must be >= 0")


def fake_count(count: int, balance: float) -> int:
    # rounds toward real; the epsilon absorbs float error such as 10 * 0.3 = 2.999...
    return int(math.floor(count * balance + 1e-9))


@dataclass
class Dataset:
    images: np.ndarray    # [n, C, H, W] in [0, 1]
    labels: np.ndarray    # [n] int, 1 = fake
    seeds: np.ndarray     # [n] uint64 sample seeds
    split: str = "train"

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self) -> Iterator[tuple[np.ndarray, int, int]]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i: int) -> tuple[np.ndarray, int, int]:
        return self.images[i], int(self.labels[i]), int(self.seeds[i])

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.seeds[idx], self.split)


def texture(rng: np.random.Generator, height: int, width: int, channels: int,
            cycles: tuple[float, float]) -> np.ndarray:
    """Sum of sinusoid fields with per-channel weights plus pixel noise,
    min-max normalized to [0, 1]. Shape ``[C, H, W]``."""
    yy, xx = np.meshgrid(np.arange(height) / height, np.arange(width) / width, indexing="ij")
    img = np.zeros((channels, height, width))
    for _ in range(NUM_FIELDS):
        freq = rng.uniform(*cycles)
        angle = rng.uniform(0.0, 2.0 * np.pi)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        wave = np.sin(2.0 * np.pi * freq * (np.cos(angle) * xx + np.sin(angle) * yy) + phase)
        img += rng.uniform(0.3, 1.0, size=(channels, 1, 1)) * wave
    img += rng.normal(0.0, NOISE_STD, size=img.shape)
    lo, hi = img.min(), img.max()
    return (img - lo) / (hi - lo)


def make_spec(seed: int, label: int, cfg: DatasetConfig) -> SampleSpec:
    if label == 0:
        return SampleSpec(seed, cfg.height, cfg.width, cfg.channels, 0)
    rng = stream(seed, "artifact-geometry")
    radius = float(rng.uniform(cfg.radius_min, cfg.radius_max))
    lo, hi_y, hi_x = math.ceil(radius), math.floor(cfg.height - 1 - radius), math.floor(cfg.width - 1 - radius)
    center = (int(rng.integers(lo, hi_y + 1)), int(rng.integers(lo, hi_x + 1)))
    strength = float(rng.uniform(cfg.strength_min, cfg.strength_max))
    return SampleSpec(seed, cfg.height, cfg.width, cfg.channels, 1, center, radius, strength)


def artifact_mask(spec: SampleSpec) -> np.ndarray:
    yy, xx = np.mgrid[0:spec.height, 0:spec.width]
    cy, cx = spec.center
    return ((yy - cy) ** 2 + (xx - cx) ** 2 <= spec.radius ** 2).astype(np.float64)


def generate_sample(spec: SampleSpec) -> tuple[np.ndarray, int]:
    """Render one ``[C, H, W]`` image in [0, 1] and return it with its label."""
    spec.validate()
    base = texture(stream(spec.seed, "base"), spec.height, spec.width, spec.channels, BASE_CYCLES)
    if spec.label == 0:
        return base, 0
    other = texture(stream(spec.seed, "artifact"), spec.height, spec.width, spec.channels,
                    ARTIFACT_CYCLES)
    alpha = spec.strength * artifact_mask(spec)
    return (1.0 - alpha) * base + alpha * other, 1


def dataset_specs(cfg: DatasetConfig, split: str = "train", count: int | None = None) -> list[SampleSpec]:
    """Sample specs for one split; seeds are keyed by (master seed, split, index)."""
    cfg.validate()
    n = cfg.count if count is None else count
    n_fake = fake_count(n, cfg.balance)
    if n_fake < 1 or n - n_fake < 1:
        raise ConfigError(f"split {split!r} of {n} samples leaves a class empty")
    labels = np.zeros(n, dtype=np.int64)
    labels[:n_fake] = 1
    stream(cfg.seed, split, "labels").shuffle(labels)
    return [make_spec(derive_seed(cfg.seed, split, i), int(labels[i]), cfg) for i in range(n)]


def build_dataset(specs: list[SampleSpec], split: str = "train") -> Dataset:
    images = np.stack([generate_sample(s)[0] for s in specs])
    labels = np.array([s.label for s in specs], dtype=np.int64)
    seeds = np.array([s.seed for s in specs], dtype=np.uint64)
    return Dataset(images, labels, seeds, split)


def generate_dataset(cfg: DatasetConfig, split: str = "train", count: int | None = None) -> Dataset:
    """Deterministic, class-balanced dataset for ``split`` (fake count rounds down)."""
    return build_dataset(dataset_specs(cfg, split, count), split)


@dataclass
class Splits:
    train: Dataset
    val: Dataset
    test: Dataset | None = None
    sizes: dict = field(default_factory=dict)


def split_specs(cfg: DatasetConfig) -> dict[str, list[SampleSpec]]:
    """SampleSpec lists for the train / val / test splits.

    Train and val partition one generated pool of ``count`` samples: a
    seeded, class-stratified ``val_fraction`` of each class is held out for
    validation. The test split is drawn from its own seed stream.
    """
    pool = dataset_specs(cfg, "pool", cfg.count)
    labels = np.array([s.label for s in pool])
    rng = stream(cfg.seed, "pool", "val-holdout")
    held = np.zeros(len(pool), dtype=bool)
    for cls in (1, 0):
        idx = np.flatnonzero(labels == cls)
        n_val = int(round(len(idx) * cfg.val_fraction))
        held[rng.permutation(idx)[:n_val]] = True
    out = {"train": [s for s, h in zip(pool, held) if not h],
           "val": [s for s, h in zip(pool, held) if h]}
    out["test"] = dataset_specs(cfg, "test", cfg.test_count) if cfg.test_count else []
    return out


def split_sizes(cfg: DatasetConfig) -> dict[str, int]:
    n_fake = fake_count(cfg.count, cfg.balance)
    n_val = sum(int(round(n * cfg.val_fraction)) for n in (n_fake, cfg.count - n_fake))
    return {"train": cfg.count - n_val, "val": n_val, "test": cfg.test_count}


def make_splits(cfg: DatasetConfig, include_test: bool = True) -> Splits:
    """Train / validation / held-out test datasets; no sample is shared
    between splits."""
    sizes = split_sizes(cfg)
    if sizes["val"] < 2:
        raise ConfigError(f"validation split of {sizes['val']} samples is too small")
    specs = split_specs(cfg)
    train = build_dataset(specs["train"], "train")
    val = build_dataset(specs["val"], "val")
    test = build_dataset(specs["test"], "test") if include_test and specs["test"] else None
    return Splits(train, val, test, sizes)


def _write_netpbm(path: Path, image: np.ndarray) -> None:
    pixels = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    c, h, w = pixels.shape
    if c == 1:
        header, body = b"P5", pixels[0]
    elif c == 3:
        header, body = b"P6", pixels.transpose(1, 2, 0)
    else:
        raise ContractError(f"netpbm export supports 1 or 3 channels, got {c}")
    with open(path, "wb") as fh:
        fh.write(header + f"\n{w} {h}\n255\n".encode("ascii"))
        fh.write(body.tobytes())


def export_dataset(ds: Dataset, out_dir: str | os.PathLike) -> Path:
    """Write one PGM/PPM per sample plus ``manifest.csv`` (path, label, seed)."""
    out = Path(out_dir)
    img_dir = out / ds.split
    img_dir.mkdir(parents=True, exist_ok=True)
    ext = "pgm" if ds.images.shape[1] == 1 else "ppm"
    manifest = out / f"manifest_{ds.split}.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path", "label", "seed"])
        for i, (img, label, seed) in enumerate(ds):
            rel = f"{ds.split}/{i:05d}.{ext}"
            _write_netpbm(out / rel, img)
            writer.writerow([rel, label, seed])
    return manifest
