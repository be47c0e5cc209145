"""Sectioned binary checkpoint format.

Layout (all integers little-endian)::

    magic       8 bytes   b"DFVITCKP"
    version     u32
    kind        u16 length + utf-8        ("teacher" or "student")
    config      u32 length + utf-8        config snapshot text
    meta        u32 length + utf-8        "key = value" lines
    n_sections  u32
    per section:
        name    u16 length + utf-8
        ndim    u32, then ndim x u32 extents
        payload prod(extents) x f64 (little-endian)
    checksum    32 bytes  sha256 of every preceding byte

The encoding is a pure function of the contents, so save -> load -> save
reproduces the file byte for byte.
"""

from __future__ import annotations

import hashlib
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError
from .nn import Module

MAGIC = b"DFVITCKP"
VERSION = 1
_F64 = np.dtype("<f8")


@dataclass
class Checkpoint:
    kind: str
    config_text: str
    sections: dict[str, np.ndarray]
    meta: dict[str, str] = field(default_factory=dict)
    version: int = VERSION


def from_module(module: Module, kind: str, config_text: str, meta: dict | None = None) -> Checkpoint:
    sections = {name: p.data.copy() for name, p in module.named_parameters()}
    return Checkpoint(kind, config_text, sections, {k: str(v) for k, v in (meta or {}).items()})


def _text(s: str, width: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<" + width, len(raw)) + raw


def encode(ckpt: Checkpoint) -> bytes:
    meta = "".join(f"{k} = {v}\n" for k, v in ckpt.meta.items())
    parts = [MAGIC, struct.pack("<I", ckpt.version), _text(ckpt.kind, "H"),
             _text(ckpt.config_text, "I"), _text(meta, "I"), struct.pack("<I", len(ckpt.sections))]
    for name, arr in ckpt.sections.items():
        arr = np.asarray(arr, dtype=np.float64)
        parts.append(_text(name, "H"))
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.astype(_F64).tobytes(order="C"))
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"checkpoint truncated while reading {what}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt), what))

    def text(self, width: str, what: str) -> str:
        (n,) = self.unpack(width, what)
        return self.take(n, what).decode("utf-8")


def decode(buf: bytes) -> Checkpoint:
    if len(buf) < len(MAGIC) + 32 or buf[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    body, digest = buf[:-32], buf[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch (file corrupted)")
    r = _Reader(body)
    r.take(len(MAGIC), "magic")
    (version,) = r.unpack("I", "version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    kind = r.text("H", "kind")
    config_text = r.text("I", "config")
    meta = {}
    for line in r.text("I", "meta").splitlines():
        key, _, value = line.partition(" = ")
        meta[key] = value
    (count,) = r.unpack("I", "section count")
    sections = {}
    for _ in range(count):
        name = r.text("H", "section name")
        (ndim,) = r.unpack("I", f"section {name}")
        shape = r.unpack(f"{ndim}I", f"section {name}")
        n = math.prod(shape)
        arr = np.frombuffer(r.take(8 * n, f"section {name}"), dtype=_F64)
        sections[name] = arr.astype(np.float64).reshape(shape)
    if r.pos != len(body):
        raise CheckpointError("trailing bytes after the last section")
    return Checkpoint(kind, config_text, sections, meta, version)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    data = encode(ckpt)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            return decode(fh.read())
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None


def apply_to(ckpt: Checkpoint, module: Module) -> None:
    """Copy sections into ``module``; every parameter must match by name and shape."""
    named = dict(module.named_parameters())
    for name, p in named.items():
        if name not in ckpt.sections:
            raise CheckpointError(f"section {name!r} missing from checkpoint")
        if ckpt.sections[name].shape != p.shape:
            raise CheckpointError(f"section {name!r}: checkpoint shape {ckpt.sections[name].shape} "
                                  f"!= model shape {p.shape}")
    extra = [n for n in ckpt.sections if n not in named]
    if extra:
        raise CheckpointError(f"section {extra[0]!r} has no matching model parameter")
    for name, p in named.items():
        p.data = ckpt.sections[name].copy()
