"""Adam optimizer, Xavier initialization, and binary parameter checkpoints."""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import Parameter
from .errors import CacheCorrupt, ShapeMismatch

CHECKPOINT_MAGIC = b"PLMCKPT1"


class Adam:
    """Bias-corrected Adam. Moments are kept in float64 for stability.

    Update: t += 1; m = b1*m + (1-b1)*g; v = b2*v + (1-b2)*g^2;
    theta -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps).
    """

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: Sequence[Parameter], grads: Sequence[np.ndarray]) -> None:
        if len(params) != len(grads):
            raise ShapeMismatch(f"{len(params)} params vs {len(grads)} grads")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g in zip(params, grads):
            if g.shape != p.data.shape:
                raise ShapeMismatch(f"grad shape {g.shape} != param {p.name} shape {p.data.shape}")
            g64 = g.astype(np.float64, copy=False)
            m = self._m.get(p.name)
            if m is None:
                m = self._m[p.name] = np.zeros(p.data.shape, dtype=np.float64)
            v = self._v.get(p.name)
            if v is None:
                v = self._v[p.name] = np.zeros(p.data.shape, dtype=np.float64)
            m *= self.beta1
            m += (1.0 - self.beta1) * g64
            v *= self.beta2
            v += (1.0 - self.beta2) * (g64 * g64)
            update = self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = (p.data.astype(np.float64) - update).astype(p.data.dtype)


def xavier_uniform_init(shape, fan_in: int, fan_out: int, seed: int, dtype=np.float32) -> np.ndarray:
    """i.i.d. uniform in +-sqrt(6/(fan_in+fan_out)), reproducible per seed."""
    if fan_in <= 0 or fan_out <= 0:
        raise ShapeMismatch(f"fans must be positive, got {fan_in}, {fan_out}")
    bound = float(np.sqrt(6.0 / (fan_in + fan_out)))
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def seed_for(base_seed: int, name: str) -> int:
    """Stable per-parameter seed, independent of construction order."""
    digest = hashlib.sha256(f"{base_seed}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def save_checkpoint(path: str | Path, params: Sequence[Parameter]) -> None:
    """Write parameters as: magic, then per parameter
    (u32 name length, name bytes, u32 rank, u32 dims..., float32 LE payload)."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        for p in params:
            name_b = p.name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<I", p.data.ndim))
            for dim in p.data.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise CacheCorrupt(f"{path}: bad checkpoint magic")
    out: dict[str, np.ndarray] = {}
    pos = 8

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise CacheCorrupt(f"{path}: truncated checkpoint")
        chunk = raw[pos : pos + n]
        pos += n
        return chunk

    while pos < len(raw):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        payload = take(4 * count)
        out[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    return out
