"""Text-embedding providers: HTTP service, on-disk cache, deterministic stub.

Every backend maps a piece of text to a fixed-dimension float32 vector.
Results are content-addressed by SHA-256 of the exact UTF-8 text, so changing
a template version changes the key and naturally invalidates old entries.
"""

from __future__ import annotations

import hashlib
import os
import struct
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import requests

from .errors import (
    CacheCorrupt,
    CacheMiss,
    ConfigError,
    DimMismatch,
    ProtocolError,
    ServiceUnavailable,
)

CACHE_MAGIC = b"PLMEMB01"
STUB_SALT = "plm-stub-v1"
KEY_BYTES = 32

# Defaults only; an existing cache file or a live service response wins.
DEFAULT_MODEL_DIMS = {
    "bert-base-uncased": 768,
    "distilbert-base-uncased": 768,
    "roberta-base": 768,
    "roberta-large": 1024,
}
STUB_DEFAULT_DIM = 768

BACKENDS = ("service", "file", "stub")
POOLINGS = ("mean", "cls")


def content_key(text: str) -> bytes:
    return hashlib.sha256(text.encode("utf-8")).digest()


@dataclass(frozen=True)
class EmbeddingVector:
    model_id: str
    dim: int
    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float32)
        if arr.ndim != 1 or arr.shape[0] != self.dim:
            raise DimMismatch(f"vector length {arr.shape} != dim {self.dim}")
        if not np.all(np.isfinite(arr)):
            raise DimMismatch("vector contains non-finite values")
        object.__setattr__(self, "values", arr)


@dataclass
class ProviderConfig:
    backend: str = "stub"
    model_id: str = "stub"
    pooling: str = "mean"
    endpoint: Optional[str] = None
    cache_path: Optional[str] = None
    dim: Optional[int] = None
    timeout: float = 30.0
    retries: int = 3
    backoff: float = 0.5
    batch_size: int = 64

    def __post_init__(self) -> None:
        if self.backend not in BACKENDS:
            raise ConfigError(f"unknown backend {self.backend!r}, expected one of {BACKENDS}")
        if self.pooling not in POOLINGS:
            raise ConfigError(f"unknown pooling {self.pooling!r}, expected one of {POOLINGS}")
        if self.backend == "service" and not self.endpoint:
            raise ConfigError("service backend requires an endpoint URL")
        if self.backend == "file" and not self.cache_path:
            raise ConfigError("file backend requires a cache path")
        if self.dim is not None and self.dim <= 0:
            raise ConfigError("dim must be positive")


def stub_embed(text: str, dim: int, salt: str = STUB_SALT) -> np.ndarray:
    """Deterministic pseudo-embedding: SHA-256(salt + text) seeds a PCG64
    stream that emits dim uniforms in [-1, 1]. Pure function, platform-stable."""
    digest = hashlib.sha256((salt + text).encode("utf-8")).digest()
    rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest, "big")))
    return rng.uniform(-1.0, 1.0, size=dim).astype(np.float32)


# -- binary cache file --------------------------------------------------------
#
# Layout, little-endian:
#   magic            8 bytes  "PLMEMB01"
#   model_id length  u16
#   model_id         utf-8 bytes
#   dim              u32
#   count            u64      advisory; readers recount from the records
#   records          count x (32-byte key, dim x f32)
#
# The count field is patched in place after each append so a cleanly closed
# file satisfies count == record count, but readers never trust it: they parse
# records to EOF and drop a partial tail, which makes truncated files readable.

_MID_LEN = struct.Struct("<H")
_DIM_COUNT = struct.Struct("<IQ")


def read_cache_records(blob: bytes) -> tuple[str, int, list[tuple[bytes, np.ndarray]]]:
    """Parse a cache file image. Returns (model_id, dim, records). Tolerates a
    partial trailing record; rejects bad magic or an unreadable header."""
    if len(blob) < 8 or blob[:8] != CACHE_MAGIC:
        raise CacheCorrupt("bad cache magic")
    off = 8
    if len(blob) < off + _MID_LEN.size:
        raise CacheCorrupt("truncated cache header")
    (mid_len,) = _MID_LEN.unpack_from(blob, off)
    off += _MID_LEN.size
    if len(blob) < off + mid_len + _DIM_COUNT.size:
        raise CacheCorrupt("truncated cache header")
    model_id = blob[off : off + mid_len].decode("utf-8")
    off += mid_len
    dim, _count = _DIM_COUNT.unpack_from(blob, off)
    off += _DIM_COUNT.size
    if dim <= 0:
        raise CacheCorrupt(f"cache header dim {dim} not positive")
    rec_size = KEY_BYTES + 4 * dim
    records: list[tuple[bytes, np.ndarray]] = []
    while off + rec_size <= len(blob):
        key = blob[off : off + KEY_BYTES]
        vec = np.frombuffer(blob, dtype="<f4", count=dim, offset=off + KEY_BYTES)
        records.append((key, vec.astype(np.float32, copy=True)))
        off += rec_size
    return model_id, dim, records


class EmbeddingCache:
    """Append-only content-addressed vector store over a single binary file."""

    def __init__(self, path: str | Path, model_id: str, dim: Optional[int] = None) -> None:
        self.path = Path(path)
        self.model_id = model_id
        self._lock = threading.Lock()
        self._index: dict[bytes, np.ndarray] = {}
        if self.path.exists() and self.path.stat().st_size > 0:
            file_model, file_dim, records = read_cache_records(self.path.read_bytes())
            if file_model != model_id:
                raise DimMismatch(
                    f"cache {self.path} holds model {file_model!r}, expected {model_id!r}"
                )
            if dim is not None and file_dim != dim:
                raise DimMismatch(f"cache {self.path} has dim {file_dim}, expected {dim}")
            self.dim = file_dim
            self._index = dict(records)
        else:
            if dim is None:
                raise ConfigError("creating a new cache requires an explicit dim")
            self.dim = int(dim)
            self._write_header()
        self._count_offset = 8 + _MID_LEN.size + len(model_id.encode("utf-8")) + 4

    def _write_header(self) -> None:
        mid = self.model_id.encode("utf-8")
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "wb") as fh:
            fh.write(CACHE_MAGIC)
            fh.write(_MID_LEN.pack(len(mid)))
            fh.write(mid)
            fh.write(_DIM_COUNT.pack(self.dim, 0))

    def __len__(self) -> int:
        return len(self._index)

    def __contains__(self, text: str) -> bool:
        return content_key(text) in self._index

    def get(self, text: str) -> Optional[np.ndarray]:
        vec = self._index.get(content_key(text))
        return None if vec is None else vec.copy()

    def get_by_key(self, key: bytes) -> Optional[np.ndarray]:
        vec = self._index.get(key)
        return None if vec is None else vec.copy()

    def put(self, text: str, vector: np.ndarray) -> None:
        self.put_many([(text, vector)])

    def put_many(self, pairs: Iterable[tuple[str, np.ndarray]]) -> None:
        """Append new records in one batch, patch the count, fsync once."""
        fresh: list[tuple[bytes, np.ndarray]] = []
        staged: set[bytes] = set()
        for text, vector in pairs:
            arr = np.asarray(vector, dtype="<f4")
            if arr.shape != (self.dim,):
                raise DimMismatch(f"vector shape {arr.shape} != ({self.dim},)")
            key = content_key(text)
            if key in self._index or key in staged:
                continue
            staged.add(key)
            fresh.append((key, arr))
        if not fresh:
            return
        with self._lock:
            with open(self.path, "r+b") as fh:
                fh.seek(0, 2)
                for key, arr in fresh:
                    fh.write(key)
                    fh.write(arr.tobytes())
                for key, arr in fresh:
                    self._index[key] = arr.astype(np.float32)
                fh.seek(self._count_offset)
                fh.write(struct.pack("<Q", len(self._index)))
                fh.flush()
                os.fsync(fh.fileno())


# -- HTTP service client ------------------------------------------------------


def service_embed(
    endpoint: str,
    model_id: str,
    pooling: str,
    texts: Sequence[str],
    timeout: float = 30.0,
    retries: int = 3,
    backoff: float = 0.5,
    session: Optional[requests.Session] = None,
) -> tuple[int, list[np.ndarray]]:
    """One POST per call; the provider handles batching. Retries transient
    failures (connection errors, 5xx) with exponential backoff; 4xx and
    malformed bodies are protocol errors and are not retried."""
    url = endpoint.rstrip("/") + "/embed"
    body = {"model": model_id, "pooling": pooling, "texts": list(texts)}
    http = session or requests
    last_error = "no attempt made"
    for attempt in range(retries + 1):
        try:
            resp = http.post(url, json=body, timeout=timeout)
        except requests.RequestException as exc:
            last_error = str(exc)
        else:
            if resp.status_code >= 500:
                last_error = f"HTTP {resp.status_code}"
            elif resp.status_code >= 400:
                raise ProtocolError(f"HTTP {resp.status_code}: {_error_text(resp)}")
            else:
                return _parse_embed_response(resp, len(texts))
        if attempt < retries:
            time.sleep(backoff * (2.0**attempt))
    raise ServiceUnavailable(f"{url} failed after {retries + 1} attempts: {last_error}")


def _error_text(resp: requests.Response) -> str:
    try:
        return str(resp.json().get("error", resp.text))
    except ValueError:
        return resp.text[:200]


def _parse_embed_response(resp: requests.Response, n_texts: int) -> tuple[int, list[np.ndarray]]:
    try:
        payload = resp.json()
    except ValueError as exc:
        raise ProtocolError(f"response is not JSON: {exc}") from exc
    for key in ("model", "dim", "embeddings"):
        if key not in payload:
            raise ProtocolError(f"response missing field {key!r}")
    dim = payload["dim"]
    rows = payload["embeddings"]
    if not isinstance(dim, int) or dim <= 0:
        raise ProtocolError(f"response dim {dim!r} not a positive integer")
    if len(rows) != n_texts:
        raise ProtocolError(f"response has {len(rows)} embeddings for {n_texts} texts")
    out = []
    for i, row in enumerate(rows):
        arr = np.asarray(row, dtype=np.float32)
        if arr.ndim != 1 or arr.shape[0] != dim:
            raise ProtocolError(f"embedding {i} has length {arr.shape}, header says dim {dim}")
        if not np.all(np.isfinite(arr)):
            raise ProtocolError(f"embedding {i} contains non-finite values")
        out.append(arr)
    return dim, out


# -- provider -----------------------------------------------------------------


class EmbeddingProvider:
    """Front door for text -> vector. Consults the cache first, sends misses
    to the configured backend, and writes fresh vectors back.

    Dim resolution: an explicit config dim is binding. A per-model default is
    only provisional: an existing cache file's dim overrides it, and for the
    service backend the first live response establishes the real value.
    """

    def __init__(self, config: ProviderConfig) -> None:
        self.config = config
        if config.dim is not None:
            self._dim: Optional[int] = config.dim
            self._established = True
        else:
            d = DEFAULT_MODEL_DIMS.get(config.model_id)
            if d is None and config.backend == "stub":
                d = STUB_DEFAULT_DIM
            self._dim = d
            self._established = False
        self.cache: Optional[EmbeddingCache] = None
        if config.cache_path:
            p = Path(config.cache_path)
            if p.exists() and p.stat().st_size > 0:
                expect = self._dim if self._established else None
                self.cache = EmbeddingCache(p, config.model_id, expect)
                self._dim = self.cache.dim
                self._established = True
            elif self._established and self._dim is not None:
                self.cache = EmbeddingCache(p, config.model_id, self._dim)
            # otherwise defer creation until the first response reveals dim

    @property
    def dim(self) -> Optional[int]:
        return self._dim

    def embed_texts(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        if texts is None:
            raise ConfigError("texts must be a sequence, not None")
        if not texts:
            return []
        # Compute each distinct string once; identical inputs share a vector.
        order: list[str] = []
        seen: set[str] = set()
        for t in texts:
            if t not in seen:
                seen.add(t)
                order.append(t)
        found: dict[str, np.ndarray] = {}
        if self.cache is not None:
            for t in order:
                hit = self.cache.get(t)
                if hit is not None:
                    found[t] = hit
        misses = [t for t in order if t not in found]
        if misses:
            fetched = self._fetch(misses)
            found.update(fetched)
            if self.cache is None and self.config.cache_path and self._dim is not None:
                self.cache = EmbeddingCache(self.config.cache_path, self.config.model_id, self._dim)
            if self.cache is not None:
                self.cache.put_many(fetched.items())
        dim = self._dim
        assert dim is not None
        return [EmbeddingVector(self.config.model_id, dim, found[t]) for t in texts]

    def _fetch(self, misses: list[str]) -> dict[str, np.ndarray]:
        backend = self.config.backend
        if backend == "file":
            raise CacheMiss(
                f"{len(misses)} texts not in cache {self.config.cache_path} "
                f"(first: {misses[0][:80]!r}); the file backend cannot compute new vectors"
            )
        if backend == "stub":
            dim = self._dim if self._dim is not None else STUB_DEFAULT_DIM
            self._dim = dim
            self._established = True
            return {t: stub_embed(t, dim) for t in misses}
        out: dict[str, np.ndarray] = {}
        for start in range(0, len(misses), self.config.batch_size):
            chunk = misses[start : start + self.config.batch_size]
            dim, rows = service_embed(
                self.config.endpoint,
                self.config.model_id,
                self.config.pooling,
                chunk,
                timeout=self.config.timeout,
                retries=self.config.retries,
                backoff=self.config.backoff,
            )
            if self._established and dim != self._dim:
                raise DimMismatch(f"service returned dim {dim}, established dim {self._dim}")
            self._dim = dim
            self._established = True
            out.update(zip(chunk, rows))
        return out


def embed_texts(provider: EmbeddingProvider, texts: Sequence[str]) -> list[EmbeddingVector]:
    return provider.embed_texts(texts)
