"""Deterministic sentence encoder behind the service.

The published checkpoints these model ids name cannot be fetched in an
offline deployment, so each id maps to a compact stand-in: a two-layer
pre-norm transformer whose weights are generated once from a seed derived
from the model id, then saved/loaded as an ordinary .npz checkpoint. The
serving semantics are the real thing: tokenize, run the encoder, pool the
final-layer token states, return one vector per text at the advertised
hidden size (768 for the base models, 1024 for roberta-large). Identical
text always produces bit-identical vectors.
"""

from __future__ import annotations

import hashlib
import re
from pathlib import Path

import numpy as np

MODEL_DIMS = {
    "bert-base-uncased": 768,
    "distilbert-base-uncased": 768,
    "roberta-base": 768,
    "roberta-large": 1024,
}
# lowercase before tokenizing, like the uncased vocabularies they stand in for
UNCASED = frozenset({"bert-base-uncased", "distilbert-base-uncased"})
POOLINGS = ("mean", "cls")

VOCAB_SIZE = 2048
MAX_TOKENS = 512  # hard cap including [CLS]/[SEP]; longer inputs truncate
N_LAYERS = 2
N_HEADS = 4

CLS_ID = 0
SEP_ID = 1
_FIRST_HASH_ID = 2

_WORDISH = re.compile(r"[A-Za-z0-9]+|[^\sA-Za-z0-9]")


def _bucket(token: str) -> int:
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    span = VOCAB_SIZE - _FIRST_HASH_ID
    return _FIRST_HASH_ID + int.from_bytes(digest[:8], "big") % span


def tokenize(text: str, model_id: str) -> np.ndarray:
    """Token ids: [CLS] + hashed word/punct pieces + [SEP], truncated to the
    model limit. Uncased models fold case first; the roberta ids keep it."""
    if model_id in UNCASED:
        text = text.lower()
    words = _WORDISH.findall(text)
    body = [_bucket(w) for w in words[: MAX_TOKENS - 2]]
    return np.array([CLS_ID] + body + [SEP_ID], dtype=np.int64)


def _layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return gain * (x - mean) / np.sqrt(var + 1e-5) + bias


def _softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _seed_for(model_id: str) -> int:
    return int.from_bytes(hashlib.sha256(model_id.encode("utf-8")).digest()[:8], "big")


def generate_weights(model_id: str) -> dict[str, np.ndarray]:
    """Seeded float32 weights for one model id; the same id always yields the
    same bytes, distinct ids yield distinct encoders."""
    dim = MODEL_DIMS[model_id]
    rng = np.random.default_rng(_seed_for(model_id))
    scale = 1.0 / np.sqrt(dim)

    def mat(rows: int, cols: int) -> np.ndarray:
        return (rng.standard_normal((rows, cols)) * scale).astype(np.float32)

    weights: dict[str, np.ndarray] = {
        "tok_emb": rng.standard_normal((VOCAB_SIZE, dim)).astype(np.float32),
        "pos_emb": rng.standard_normal((MAX_TOKENS, dim)).astype(np.float32),
        "final_gain": np.ones(dim, dtype=np.float32),
        "final_bias": np.zeros(dim, dtype=np.float32),
    }
    for layer in range(N_LAYERS):
        p = f"l{layer}."
        weights[p + "attn_gain"] = np.ones(dim, dtype=np.float32)
        weights[p + "attn_bias"] = np.zeros(dim, dtype=np.float32)
        for name in ("wq", "wk", "wv", "wo"):
            weights[p + name] = mat(dim, dim)
        weights[p + "ffn_gain"] = np.ones(dim, dtype=np.float32)
        weights[p + "ffn_bias"] = np.zeros(dim, dtype=np.float32)
        weights[p + "w1"] = mat(dim, dim)
        weights[p + "b1"] = np.zeros(dim, dtype=np.float32)
        weights[p + "w2"] = mat(dim, dim)
        weights[p + "b2"] = np.zeros(dim, dtype=np.float32)
    return weights


class SentenceEncoder:
    """Frozen encoder for one model id. encode() is pure: no state changes,
    no randomness at inference time."""

    def __init__(self, model_id: str, weights: dict[str, np.ndarray]):
        if model_id not in MODEL_DIMS:
            raise ValueError(f"unknown model id {model_id!r}")
        self.model_id = model_id
        self.dim = MODEL_DIMS[model_id]
        if weights["tok_emb"].shape != (VOCAB_SIZE, self.dim):
            raise ValueError(
                f"checkpoint embedding shape {weights['tok_emb'].shape} does not "
                f"match {model_id} (expected ({VOCAB_SIZE}, {self.dim}))"
            )
        self.weights = weights
        self.head_dim = self.dim // N_HEADS

    @classmethod
    def seeded(cls, model_id: str) -> "SentenceEncoder":
        if model_id not in MODEL_DIMS:
            raise ValueError(f"unknown model id {model_id!r}")
        return cls(model_id, generate_weights(model_id))

    def save(self, path: Path | str) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(path, model_id=np.array(self.model_id), **self.weights)

    @classmethod
    def load(cls, path: Path | str) -> "SentenceEncoder":
        with np.load(path) as blob:
            model_id = str(blob["model_id"])
            weights = {k: blob[k] for k in blob.files if k != "model_id"}
        return cls(model_id, weights)

    def _attend(self, x: np.ndarray, prefix: str) -> np.ndarray:
        w = self.weights
        n = x.shape[0]
        q = (x @ w[prefix + "wq"]).reshape(n, N_HEADS, self.head_dim)
        k = (x @ w[prefix + "wk"]).reshape(n, N_HEADS, self.head_dim)
        v = (x @ w[prefix + "wv"]).reshape(n, N_HEADS, self.head_dim)
        out = np.empty_like(q)
        for h in range(N_HEADS):
            logits = (q[:, h] @ k[:, h].T) / np.sqrt(self.head_dim).astype(np.float32)
            out[:, h] = _softmax(logits) @ v[:, h]
        return out.reshape(n, self.dim) @ w[prefix + "wo"]

    def encode(self, text: str, pooling: str = "mean") -> np.ndarray:
        if pooling not in POOLINGS:
            raise ValueError(f"unknown pooling {pooling!r}, expected one of {POOLINGS}")
        w = self.weights
        ids = tokenize(text, self.model_id)
        h = w["tok_emb"][ids] + w["pos_emb"][: ids.shape[0]]
        for layer in range(N_LAYERS):
            p = f"l{layer}."
            a = _layer_norm(h, w[p + "attn_gain"], w[p + "attn_bias"])
            h = h + self._attend(a, p)
            a = _layer_norm(h, w[p + "ffn_gain"], w[p + "ffn_bias"])
            ff = np.maximum(a @ w[p + "w1"] + w[p + "b1"], 0.0) @ w[p + "w2"] + w[p + "b2"]
            h = h + ff
        final = _layer_norm(h, w["final_gain"], w["final_bias"])
        # every position is a real token (one text per forward pass, no padding),
        # so mean pooling is an unmasked average of final-layer states
        pooled = final.mean(axis=0) if pooling == "mean" else final[0]
        return pooled.astype(np.float32)
