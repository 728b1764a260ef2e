"""Model lifecycle and request-side policy: which models load, batch limits,
optional checkpoint directory, and the per-model serialization lock."""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from embedshim.encoding import MODEL_DIMS, SentenceEncoder

DEFAULT_PORT = 8631
DEFAULT_MAX_TEXTS = 64


@dataclass(frozen=True)
class ServiceSettings:
    models: tuple[str, ...] = tuple(MODEL_DIMS)
    max_texts: int = DEFAULT_MAX_TEXTS
    checkpoint_dir: Optional[str] = None
    device: str = "cpu"
    port: int = DEFAULT_PORT

    def __post_init__(self):
        if not self.models:
            raise ValueError("at least one model must be configured")
        unknown = [m for m in self.models if m not in MODEL_DIMS]
        if unknown:
            raise ValueError(
                f"unknown model ids {unknown}; available: {sorted(MODEL_DIMS)}"
            )
        if self.max_texts < 1:
            raise ValueError("max_texts must be at least 1")
        # numpy backend: cpu is the only device this build can offer
        if self.device != "cpu":
            raise ValueError(f"device {self.device!r} unavailable, only cpu inference is supported")

    @classmethod
    def from_env(cls, env: Optional[Mapping[str, str]] = None) -> "ServiceSettings":
        env = os.environ if env is None else env
        kwargs = {}
        if env.get("MODELS"):
            kwargs["models"] = tuple(m.strip() for m in env["MODELS"].split(",") if m.strip())
        if env.get("DEVICE"):
            kwargs["device"] = env["DEVICE"]
        if env.get("PORT"):
            kwargs["port"] = int(env["PORT"])
        if env.get("EMBEDSHIM_CHECKPOINT_DIR"):
            kwargs["checkpoint_dir"] = env["EMBEDSHIM_CHECKPOINT_DIR"]
        return cls(**kwargs)


class ModelRegistry:
    """Holds the loaded encoders. load_all() runs once at startup; until it
    finishes, ready stays False and the server answers 503."""

    def __init__(self, settings: ServiceSettings):
        self.settings = settings
        self.ready = False
        self._encoders: dict[str, SentenceEncoder] = {}
        self._locks: dict[str, threading.Lock] = {}

    def load_all(self) -> None:
        for model_id in self.settings.models:
            self._encoders[model_id] = self._load_one(model_id)
            self._locks[model_id] = threading.Lock()
        self.ready = True

    def _load_one(self, model_id: str) -> SentenceEncoder:
        if self.settings.checkpoint_dir:
            path = Path(self.settings.checkpoint_dir) / f"{model_id}.npz"
            if not path.is_file():
                SentenceEncoder.seeded(model_id).save(path)
            return SentenceEncoder.load(path)
        return SentenceEncoder.seeded(model_id)

    @property
    def models(self) -> tuple[str, ...]:
        return tuple(self._encoders)

    def dims(self) -> dict[str, int]:
        return {m: enc.dim for m, enc in self._encoders.items()}

    def embed(self, model_id: str, pooling: str, texts: Sequence[str]) -> np.ndarray:
        encoder = self._encoders[model_id]
        # one text at a time behind the model lock: requests for the same
        # model serialize, and a text's vector never depends on its batch
        with self._locks[model_id]:
            return np.stack([encoder.encode(t, pooling) for t in texts])
