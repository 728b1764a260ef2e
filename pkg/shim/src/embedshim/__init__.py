"""Embedding service sidecar: a small HTTP server that turns sentences into
fixed-width vectors over the documented /embed wire protocol."""

from embedshim.encoding import MODEL_DIMS, POOLINGS, SentenceEncoder
from embedshim.service import ModelRegistry, ServiceSettings

__version__ = "0.1.0"

__all__ = [
    "MODEL_DIMS",
    "POOLINGS",
    "SentenceEncoder",
    "ModelRegistry",
    "ServiceSettings",
    "__version__",
]
