"""Exception types shared across the toolkit.

Every error raised to callers derives from VerbrecError so the CLI can map
failures onto its exit-code contract (config=2, data=3, provider=4,
divergence=5).
"""

from __future__ import annotations


class VerbrecError(Exception):
    """Base class for all toolkit errors."""


# --- dataset parsing / splitting ---------------------------------------


class DataError(VerbrecError):
    """Base class for dataset-level failures (CLI exit code 3)."""


class MalformedLine(DataError):
    def __init__(self, path: str, line_no: int, reason: str):
        self.path = path
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"{path}:{line_no}: {reason}")


class InvalidCode(DataError):
    """Age or occupation code outside the documented ML-1M code tables."""

    def __init__(self, path: str, line_no: int, reason: str):
        self.path = path
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"{path}:{line_no}: {reason}")


class DuplicateItemId(DataError):
    pass


class DuplicateUserId(DataError):
    pass


class RatingOutOfRange(DataError):
    pass


class UnknownReference(DataError):
    """An interaction references a user or item id that was never parsed."""


class BadRatios(DataError):
    pass


# --- embedding provider --------------------------------------------------


class ProviderError(VerbrecError):
    """Base class for embedding-provider failures (CLI exit code 4)."""


class ServiceUnavailable(ProviderError):
    pass


class DimMismatch(ProviderError):
    pass


class CacheCorrupt(ProviderError):
    pass


class ProtocolError(ProviderError):
    pass


class CacheMiss(ProviderError):
    """File-backed provider cannot serve a text absent from its cache."""


# --- tensor core ----------------------------------------------------------


class ShapeMismatch(VerbrecError):
    pass


class DomainError(VerbrecError):
    """Input outside an op's domain, or a non-finite value in its output."""


class NotScalarOutput(VerbrecError):
    pass


# --- feature pipeline / models -------------------------------------------


class MissingTextEmbedding(VerbrecError):
    pass


class FieldOrderMismatch(VerbrecError):
    pass


# --- training / metrics ----------------------------------------------------


class LengthMismatch(VerbrecError):
    pass


class EmptyInput(VerbrecError):
    pass


class SingleClass(VerbrecError):
    pass


class DivergedLoss(VerbrecError):
    """Training produced a non-finite loss (CLI exit code 5)."""


# --- harness ----------------------------------------------------------------


class ConfigError(VerbrecError):
    """Invalid or inconsistent experiment configuration (CLI exit code 2)."""


class PipelineOrderError(DataError):
    """A command ran before the stage it depends on."""


class NoManifests(VerbrecError):
    pass


class LockHeld(VerbrecError):
    """Another process holds the advisory lock on a run directory."""
