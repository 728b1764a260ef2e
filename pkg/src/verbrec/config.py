"""Experiment configuration, canonical hashing, and run manifests.

A config file is YAML organized into sections. The semantic fields
serialize to one canonical JSON string whose SHA-256 prefix names the run
directory; operational knobs (endpoint, cache path, timeouts, workdir) stay
out of the hash so environment overrides never rename a run.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional

import yaml

from . import __version__
from .errors import ConfigError
from .models import MODEL_KINDS, ModelConfig
from .training import TrainConfig

MODEL_IDS = (
    "raw",
    "bert-base-uncased",
    "distilbert-base-uncased",
    "roberta-base",
    "roberta-large",
    "stub",
)
BACKENDS = ("stub", "service", "file")
POOLINGS = ("mean", "cls")

ENV_ENDPOINT = "VERBREC_ENDPOINT"
ENV_CACHE_PATH = "VERBREC_CACHE_PATH"

ARTIFACT_VERSION = f"verbrec-{__version__}/manifest-1"


@dataclass(frozen=True)
class ExperimentConfig:
    data_dir: str
    threshold: int = 4
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    split_seed: int = 0
    template_version: str = "v1"
    backend: str = "stub"
    model_id: str = "raw"
    pooling: str = "mean"
    endpoint: Optional[str] = None
    cache_path: Optional[str] = None
    embed_dim: Optional[int] = None
    field_dim: int = 16
    text_dim: int = 16
    zip_min_freq: int = 5
    model: ModelConfig = field(default_factory=lambda: ModelConfig(kind="widedeep"))
    train: TrainConfig = field(default_factory=TrainConfig)
    workdir: str = "."

    def __post_init__(self) -> None:
        if not self.data_dir:
            raise ConfigError("data_dir is required")
        if not 1 <= self.threshold <= 5:
            raise ConfigError(f"threshold must be in [1,5], got {self.threshold}")
        ratios = tuple(self.split_ratios)
        if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
            raise ConfigError(f"split_ratios must be 3 positive numbers summing to 1, got {ratios}")
        object.__setattr__(self, "split_ratios", ratios)
        if self.model_id not in MODEL_IDS:
            raise ConfigError(f"model_id {self.model_id!r} not in {MODEL_IDS}")
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend {self.backend!r} not in {BACKENDS}")
        if self.pooling not in POOLINGS:
            raise ConfigError(f"pooling {self.pooling!r} not in {POOLINGS}")
        if self.field_dim < 1 or self.text_dim < 1:
            raise ConfigError("field_dim and text_dim must be positive")
        if self.zip_min_freq < 1:
            raise ConfigError("zip_min_freq must be at least 1")
        if self.embed_dim is not None and self.embed_dim < 1:
            raise ConfigError("embed_dim must be positive when set")

    @property
    def enriched(self) -> bool:
        """model_id "raw" turns the three text blocks off entirely."""
        return self.model_id != "raw"


def semantic_dict(cfg: ExperimentConfig) -> dict:
    """Every field that changes what a run computes, and nothing else."""
    return {
        "data_dir": os.path.normpath(cfg.data_dir),
        "threshold": cfg.threshold,
        "split_ratios": list(cfg.split_ratios),
        "split_seed": cfg.split_seed,
        "template_version": cfg.template_version,
        "backend": cfg.backend,
        "model_id": cfg.model_id,
        "pooling": cfg.pooling,
        "embed_dim": cfg.embed_dim,
        "field_dim": cfg.field_dim,
        "text_dim": cfg.text_dim,
        "zip_min_freq": cfg.zip_min_freq,
        "model": {
            "kind": cfg.model.kind,
            "mlp_layers": list(cfg.model.mlp_layers),
            "cin_layers": list(cfg.model.cin_layers),
            "cross_depth": cfg.model.cross_depth,
            "euler_orders": cfg.model.euler_orders,
        },
        "train": {
            "batch_size": cfg.train.batch_size,
            "learning_rate": cfg.train.learning_rate,
            "max_epochs": cfg.train.max_epochs,
            "patience": cfg.train.patience,
            "seed": cfg.train.seed,
            "deterministic": cfg.train.deterministic,
        },
    }


def canonical_json(cfg: ExperimentConfig) -> str:
    return json.dumps(semantic_dict(cfg), sort_keys=True, separators=(",", ":"))


def config_hash(cfg: ExperimentConfig) -> str:
    """12-hex run directory name."""
    return hashlib.sha256(canonical_json(cfg).encode("utf-8")).hexdigest()[:12]


def prepare_hash(cfg: ExperimentConfig) -> str:
    """Names the prepared-data directory. Covers only the fields that shape
    the normalized records, splits, and vocabularies, so model variants
    share one preparation."""
    payload = {
        "data_dir": os.path.normpath(cfg.data_dir),
        "threshold": cfg.threshold,
        "split_ratios": list(cfg.split_ratios),
        "split_seed": cfg.split_seed,
        "template_version": cfg.template_version,
        "field_dim": cfg.field_dim,
        "text_dim": cfg.text_dim,
        "zip_min_freq": cfg.zip_min_freq,
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


# -- file I/O -------------------------------------------------------------------

_SECTION_KEYS = {
    "data": {"dir", "threshold"},
    "split": {"ratios", "seed"},
    "templates": {"version"},
    "provider": {"backend", "model_id", "pooling", "endpoint", "cache_path", "dim"},
    "features": {"field_dim", "text_dim", "zip_min_freq"},
    "model": {"kind", "mlp_layers", "cin_layers", "cross_depth", "euler_orders"},
    "train": {"batch_size", "learning_rate", "max_epochs", "patience", "seed", "deterministic"},
}


def _check_keys(section: str, payload: Mapping, allowed: set[str]) -> None:
    unknown = set(payload) - allowed
    if unknown:
        raise ConfigError(f"config section {section!r}: unknown keys {sorted(unknown)}")


def config_from_dict(payload: Mapping) -> ExperimentConfig:
    if not isinstance(payload, Mapping):
        raise ConfigError("config root must be a JSON object")
    unknown = set(payload) - set(_SECTION_KEYS) - {"workdir"}
    if unknown:
        raise ConfigError(f"config: unknown sections {sorted(unknown)}")
    sections = {}
    for name in _SECTION_KEYS:
        body = payload.get(name, {})
        if not isinstance(body, Mapping):
            raise ConfigError(f"config section {name!r} must be an object")
        _check_keys(name, body, _SECTION_KEYS[name])
        sections[name] = dict(body)
    data, split = sections["data"], sections["split"]
    provider, feats = sections["provider"], sections["features"]
    if "dir" not in data:
        raise ConfigError("config: data.dir is required")
    try:
        model = ModelConfig(kind=sections["model"].get("kind", "widedeep"), **{
            k: tuple(v) if isinstance(v, list) else v
            for k, v in sections["model"].items()
            if k != "kind"
        })
        train = TrainConfig(**sections["train"])
    except TypeError as exc:
        raise ConfigError(f"config: {exc}") from None
    return ExperimentConfig(
        data_dir=str(data["dir"]),
        threshold=int(data.get("threshold", 4)),
        split_ratios=tuple(split.get("ratios", (0.8, 0.1, 0.1))),
        split_seed=int(split.get("seed", 0)),
        template_version=str(sections["templates"].get("version", "v1")),
        backend=str(provider.get("backend", "stub")),
        model_id=str(provider.get("model_id", "raw")),
        pooling=str(provider.get("pooling", "mean")),
        endpoint=provider.get("endpoint"),
        cache_path=provider.get("cache_path"),
        embed_dim=provider.get("dim"),
        field_dim=int(feats.get("field_dim", 16)),
        text_dim=int(feats.get("text_dim", 16)),
        zip_min_freq=int(feats.get("zip_min_freq", 5)),
        model=model,
        train=train,
        workdir=str(payload.get("workdir", ".")),
    )


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return {
        "data": {"dir": cfg.data_dir, "threshold": cfg.threshold},
        "split": {"ratios": list(cfg.split_ratios), "seed": cfg.split_seed},
        "templates": {"version": cfg.template_version},
        "provider": {
            "backend": cfg.backend,
            "model_id": cfg.model_id,
            "pooling": cfg.pooling,
            "endpoint": cfg.endpoint,
            "cache_path": cfg.cache_path,
            "dim": cfg.embed_dim,
        },
        "features": {
            "field_dim": cfg.field_dim,
            "text_dim": cfg.text_dim,
            "zip_min_freq": cfg.zip_min_freq,
        },
        "model": {
            "kind": cfg.model.kind,
            "mlp_layers": list(cfg.model.mlp_layers),
            "cin_layers": list(cfg.model.cin_layers),
            "cross_depth": cfg.model.cross_depth,
            "euler_orders": cfg.model.euler_orders,
        },
        "train": {
            "batch_size": cfg.train.batch_size,
            "learning_rate": cfg.train.learning_rate,
            "max_epochs": cfg.train.max_epochs,
            "patience": cfg.train.patience,
            "seed": cfg.train.seed,
            "deterministic": cfg.train.deterministic,
        },
        "workdir": cfg.workdir,
    }


def load_config(path: str | Path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        payload = yaml.safe_load(p.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {p}: invalid YAML: {exc}") from None
    if payload is None:
        raise ConfigError(f"config file {p} is empty")
    return config_from_dict(payload)


def save_config(path: str | Path, cfg: ExperimentConfig) -> None:
    blob = yaml.safe_dump(config_to_dict(cfg), sort_keys=True, default_flow_style=False)
    Path(path).write_text(blob, encoding="utf-8")


def apply_env_overrides(
    cfg: ExperimentConfig, env: Mapping[str, str] | None = None
) -> ExperimentConfig:
    """Only the service endpoint and the cache path may come from the
    environment; everything else must live in the config file."""
    env = os.environ if env is None else env
    updates = {}
    if env.get(ENV_ENDPOINT):
        updates["endpoint"] = env[ENV_ENDPOINT]
    if env.get(ENV_CACHE_PATH):
        updates["cache_path"] = env[ENV_CACHE_PATH]
    return replace(cfg, **updates) if updates else cfg


# -- run manifests ----------------------------------------------------------------


@dataclass(frozen=True)
class RunManifest:
    config_hash: str
    started_at: str
    finished_at: str
    artifact_version: str
    seed: int
    model_kind: str
    provider_model_id: str
    auc: float
    logloss: float
    best_epoch: int
    files: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(f"manifest model_kind {self.model_kind!r} not in {MODEL_KINDS}")
        if self.provider_model_id not in MODEL_IDS:
            raise ConfigError(f"manifest model_id {self.provider_model_id!r} not in {MODEL_IDS}")


MANIFEST_NAME = "manifest.json"


def write_manifest(directory: str | Path, manifest: RunManifest) -> Path:
    """One manifest per attempt directory, never overwritten."""
    path = Path(directory) / MANIFEST_NAME
    payload = {
        "config_hash": manifest.config_hash,
        "started_at": manifest.started_at,
        "finished_at": manifest.finished_at,
        "artifact_version": manifest.artifact_version,
        "seed": manifest.seed,
        "model_kind": manifest.model_kind,
        "provider_model_id": manifest.provider_model_id,
        "metrics": {"auc": manifest.auc, "logloss": manifest.logloss, "epoch": manifest.best_epoch},
        "files": manifest.files,
    }
    blob = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    with open(path, "x", encoding="utf-8") as fh:
        fh.write(blob)
    return path


def read_manifest(path: str | Path) -> RunManifest:
    p = Path(path)
    try:
        payload = json.loads(p.read_text(encoding="utf-8"))
        metrics = payload["metrics"]
        return RunManifest(
            config_hash=payload["config_hash"],
            started_at=payload["started_at"],
            finished_at=payload["finished_at"],
            artifact_version=payload["artifact_version"],
            seed=int(payload["seed"]),
            model_kind=payload["model_kind"],
            provider_model_id=payload["provider_model_id"],
            auc=float(metrics["auc"]),
            logloss=float(metrics["logloss"]),
            best_epoch=int(metrics["epoch"]),
            files=dict(payload.get("files", {})),
        )
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad manifest {p}: {exc}") from None
