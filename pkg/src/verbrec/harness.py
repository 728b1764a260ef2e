"""Command implementations behind the CLI: prepare, verbalize, embed, train,
eval, report. Each stage reads only what earlier stages wrote to disk, so
the pipeline order is enforceable and every artifact is inspectable."""

from __future__ import annotations

import fcntl
import json
import os
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import (
    ARTIFACT_VERSION,
    ExperimentConfig,
    RunManifest,
    config_hash,
    prepare_hash,
    save_config,
    write_manifest,
)
from .data import (
    DatasetSplit,
    LabeledExample,
    RawItem,
    RawUser,
    build_examples,
    format_item,
    format_rating,
    format_user,
    parse_items,
    parse_ratings,
    parse_users,
    split_dataset,
)
from .embed import EmbeddingProvider, ProviderConfig
from .errors import (
    CacheMiss,
    ConfigError,
    DataError,
    LockHeld,
    MissingTextEmbedding,
    PipelineOrderError,
)
from .features import (
    EncodedDataset,
    FeatureEmbedder,
    build_field_specs,
    build_vocabularies,
    load_feature_space,
    save_feature_space,
)
from .metrics import MetricReport
from .models import build_model
from .optim import load_checkpoint, save_checkpoint
from .report import collect_manifests, render_csv, render_markdown
from .training import evaluate, train, write_history_csv
from .verbalize import (
    VerbalDoc,
    load_templates,
    verbalize_context,
    verbalize_item,
    verbalize_user,
)

DATA_FILES = ("users.dat", "movies.dat", "ratings.dat")
PREPARE_MARKER = "prepare.json"
VERBAL_DUMP = "verbal_docs.tsv"
FEATURE_SIDECAR = "feature_space.json"
SPLIT_FILES = {"train": "train.dat", "valid": "valid.dat", "test": "test.dat"}


def prepared_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.workdir) / "prepared" / prepare_hash(cfg)


def run_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.workdir) / "runs" / config_hash(cfg)


def default_cache_path(cfg: ExperimentConfig) -> Path:
    return Path(cfg.workdir) / "caches" / f"{cfg.model_id}-{cfg.pooling}.emb"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class directory_lock:
    """Advisory flock on <dir>/.lock; a second writer fails fast."""

    def __init__(self, directory: Path):
        self._path = Path(directory) / ".lock"
        self._fh = None

    def __enter__(self):
        self._path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self._path, "a+")
        try:
            fcntl.flock(self._fh.fileno(), fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError:
            self._fh.close()
            self._fh = None
            raise LockHeld(f"another command holds the lock on {self._path.parent}") from None
        return self

    def __exit__(self, *exc):
        if self._fh is not None:
            fcntl.flock(self._fh.fileno(), fcntl.LOCK_UN)
            self._fh.close()


# -- prepare -------------------------------------------------------------------


@dataclass(frozen=True)
class PrepareResult:
    directory: Path
    up_to_date: bool
    num_users: int
    num_items: int
    num_examples: int
    positive_fraction: float


def cmd_prepare(cfg: ExperimentConfig) -> PrepareResult:
    src = Path(cfg.data_dir)
    for name in DATA_FILES:
        if not (src / name).is_file():
            raise DataError(f"missing dataset file: {src / name}")
    out = prepared_dir(cfg)
    marker = out / PREPARE_MARKER
    if marker.is_file():
        stats = json.loads(marker.read_text(encoding="utf-8"))
        return PrepareResult(
            directory=out,
            up_to_date=True,
            num_users=stats["num_users"],
            num_items=stats["num_items"],
            num_examples=stats["num_examples"],
            positive_fraction=stats["positive_fraction"],
        )
    users = parse_users(src / "users.dat")
    items = parse_items(src / "movies.dat")
    ratings = parse_ratings(src / "ratings.dat")
    # splitting the interactions keeps original timestamps on disk; labels
    # and contexts are re-derived deterministically on load
    splits = split_dataset(ratings, ratios=cfg.split_ratios, seed=cfg.split_seed)
    out.mkdir(parents=True, exist_ok=True)
    with directory_lock(out):
        # .dat copies stay latin-1 so they round-trip through the parsers
        _write_lines(out / "users.dat", (format_user(u) for u in users), encoding="latin-1")
        _write_lines(out / "movies.dat", (format_item(i) for i in items), encoding="latin-1")
        for split_name, fname in SPLIT_FILES.items():
            part = getattr(splits, split_name)
            _write_lines(out / fname, (format_rating(r) for r in part), encoding="latin-1")
        train_examples = build_examples(users, items, splits.train, cfg.threshold)
        users_by_id = {u.user_id: u for u in users}
        items_by_id = {i.item_id: i for i in items}
        vocabs = build_vocabularies(
            train_examples, users_by_id, items_by_id, {"user_zip3": cfg.zip_min_freq}
        )
        specs = build_field_specs(vocabs, d=cfg.field_dim, d_t=cfg.text_dim, enriched=False)
        save_feature_space(out / FEATURE_SIDECAR, specs, vocabs)
        positive = sum(1 for r in ratings if r.rating >= cfg.threshold)
        stats = {
            "prepare_hash": prepare_hash(cfg),
            "prepared_at": _now(),
            "num_users": len(users),
            "num_items": len(items),
            "num_examples": len(ratings),
            "split_sizes": {k: len(getattr(splits, k)) for k in SPLIT_FILES},
            "positive_fraction": positive / len(ratings) if ratings else 0.0,
            "threshold": cfg.threshold,
        }
        tmp = out / (PREPARE_MARKER + ".tmp")
        tmp.write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        os.replace(tmp, marker)
    return PrepareResult(
        directory=out,
        up_to_date=False,
        num_users=len(users),
        num_items=len(items),
        num_examples=len(ratings),
        positive_fraction=stats["positive_fraction"],
    )


def _write_lines(path: Path, lines, encoding: str = "utf-8") -> None:
    with open(path, "w", encoding=encoding, newline="\n") as fh:
        for line in lines:
            fh.write(line)
            fh.write("\n")


# -- loading prepared artifacts ---------------------------------------------------


@dataclass
class Prepared:
    directory: Path
    users: dict[int, RawUser]
    items: dict[int, RawItem]
    splits: DatasetSplit
    specs: list
    vocabs: dict

    def all_examples(self) -> list[LabeledExample]:
        return self.splits.train + self.splits.valid + self.splits.test


def load_prepared(cfg: ExperimentConfig) -> Prepared:
    out = prepared_dir(cfg)
    if not (out / PREPARE_MARKER).is_file():
        raise PipelineOrderError(
            f"no prepared data under {out}; run the prepare command first"
        )
    users = parse_users(out / "users.dat")
    items = parse_items(out / "movies.dat")
    users_by_id = {u.user_id: u for u in users}
    items_by_id = {i.item_id: i for i in items}
    parts = {}
    for split_name, fname in SPLIT_FILES.items():
        ratings = parse_ratings(out / fname)
        parts[split_name] = build_examples(users, items, ratings, cfg.threshold)
    specs, vocabs = load_feature_space(out / FEATURE_SIDECAR)
    splits = DatasetSplit(train=parts["train"], valid=parts["valid"], test=parts["test"])
    return Prepared(
        directory=out,
        users=users_by_id,
        items=items_by_id,
        splits=splits,
        specs=specs,
        vocabs=vocabs,
    )


# -- verbalize -------------------------------------------------------------------


def _slot_docs(
    prepared: Prepared, template_version: str
) -> tuple[list[VerbalDoc], list[VerbalDoc], list[VerbalDoc]]:
    """Documents per slot: one per user, per item, per distinct context
    tuple, each list in a deterministic order."""
    templates = load_templates(template_version)
    user_docs = [verbalize_user(u, templates) for _, u in sorted(prepared.users.items())]
    item_docs = [verbalize_item(i, templates) for _, i in sorted(prepared.items.items())]
    seen: dict[str, VerbalDoc] = {}
    for ex in prepared.all_examples():
        doc = verbalize_context(ex.context, templates)
        seen.setdefault(doc.entity_key, doc)
    ctx_docs = [seen[k] for k in sorted(seen)]
    return user_docs, item_docs, ctx_docs


def distinct_docs(prepared: Prepared, template_version: str) -> list[VerbalDoc]:
    user_docs, item_docs, ctx_docs = _slot_docs(prepared, template_version)
    return user_docs + item_docs + ctx_docs


def cmd_verbalize(cfg: ExperimentConfig) -> Path:
    prepared = load_prepared(cfg)
    docs = distinct_docs(prepared, cfg.template_version)
    path = prepared.directory / VERBAL_DUMP
    _write_lines(path, (f"{d.entity_kind}\t{d.entity_key}\t{d.text}" for d in docs))
    return path


# -- embed ---------------------------------------------------------------------


@dataclass(frozen=True)
class EmbedResult:
    total: int
    hits: int
    misses: int
    dim: Optional[int]
    cache_path: Optional[Path]


def _provider_config(cfg: ExperimentConfig, backend: Optional[str] = None) -> ProviderConfig:
    cache = Path(cfg.cache_path) if cfg.cache_path else default_cache_path(cfg)
    return ProviderConfig(
        backend=backend or cfg.backend,
        model_id=cfg.model_id,
        pooling=cfg.pooling,
        endpoint=cfg.endpoint,
        cache_path=str(cache),
        dim=cfg.embed_dim,
    )


def cmd_embed(cfg: ExperimentConfig) -> EmbedResult:
    if not cfg.enriched:
        return EmbedResult(total=0, hits=0, misses=0, dim=None, cache_path=None)
    prepared = load_prepared(cfg)
    texts = [d.text for d in distinct_docs(prepared, cfg.template_version)]
    pconf = _provider_config(cfg)
    Path(pconf.cache_path).parent.mkdir(parents=True, exist_ok=True)
    provider = EmbeddingProvider(pconf)
    hits = sum(1 for t in texts if provider.cache is not None and t in provider.cache)
    provider.embed_texts(texts)
    return EmbedResult(
        total=len(texts),
        hits=hits,
        misses=len(texts) - hits,
        dim=provider.dim,
        cache_path=Path(pconf.cache_path),
    )


# -- dataset assembly -------------------------------------------------------------


def _text_banks(cfg: ExperimentConfig, prepared: Prepared):
    """Per-slot (bank, row-index) pairs for every split, read strictly from
    the embedding cache so training cannot silently compute vectors."""
    provider = EmbeddingProvider(_provider_config(cfg, backend="file"))
    cache = Path(provider.config.cache_path)
    if not cache.is_file():
        raise MissingTextEmbedding(
            f"no embedding cache at {cache}; run the embed command first"
        )

    def bank_for(docs: Sequence[VerbalDoc]) -> tuple[np.ndarray, dict[str, int]]:
        try:
            vectors = provider.embed_texts([d.text for d in docs])
        except CacheMiss as exc:
            raise MissingTextEmbedding(
                f"embedding cache {cache} is missing vectors; run the embed command first "
                f"({exc})"
            ) from None
        bank = np.stack([v.values for v in vectors]).astype(np.float32)
        return bank, {d.entity_key: i for i, d in enumerate(docs)}

    user_docs, item_docs, ctx_docs = _slot_docs(prepared, cfg.template_version)
    user_bank, user_row = bank_for(user_docs)
    item_bank, item_row = bank_for(item_docs)
    ctx_bank, ctx_row = bank_for(ctx_docs)

    def banks(examples: Sequence[LabeledExample]):
        u = np.fromiter((user_row[f"user:{ex.user_id}"] for ex in examples), dtype=np.int64)
        i = np.fromiter((item_row[f"item:{ex.item_id}"] for ex in examples), dtype=np.int64)
        c = np.fromiter(
            (
                ctx_row[f"context:{ex.context.day_of_week}-{ex.context.daypart}"]
                for ex in examples
            ),
            dtype=np.int64,
        )
        return {"user": (user_bank, u), "item": (item_bank, i), "context": (ctx_bank, c)}

    return banks, user_bank.shape[1]


def encoded_splits(
    cfg: ExperimentConfig, prepared: Prepared
) -> tuple[EncodedDataset, EncodedDataset, EncodedDataset, list]:
    """Train/valid/test EncodedDatasets plus the final field specs (with the
    text blocks when the variant is enriched)."""
    if cfg.enriched:
        banks, source_dim = _text_banks(cfg, prepared)
        specs = build_field_specs(
            prepared.vocabs,
            d=cfg.field_dim,
            d_t=cfg.text_dim,
            source_dim=source_dim,
            enriched=True,
        )
    else:
        banks = None
        specs = build_field_specs(
            prepared.vocabs, d=cfg.field_dim, d_t=cfg.text_dim, enriched=False
        )
    out = []
    for part in (prepared.splits.train, prepared.splits.valid, prepared.splits.test):
        out.append(
            EncodedDataset.from_examples(
                part,
                prepared.users,
                prepared.items,
                prepared.vocabs,
                text_banks=banks(part) if banks else None,
            )
        )
    return out[0], out[1], out[2], specs


# -- train ----------------------------------------------------------------------


CHECKPOINT_FILE = "model.ckpt"
HISTORY_FILE = "history.csv"
CONFIG_FILE = "config.yaml"


def _next_attempt(root: Path) -> Path:
    n = 1
    while (root / f"attempt-{n}").exists():
        n += 1
    return root / f"attempt-{n}"


def cmd_train(cfg: ExperimentConfig, progress=None) -> tuple[RunManifest, Path]:
    prepared = load_prepared(cfg)
    started = _now()
    train_ds, valid_ds, test_ds, specs = encoded_splits(cfg, prepared)
    embedder = FeatureEmbedder(specs, seed=cfg.train.seed)
    model = build_model(cfg.model, embedder, seed=cfg.train.seed)
    root = run_dir(cfg)
    root.mkdir(parents=True, exist_ok=True)
    with directory_lock(root):
        attempt = _next_attempt(root)
        attempt.mkdir()
        history = train(model, train_ds, valid_ds, cfg.train, on_epoch=progress)
        test = evaluate(model, test_ds, batch_size=cfg.train.batch_size)
        best = max(history, key=lambda r: r.valid_auc)
        save_config(attempt / CONFIG_FILE, cfg)
        write_history_csv(attempt / HISTORY_FILE, history)
        save_checkpoint(attempt / CHECKPOINT_FILE, model.parameters())
        manifest = RunManifest(
            config_hash=config_hash(cfg),
            started_at=started,
            finished_at=_now(),
            artifact_version=ARTIFACT_VERSION,
            seed=cfg.train.seed,
            model_kind=cfg.model.kind,
            provider_model_id=cfg.model_id,
            auc=test.auc,
            logloss=test.logloss,
            best_epoch=best.epoch,
            files={
                "config": CONFIG_FILE,
                "history": HISTORY_FILE,
                "checkpoint": CHECKPOINT_FILE,
            },
        )
        write_manifest(attempt, manifest)
    return manifest, attempt


# -- eval -----------------------------------------------------------------------


def latest_attempt(cfg: ExperimentConfig) -> Path:
    root = run_dir(cfg)
    attempts = sorted(
        (p for p in root.glob("attempt-*") if (p / "manifest.json").is_file()),
        key=lambda p: int(p.name.split("-")[1]),
    )
    if not attempts:
        raise PipelineOrderError(f"no completed run under {root}; run the train command first")
    return attempts[-1]


def cmd_eval(cfg: ExperimentConfig, attempt: Optional[Path] = None) -> MetricReport:
    prepared = load_prepared(cfg)
    _, _, test_ds, specs = encoded_splits(cfg, prepared)
    attempt = attempt or latest_attempt(cfg)
    weights = load_checkpoint(attempt / CHECKPOINT_FILE)
    embedder = FeatureEmbedder(specs, seed=cfg.train.seed)
    model = build_model(cfg.model, embedder, seed=cfg.train.seed)
    for p in model.parameters():
        if p.name not in weights:
            raise ConfigError(
                f"checkpoint {attempt / CHECKPOINT_FILE} has no tensor {p.name!r}; "
                "it was trained under a different configuration"
            )
        p.data = weights[p.name].astype(p.data.dtype)
    return evaluate(model, test_ds, batch_size=cfg.train.batch_size)


# -- report ---------------------------------------------------------------------


def cmd_report(
    run_dirs: Sequence[str | Path],
    out_markdown: Optional[Path] = None,
    out_csv: Optional[Path] = None,
) -> str:
    manifests = collect_manifests(run_dirs)
    md = render_markdown(manifests)
    if out_markdown:
        Path(out_markdown).write_text(md, encoding="utf-8")
    if out_csv:
        Path(out_csv).write_text(render_csv(manifests), encoding="utf-8")
    return md
