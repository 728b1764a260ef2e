"""Categorical vocabularies, batch encoding, and the concatenation layer.

Field layout is fixed and versioned: four user fields, three item fields,
two context fields, then (when enrichment is on) three projected text blocks
in user, item, context order. Offsets into the concatenated vector depend
only on the field specs, never on batch content.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .data import LabeledExample, RawItem, RawUser
from .embed import EmbeddingVector
from .errors import (
    ConfigError,
    DimMismatch,
    FieldOrderMismatch,
    MissingTextEmbedding,
    ShapeMismatch,
)
from .optim import seed_for, xavier_uniform_init

FIELD_ORDER_VERSION = 1

# One entry per learned field; genres sum-pool several values into one slot.
FIELD_NAMES = (
    "user_gender",
    "user_age",
    "user_occupation",
    "user_zip3",
    "item_id",
    "item_decade",
    "item_genres",
    "ctx_hour",
    "ctx_weekday",
)
MULTI_FIELDS = ("item_genres",)
TEXT_SLOTS = ("user", "item", "context")

# Full zips are too sparse to learn from; everything else keeps all values.
DEFAULT_MIN_FREQ = {"user_zip3": 5}

KINDS = ("categorical", "text-embedding")

UNKNOWN_DECADE = -1


@dataclass(frozen=True)
class FieldSpec:
    name: str
    kind: str
    vocab_size: int = 0  # categorical only; includes the OOV slot
    dim: int = 0  # d for categorical, d_t for text
    source_dim: int = 0  # D, text only
    multi: bool = False  # sum-pool multiple values into one slot

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown field kind {self.kind!r}, expected one of {KINDS}")
        if self.dim <= 0:
            raise ConfigError(f"field {self.name}: dim must be positive")
        if self.kind == "categorical" and self.vocab_size < 1:
            raise ConfigError(f"field {self.name}: vocab_size must be at least 1")
        if self.kind == "text-embedding" and self.source_dim <= 0:
            raise ConfigError(f"field {self.name}: text fields need a source dim")


class Vocabulary:
    """value -> dense index, with 0 reserved for out-of-vocabulary."""

    def __init__(self, mapping: Mapping) -> None:
        indices = sorted(mapping.values())
        if indices != list(range(1, len(mapping) + 1)):
            raise ConfigError("vocabulary indices must be dense in [1, size)")
        self._map = dict(mapping)

    @classmethod
    def build(cls, values: Iterable, min_freq: int = 1) -> "Vocabulary":
        """Frequency descending, then value ascending; rarities fold into OOV."""
        if min_freq < 1:
            raise ConfigError(f"min_freq must be at least 1, got {min_freq}")
        counts = Counter(values)
        kept = [(v, c) for v, c in counts.items() if c >= min_freq]
        kept.sort(key=lambda vc: (-vc[1], vc[0]))
        return cls({v: i + 1 for i, (v, _) in enumerate(kept)})

    @property
    def size(self) -> int:
        """Number of embedding rows needed, OOV slot included."""
        return len(self._map) + 1

    def index(self, value) -> int:
        return self._map.get(value, 0)

    def items(self) -> list[tuple[object, int]]:
        return sorted(self._map.items(), key=lambda kv: kv[1])

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._map == other._map

    def __len__(self) -> int:
        return len(self._map)


def release_decade(year: Optional[int]) -> int:
    if year is None:
        return UNKNOWN_DECADE
    return (year // 10) * 10


def extract_field_values(
    example: LabeledExample, users: Mapping[int, RawUser], items: Mapping[int, RawItem]
) -> dict:
    user = users[example.user_id]
    item = items[example.item_id]
    return {
        "user_gender": user.gender,
        "user_age": user.age_code,
        "user_occupation": user.occupation_code,
        "user_zip3": user.zip[:3],
        "item_id": item.item_id,
        "item_decade": release_decade(item.release_year),
        "item_genres": item.genres,
        "ctx_hour": example.context.hour_of_day,
        "ctx_weekday": example.context.day_of_week,
    }


def build_vocabularies(
    examples: Sequence[LabeledExample],
    users: Mapping[int, RawUser],
    items: Mapping[int, RawItem],
    min_freq: Optional[Mapping[str, int]] = None,
) -> dict[str, Vocabulary]:
    """One vocabulary per field, built from (normally training) examples."""
    thresholds = dict(DEFAULT_MIN_FREQ)
    if min_freq:
        thresholds.update(min_freq)
    pools: dict[str, list] = {name: [] for name in FIELD_NAMES}
    for ex in examples:
        values = extract_field_values(ex, users, items)
        for name in FIELD_NAMES:
            if name in MULTI_FIELDS:
                pools[name].extend(values[name])
            else:
                pools[name].append(values[name])
    return {
        name: Vocabulary.build(pools[name], thresholds.get(name, 1)) for name in FIELD_NAMES
    }


def build_field_specs(
    vocabs: Mapping[str, Vocabulary],
    d: int = 16,
    d_t: int = 16,
    source_dim: Optional[int] = None,
    enriched: bool = False,
) -> list[FieldSpec]:
    if set(vocabs) != set(FIELD_NAMES):
        raise FieldOrderMismatch(
            f"vocabularies cover {sorted(vocabs)}, expected exactly {sorted(FIELD_NAMES)}"
        )
    specs = [
        FieldSpec(
            name=name,
            kind="categorical",
            vocab_size=vocabs[name].size,
            dim=d,
            multi=name in MULTI_FIELDS,
        )
        for name in FIELD_NAMES
    ]
    if enriched:
        if source_dim is None:
            raise ConfigError("enriched mode needs the text source dim")
        specs.extend(
            FieldSpec(name=f"text_{slot}", kind="text-embedding", dim=d_t, source_dim=source_dim)
            for slot in TEXT_SLOTS
        )
    return specs


def flat_width(specs: Sequence[FieldSpec]) -> int:
    return sum(s.dim for s in specs)


def field_offsets(specs: Sequence[FieldSpec]) -> dict[str, tuple[int, int]]:
    """Start/end column of each field in the concatenated vector; a pure
    function of the specs."""
    out = {}
    pos = 0
    for s in specs:
        out[s.name] = (pos, pos + s.dim)
        pos += s.dim
    return out


@dataclass
class EncodedBatch:
    size: int
    indices: dict[str, np.ndarray] = field(default_factory=dict)
    multihot: dict[str, np.ndarray] = field(default_factory=dict)
    texts: dict[str, np.ndarray] = field(default_factory=dict)
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.float32))

    def __post_init__(self) -> None:
        for name, arr in self.indices.items():
            if arr.shape != (self.size,):
                raise ShapeMismatch(f"index field {name}: shape {arr.shape}, batch {self.size}")
        for name, arr in self.multihot.items():
            if arr.ndim != 2 or arr.shape[0] != self.size:
                raise ShapeMismatch(f"multihot field {name}: shape {arr.shape}, batch {self.size}")
        for slot, arr in self.texts.items():
            if arr.ndim != 2 or arr.shape[0] != self.size:
                raise ShapeMismatch(f"text slot {slot}: shape {arr.shape}, batch {self.size}")
        if self.labels.shape != (self.size,):
            raise ShapeMismatch(f"labels shape {self.labels.shape}, batch {self.size}")


def encode_examples(
    examples: Sequence[LabeledExample],
    users: Mapping[int, RawUser],
    items: Mapping[int, RawItem],
    vocabs: Mapping[str, Vocabulary],
    text_matrices: Optional[Mapping[str, np.ndarray]] = None,
    enriched: bool = False,
) -> EncodedBatch:
    """Vectorize examples against frozen vocabularies. Unseen values map to
    OOV index 0 and never error."""
    n = len(examples)
    indices: dict[str, np.ndarray] = {}
    multihot: dict[str, np.ndarray] = {}
    rows = [extract_field_values(ex, users, items) for ex in examples]
    for name in FIELD_NAMES:
        vocab = vocabs[name]
        if name in MULTI_FIELDS:
            mat = np.zeros((n, vocab.size), dtype=np.float32)
            for i, row in enumerate(rows):
                for value in row[name]:
                    mat[i, vocab.index(value)] += 1.0
            multihot[name] = mat
        else:
            indices[name] = np.fromiter(
                (vocab.index(row[name]) for row in rows), dtype=np.int64, count=n
            )
    texts: dict[str, np.ndarray] = {}
    if enriched:
        provided = text_matrices or {}
        for slot in TEXT_SLOTS:
            if slot not in provided:
                raise MissingTextEmbedding(f"enriched mode but no {slot!r} text matrix")
            texts[slot] = np.asarray(provided[slot], dtype=np.float32)
    labels = np.fromiter((ex.label for ex in examples), dtype=np.float32, count=n)
    return EncodedBatch(size=n, indices=indices, multihot=multihot, texts=texts, labels=labels)


@dataclass
class EncodedDataset:
    """A whole split, encoded once. Text vectors are kept as one bank of
    unique rows per slot plus a per-example row index, so a million examples
    never hold a million copies of the same user sentence vector."""

    indices: dict[str, np.ndarray]
    multihot: dict[str, np.ndarray]
    labels: np.ndarray
    text_banks: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.labels.shape[0]

    @property
    def enriched(self) -> bool:
        return bool(self.text_banks)

    def __post_init__(self) -> None:
        n = self.size
        for name, arr in self.indices.items():
            if arr.shape != (n,):
                raise ShapeMismatch(f"index field {name}: shape {arr.shape}, dataset size {n}")
        for name, arr in self.multihot.items():
            if arr.ndim != 2 or arr.shape[0] != n:
                raise ShapeMismatch(f"multihot field {name}: shape {arr.shape}, dataset size {n}")
        for slot, (bank, rows) in self.text_banks.items():
            if rows.shape != (n,):
                raise ShapeMismatch(f"text slot {slot}: row index shape {rows.shape}, size {n}")
            if bank.ndim != 2:
                raise ShapeMismatch(f"text slot {slot}: bank must be 2-D, got {bank.shape}")
            if rows.size and (rows.min() < 0 or rows.max() >= bank.shape[0]):
                raise ShapeMismatch(f"text slot {slot}: row index out of bank range")

    def take(self, rows: np.ndarray) -> EncodedBatch:
        """Materialize an EncodedBatch for the given example rows."""
        texts = {
            slot: bank[idx[rows]] for slot, (bank, idx) in self.text_banks.items()
        }
        return EncodedBatch(
            size=int(rows.shape[0]),
            indices={k: v[rows] for k, v in self.indices.items()},
            multihot={k: v[rows] for k, v in self.multihot.items()},
            texts=texts,
            labels=self.labels[rows],
        )

    @classmethod
    def from_examples(
        cls,
        examples: Sequence[LabeledExample],
        users: Mapping[int, RawUser],
        items: Mapping[int, RawItem],
        vocabs: Mapping[str, Vocabulary],
        text_banks: Optional[Mapping[str, tuple[np.ndarray, np.ndarray]]] = None,
    ) -> "EncodedDataset":
        batch = encode_examples(examples, users, items, vocabs)
        return cls(
            indices=batch.indices,
            multihot=batch.multihot,
            labels=batch.labels,
            text_banks=dict(text_banks or {}),
        )


def project_text_embedding(vec: EmbeddingVector, projection: Parameter) -> Tensor:
    """Linear bridge from a frozen source vector to the field dimension;
    gradients reach the projection weights only."""
    if projection.data.ndim != 2 or projection.data.shape[0] != vec.dim:
        raise DimMismatch(
            f"projection expects {projection.data.shape[0]} source dims, vector has {vec.dim}"
        )
    row = Tensor(vec.values.reshape(1, -1))
    return ad.reshape(ad.matmul(row, projection), (projection.data.shape[1],))


class FeatureEmbedder:
    """Owns one embedding table per categorical field and one projection per
    text slot, and assembles model inputs in the fixed field order."""

    def __init__(self, specs: Sequence[FieldSpec], seed: int = 0) -> None:
        names = [s.name for s in specs if s.kind == "categorical"]
        if tuple(names) != FIELD_NAMES:
            raise FieldOrderMismatch(
                f"categorical fields {names} do not match the versioned order {list(FIELD_NAMES)}"
            )
        text_specs = [s for s in specs if s.kind == "text-embedding"]
        if text_specs and tuple(s.name for s in text_specs) != tuple(
            f"text_{slot}" for slot in TEXT_SLOTS
        ):
            raise FieldOrderMismatch(
                f"text fields {[s.name for s in text_specs]} out of order"
            )
        self.specs = list(specs)
        self.enriched = bool(text_specs)
        self.tables: dict[str, Parameter] = {}
        for s in specs:
            if s.kind == "categorical":
                init = xavier_uniform_init(
                    (s.vocab_size, s.dim), s.vocab_size, s.dim, seed_for(seed, f"emb.{s.name}")
                )
                self.tables[s.name] = Parameter(f"emb.{s.name}", init)
        self.projections: dict[str, Parameter] = {}
        for s in text_specs:
            slot = s.name.removeprefix("text_")
            init = xavier_uniform_init(
                (s.source_dim, s.dim), s.source_dim, s.dim, seed_for(seed, f"proj.{slot}")
            )
            self.projections[slot] = Parameter(f"proj.{slot}", init)

    @property
    def num_fields(self) -> int:
        return len(self.tables)

    @property
    def field_dim(self) -> int:
        return self.specs[0].dim

    @property
    def flat_dim(self) -> int:
        return flat_width(self.specs)

    @property
    def stacked_fields(self) -> int:
        return self.num_fields + (len(TEXT_SLOTS) if self.enriched else 0)

    def parameters(self) -> list[Parameter]:
        return list(self.tables.values()) + list(self.projections.values())

    def _field_blocks(self, batch: EncodedBatch) -> list[Tensor]:
        blocks = []
        for s in self.specs:
            if s.kind != "categorical":
                continue
            table = self.tables[s.name]
            if s.multi:
                hot = batch.multihot.get(s.name)
                if hot is None:
                    raise FieldOrderMismatch(f"batch lacks multihot field {s.name!r}")
                if hot.shape[1] != s.vocab_size:
                    raise ShapeMismatch(
                        f"{s.name}: multihot width {hot.shape[1]} != vocab {s.vocab_size}"
                    )
                blocks.append(ad.matmul(Tensor(hot), table))
            else:
                idx = batch.indices.get(s.name)
                if idx is None:
                    raise FieldOrderMismatch(f"batch lacks categorical field {s.name!r}")
                blocks.append(ad.embedding_lookup(table, idx))
        return blocks

    def text_blocks(self, batch: EncodedBatch) -> list[Tensor]:
        blocks = []
        for slot in TEXT_SLOTS:
            mat = batch.texts.get(slot)
            if mat is None:
                raise MissingTextEmbedding(f"enriched embedder but batch lacks {slot!r} texts")
            proj = self.projections[slot]
            if mat.shape[1] != proj.data.shape[0]:
                raise DimMismatch(
                    f"{slot} texts have dim {mat.shape[1]}, projection expects {proj.data.shape[0]}"
                )
            blocks.append(ad.matmul(Tensor(mat), proj))
        return blocks

    def field_matrix(self, batch: EncodedBatch) -> Tensor:
        """(B, F, d) stack of the learned field embeddings, for models that
        need per-field structure. Text blocks are not included here."""
        blocks = self._field_blocks(batch)
        flat = ad.concat(blocks, axis=1)
        return ad.reshape(flat, (batch.size, self.num_fields, self.field_dim))

    def flat(self, batch: EncodedBatch) -> Tensor:
        """(B, total_dim) concatenation: field embeddings, then projected
        user/item/context text vectors when enrichment is on."""
        blocks = self._field_blocks(batch)
        if self.enriched:
            blocks.extend(self.text_blocks(batch))
        return ad.concat(blocks, axis=1)

    def stacked(self, batch: EncodedBatch) -> Tensor:
        """(B, F_total, d) with projected text vectors as extra rows. Needs
        d_t == d so text rows stack with field rows."""
        mat = self.field_matrix(batch)
        if not self.enriched:
            return mat
        d = self.field_dim
        text_dims = {s.dim for s in self.specs if s.kind == "text-embedding"}
        if text_dims != {d}:
            raise ConfigError(
                f"stacked fields need d_t == d, got d={d} and d_t={sorted(text_dims)}"
            )
        rows = [ad.reshape(b, (batch.size, 1, d)) for b in self.text_blocks(batch)]
        return ad.concat([mat] + rows, axis=1)


# -- sidecar persistence -------------------------------------------------------


def save_feature_space(
    path: str | Path, specs: Sequence[FieldSpec], vocabs: Mapping[str, Vocabulary]
) -> None:
    payload = {
        "field_order_version": FIELD_ORDER_VERSION,
        "fields": [
            {
                "name": s.name,
                "kind": s.kind,
                "vocab_size": s.vocab_size,
                "dim": s.dim,
                "source_dim": s.source_dim,
                "multi": s.multi,
            }
            for s in specs
        ],
        "vocabs": {name: [[v, i] for v, i in vocab.items()] for name, vocab in vocabs.items()},
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")


def load_feature_space(path: str | Path) -> tuple[list[FieldSpec], dict[str, Vocabulary]]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    version = payload.get("field_order_version")
    if version != FIELD_ORDER_VERSION:
        raise FieldOrderMismatch(
            f"feature space version {version}, this build expects {FIELD_ORDER_VERSION}"
        )
    specs = [
        FieldSpec(
            name=f["name"],
            kind=f["kind"],
            vocab_size=f["vocab_size"],
            dim=f["dim"],
            source_dim=f["source_dim"],
            multi=f["multi"],
        )
        for f in payload["fields"]
    ]
    cat_names = tuple(s.name for s in specs if s.kind == "categorical")
    if cat_names != FIELD_NAMES:
        raise FieldOrderMismatch(f"sidecar field order {cat_names} != {FIELD_NAMES}")
    vocabs = {}
    for name, pairs in payload["vocabs"].items():
        # JSON keeps ints and strings apart, so values round-trip as-is
        vocabs[name] = Vocabulary({value: idx for value, idx in pairs})
    return specs, vocabs
