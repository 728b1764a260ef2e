"""Mini-batch training with early stopping on validation AUC.

The loop is single-threaded and fully deterministic for a fixed seed: batch
order comes from one seeded generator, parameters from per-name seeds, and
all reductions run in a fixed order.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .data import ContextFields, LabeledExample
from .errors import ConfigError, DivergedLoss, DomainError, EmptyInput
from .features import EncodedBatch, EncodedDataset
from .metrics import MetricReport, auc, logloss
from .models import CTRModel, predict_batch
from .optim import Adam


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 4096
    learning_rate: float = 1e-3
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0
    deterministic: bool = True

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.patience < 1:
            raise ConfigError("patience must be at least 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be at least 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_logloss: float
    valid_auc: float
    valid_logloss: float
    seconds: float


def bce_from_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Numerically stable binary cross-entropy; the logsigmoid form never
    evaluates log of a rounded probability."""
    y = Tensor(labels, dtype=logits.data.dtype)
    ones = Tensor(np.ones_like(labels), dtype=logits.data.dtype)
    ll = ad.add(
        ad.mul(y, ad.logsigmoid(logits)),
        ad.mul(ad.sub(ones, y), ad.logsigmoid(ad.neg(logits))),
    )
    return ad.neg(ad.reduce_mean(ll))


def _predict_dataset(model: CTRModel, data: EncodedDataset, batch_size: int) -> np.ndarray:
    out = np.empty(data.size, dtype=np.float64)
    for lo in range(0, data.size, batch_size):
        rows = np.arange(lo, min(lo + batch_size, data.size))
        out[lo : lo + rows.shape[0]] = predict_batch(model, data.take(rows))
    return out


def evaluate(
    model: CTRModel, data: EncodedDataset, batch_size: int = 4096, epoch: int = 0
) -> MetricReport:
    """AUC and LogLoss over a whole split with batched inference."""
    if data.size == 0:
        raise EmptyInput("cannot evaluate an empty split")
    start = time.perf_counter()
    probs = _predict_dataset(model, data, batch_size)
    return MetricReport(
        auc=auc(data.labels, probs),
        logloss=logloss(data.labels, probs),
        epoch=epoch,
        seconds=time.perf_counter() - start,
    )


def _snapshot(model: CTRModel) -> dict[str, np.ndarray]:
    return {p.name: p.data.copy() for p in model.parameters()}


def _restore(model: CTRModel, snap: dict[str, np.ndarray]) -> None:
    for p in model.parameters():
        p.data = snap[p.name].copy()


def train(
    model: CTRModel,
    train_set: EncodedDataset,
    valid_set: EncodedDataset,
    config: TrainConfig,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> list[EpochRecord]:
    """Adam over seeded shuffled mini-batches. Stops once validation AUC has
    not improved for `patience` consecutive epochs and restores the
    best-validation checkpoint before returning the per-epoch history."""
    if train_set.size == 0:
        raise EmptyInput("cannot train on an empty split")
    params = model.parameters()
    opt = Adam(lr=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    history: list[EpochRecord] = []
    best_auc = -np.inf
    best_epoch = 0
    best_state = _snapshot(model)
    for epoch in range(1, config.max_epochs + 1):
        start = time.perf_counter()
        perm = rng.permutation(train_set.size)
        loss_sum = 0.0
        for lo in range(0, train_set.size, config.batch_size):
            rows = perm[lo : lo + config.batch_size]
            batch = train_set.take(rows)
            try:
                with Tape() as tape:
                    loss = bce_from_logits(model.forward_logits(batch), batch.labels)
                grads = tape.gradient(loss, params)
                opt.step(params, grads)
            except DomainError as exc:
                raise DivergedLoss(f"epoch {epoch}: {exc}") from exc
            loss_sum += float(loss.data) * rows.shape[0]
        valid = evaluate(model, valid_set, batch_size=config.batch_size, epoch=epoch)
        record = EpochRecord(
            epoch=epoch,
            train_logloss=loss_sum / train_set.size,
            valid_auc=valid.auc,
            valid_logloss=valid.logloss,
            seconds=time.perf_counter() - start,
        )
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)
        if valid.auc > best_auc:
            best_auc = valid.auc
            best_epoch = epoch
            best_state = _snapshot(model)
        elif epoch - best_epoch >= config.patience:
            break
    _restore(model, best_state)
    return history


def write_history_csv(path: str | Path, history: Sequence[EpochRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_logloss", "valid_auc", "valid_logloss", "seconds"])
        for r in history:
            writer.writerow(
                [r.epoch, f"{r.train_logloss:.9f}", f"{r.valid_auc:.9f}", f"{r.valid_logloss:.9f}", f"{r.seconds:.3f}"]
            )


def rank_top_n(
    model: CTRModel,
    encode: Callable[[Sequence[LabeledExample]], EncodedBatch],
    user_id: int,
    context: ContextFields,
    candidate_items: Iterable[int],
    n: int,
    seen_items: Iterable[int] = (),
) -> list[int]:
    """Unseen candidates sorted by predicted probability descending, ties
    broken by ascending item id, truncated to n."""
    if n < 1:
        raise ConfigError("n must be at least 1")
    seen = set(seen_items)
    pool = sorted(set(candidate_items) - seen)
    if not pool:
        return []
    stubs = [
        LabeledExample(user_id=user_id, item_id=iid, context=context, label=0, original_rating=0)
        for iid in pool
    ]
    probs = predict_batch(model, encode(stubs))
    ranked = sorted(zip(pool, probs), key=lambda pair: (-pair[1], pair[0]))
    return [iid for iid, _ in ranked[:n]]
