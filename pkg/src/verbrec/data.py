"""MovieLens ML-1M parsing, labeling, context derivation, and splits.

Understands the three `::`-separated latin-1 files (users.dat, movies.dat,
ratings.dat). Ratings are binarized into click labels with an inclusive
threshold, contexts are derived from the rating timestamp in UTC, and
train/valid/test splits are a deterministic seeded shuffle.
"""

from __future__ import annotations

import math
import random
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

from .errors import (
    BadRatios,
    DuplicateItemId,
    DuplicateUserId,
    InvalidCode,
    MalformedLine,
    RatingOutOfRange,
    UnknownReference,
)

AGE_CODES = (1, 18, 25, 35, 45, 50, 56)
OCCUPATION_CODES = tuple(range(21))
WEEKDAYS = ("Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday")
DAYPARTS = ("late-night", "morning", "afternoon", "evening")

_YEAR_SUFFIX = re.compile(r"^(?P<title>.*) \((?P<year>\d{4})\)$")


@dataclass(frozen=True)
class RawUser:
    user_id: int
    gender: str  # "F" or "M"
    age_code: int
    occupation_code: int
    zip: str


@dataclass(frozen=True)
class RawItem:
    item_id: int
    title: str
    release_year: int | None
    genres: tuple[str, ...]


@dataclass(frozen=True)
class RawInteraction:
    user_id: int
    item_id: int
    rating: int
    timestamp: int


@dataclass(frozen=True)
class ContextFields:
    hour_of_day: int
    day_of_week: str
    daypart: str


@dataclass(frozen=True)
class LabeledExample:
    user_id: int
    item_id: int
    context: ContextFields
    label: int
    original_rating: int


@dataclass
class SplitStats:
    num_users: int
    num_items: int
    num_examples: int


@dataclass
class DatasetSplit:
    train: list[LabeledExample]
    valid: list[LabeledExample]
    test: list[LabeledExample]
    stats: SplitStats = field(default_factory=lambda: SplitStats(0, 0, 0))


def _read_lines(path: str | Path) -> Iterable[tuple[int, str]]:
    with open(path, "r", encoding="latin-1") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if line:
                yield line_no, line


def parse_users(path: str | Path) -> list[RawUser]:
    """Parse users.dat lines of the form ``id::gender::age::occupation::zip``."""
    users: list[RawUser] = []
    seen: set[int] = set()
    for line_no, line in _read_lines(path):
        parts = line.split("::")
        if len(parts) != 5:
            raise MalformedLine(str(path), line_no, f"expected 5 fields, got {len(parts)}")
        uid_s, gender, age_s, occ_s, zip_code = parts
        if not uid_s.isdigit() or int(uid_s) <= 0:
            raise MalformedLine(str(path), line_no, f"non-numeric or non-positive user id {uid_s!r}")
        if gender not in ("F", "M"):
            raise MalformedLine(str(path), line_no, f"gender must be F or M, got {gender!r}")
        if not age_s.lstrip("-").isdigit() or not occ_s.lstrip("-").isdigit():
            raise MalformedLine(str(path), line_no, "age and occupation must be integers")
        age, occ = int(age_s), int(occ_s)
        if age not in AGE_CODES:
            raise InvalidCode(str(path), line_no, f"age code {age} not in {AGE_CODES}")
        if occ not in OCCUPATION_CODES:
            raise InvalidCode(str(path), line_no, f"occupation code {occ} not in 0..20")
        uid = int(uid_s)
        if uid in seen:
            raise DuplicateUserId(f"{path}:{line_no}: user id {uid} repeated")
        seen.add(uid)
        users.append(RawUser(uid, gender, age, occ, zip_code))
    return users


def parse_items(path: str | Path) -> list[RawItem]:
    """Parse movies.dat lines of the form ``id::Title (YYYY)::Genre|Genre``.

    A trailing " (YYYY)" is split off into release_year; titles without it
    are kept verbatim with release_year absent. Genres are deduplicated
    preserving first occurrence.
    """
    items: list[RawItem] = []
    seen: set[int] = set()
    for line_no, line in _read_lines(path):
        parts = line.split("::")
        if len(parts) != 3:
            raise MalformedLine(str(path), line_no, f"expected 3 fields, got {len(parts)}")
        iid_s, raw_title, genre_s = parts
        if not iid_s.isdigit() or int(iid_s) <= 0:
            raise MalformedLine(str(path), line_no, f"non-numeric or non-positive item id {iid_s!r}")
        iid = int(iid_s)
        if iid in seen:
            raise DuplicateItemId(f"{path}:{line_no}: item id {iid} repeated")
        seen.add(iid)
        m = _YEAR_SUFFIX.match(raw_title)
        if m:
            title, year = m.group("title"), int(m.group("year"))
        else:
            title, year = raw_title, None
        genres: list[str] = []
        for g in genre_s.split("|"):
            g = g.strip()
            if g and g not in genres:
                genres.append(g)
        items.append(RawItem(iid, title, year, tuple(genres)))
    return items


def parse_ratings(path: str | Path) -> list[RawInteraction]:
    """Parse ratings.dat lines of the form ``user::item::rating::timestamp``."""
    out: list[RawInteraction] = []
    for line_no, line in _read_lines(path):
        parts = line.split("::")
        if len(parts) != 4:
            raise MalformedLine(str(path), line_no, f"expected 4 fields, got {len(parts)}")
        if not all(p.isdigit() for p in parts):
            raise MalformedLine(str(path), line_no, "all rating fields must be non-negative integers")
        uid, iid, rating, ts = (int(p) for p in parts)
        if not 1 <= rating <= 5:
            raise RatingOutOfRange(f"{path}:{line_no}: rating {rating} outside [1,5]")
        out.append(RawInteraction(uid, iid, rating, ts))
    return out


def format_user(u: RawUser) -> str:
    return f"{u.user_id}::{u.gender}::{u.age_code}::{u.occupation_code}::{u.zip}"


def format_item(i: RawItem) -> str:
    title = f"{i.title} ({i.release_year})" if i.release_year is not None else i.title
    return f"{i.item_id}::{title}::{'|'.join(i.genres)}"


def format_rating(r: RawInteraction) -> str:
    return f"{r.user_id}::{r.item_id}::{r.rating}::{r.timestamp}"


def binarize_label(rating: int, threshold: int = 4) -> int:
    """1 if rating >= threshold else 0. The boundary is inclusive."""
    if not 1 <= rating <= 5:
        raise RatingOutOfRange(f"rating {rating} outside [1,5]")
    return 1 if rating >= threshold else 0


def derive_context(timestamp: int) -> ContextFields:
    """Hour-of-day, weekday, and daypart for a Unix timestamp, in UTC.

    Daypart bands: 0-5 late-night, 6-11 morning, 12-17 afternoon,
    18-23 evening.
    """
    if timestamp < 0:
        raise ValueError(f"timestamp must be >= 0, got {timestamp}")
    dt = datetime.fromtimestamp(timestamp, tz=timezone.utc)
    hour = dt.hour
    daypart = DAYPARTS[hour // 6]
    return ContextFields(hour_of_day=hour, day_of_week=WEEKDAYS[dt.weekday()], daypart=daypart)


def build_examples(
    users: Sequence[RawUser],
    items: Sequence[RawItem],
    ratings: Sequence[RawInteraction],
    threshold: int = 4,
) -> list[LabeledExample]:
    """Join interactions against parsed users/items and attach labels/contexts."""
    user_ids = {u.user_id for u in users}
    item_ids = {i.item_id for i in items}
    examples: list[LabeledExample] = []
    for r in ratings:
        if r.user_id not in user_ids:
            raise UnknownReference(f"interaction references unknown user id {r.user_id}")
        if r.item_id not in item_ids:
            raise UnknownReference(f"interaction references unknown item id {r.item_id}")
        examples.append(
            LabeledExample(
                user_id=r.user_id,
                item_id=r.item_id,
                context=derive_context(r.timestamp),
                label=binarize_label(r.rating, threshold),
                original_rating=r.rating,
            )
        )
    return examples


def split_dataset(
    examples: Sequence[LabeledExample],
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> DatasetSplit:
    """Deterministic seeded shuffle into train/valid/test partitions.

    Sizes are floor(n * ratio) for valid and test with the remainder going
    to train. The same seed always produces identical membership.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise BadRatios(f"ratios must be three positive numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatios(f"ratios must sum to 1.0, got {sum(ratios)}")
    n = len(examples)
    order = list(range(n))
    random.Random(seed).shuffle(order)
    n_valid = math.floor(n * ratios[1])
    n_test = math.floor(n * ratios[2])
    n_train = n - n_valid - n_test
    shuffled = [examples[i] for i in order]
    train = shuffled[:n_train]
    valid = shuffled[n_train : n_train + n_valid]
    test = shuffled[n_train + n_valid :]
    users = {e.user_id for e in examples}
    items = {e.item_id for e in examples}
    return DatasetSplit(
        train=train,
        valid=valid,
        test=test,
        stats=SplitStats(num_users=len(users), num_items=len(items), num_examples=n),
    )
