"""Template-based rendering of user/item/context records into sentences.

Each entity is verbalized independently of the others, from a fixed,
versioned template file. Output is deterministic: the same record always
produces byte-identical text, which downstream embedding caches rely on.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

from .data import ContextFields, RawItem, RawUser
from .errors import ConfigError, VerbrecError


@dataclass(frozen=True)
class VerbalDoc:
    entity_kind: str  # "user" | "item" | "context"
    entity_key: str
    text: str


@dataclass(frozen=True)
class CodeMaps:
    """Code-to-phrase tables for the ML-1M age buckets and occupations."""

    occupation_map: dict[int, str]
    age_map: dict[int, str]


class TemplateSet:
    """Parsed template file: named phrases with {placeholder} slots."""

    def __init__(self, version: str, entries: dict[str, str]):
        self.version = version
        self.entries = entries

    def __getitem__(self, key: str) -> str:
        try:
            return self.entries[key]
        except KeyError:
            raise ConfigError(f"template set {self.version!r} has no entry {key!r}") from None

    def code_maps(self) -> CodeMaps:
        occ = {
            int(k.rsplit(".", 1)[1]): v
            for k, v in self.entries.items()
            if k.startswith("user.occupation.") and k.rsplit(".", 1)[1].isdigit()
        }
        age = {
            int(k.rsplit(".", 1)[1]): v
            for k, v in self.entries.items()
            if k.startswith("user.age.") and k.rsplit(".", 1)[1].isdigit()
        }
        return CodeMaps(occupation_map=occ, age_map=age)


def load_templates(version: str = "v1") -> TemplateSet:
    ref = resources.files("verbrec").joinpath(f"templates/{version}.txt")
    if not ref.is_file():
        raise ConfigError(f"unknown template version {version!r}")
    entries: dict[str, str] = {}
    for raw in ref.read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition(" = ")
        if not sep:
            raise ConfigError(f"template {version}: bad line {raw!r}")
        entries[key.strip()] = value
    return TemplateSet(version, entries)


def _finish(kind: str, key: str, text: str) -> VerbalDoc:
    if "{" in text or "}" in text:
        raise VerbrecError(f"unresolved placeholder in {kind} template output: {text!r}")
    if not text:
        raise VerbrecError(f"empty verbalization for {key}")
    return VerbalDoc(entity_kind=kind, entity_key=key, text=text)


def verbalize_user(user: RawUser, templates: TemplateSet) -> VerbalDoc:
    maps = templates.code_maps()
    gender = templates[f"user.gender.{user.gender}"]
    if user.age_code in maps.age_map:
        age_clause = templates["user.age_clause"].format(age_phrase=maps.age_map[user.age_code])
    else:
        age_clause = templates["user.age_unknown"]
    occupation_clause = maps.occupation_map.get(
        user.occupation_code, templates["user.occupation.unknown"]
    )
    text = templates["user.sentence"].format(
        gender=gender, age_clause=age_clause, occupation_clause=occupation_clause, zip=user.zip
    )
    return _finish("user", f"user:{user.user_id}", text)


def _join_oxford(words: tuple[str, ...]) -> str:
    if len(words) == 2:
        return f"{words[0]} and {words[1]}"
    return ", ".join(words[:-1]) + f", and {words[-1]}"


def verbalize_item(item: RawItem, templates: TemplateSet) -> VerbalDoc:
    if item.release_year is not None:
        year_clause = templates["item.year_clause"].format(year=item.release_year)
    else:
        year_clause = ""
    if not item.genres:
        genre_clause = templates["item.genres_none"]
    elif len(item.genres) == 1:
        genre_clause = templates["item.genre_one"].format(genre=item.genres[0])
    else:
        genre_clause = templates["item.genres_many"].format(genres=_join_oxford(item.genres))
    text = templates["item.sentence"].format(
        title=item.title, year_clause=year_clause, genre_clause=genre_clause
    )
    return _finish("item", f"item:{item.item_id}", text)


def verbalize_context(ctx: ContextFields, templates: TemplateSet) -> VerbalDoc:
    if ctx.daypart == "late-night":
        text = templates["context.late_night"].format(weekday=ctx.day_of_week)
    else:
        text = templates["context.sentence"].format(weekday=ctx.day_of_week, daypart=ctx.daypart)
    return _finish("context", f"context:{ctx.day_of_week}-{ctx.daypart}", text)
