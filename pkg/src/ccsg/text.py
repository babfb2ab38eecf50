"""Tokenization, noun candidates and dataset ingestion into statement groups."""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

MAX_TOKENS = 128
NOUN_TAGS = frozenset({"NOUN", "PROPN", "NN", "NNS", "NNP", "NNPS"})
ORIGINS = ("golden", "cf_pos", "cf_neg")

_PUNCT = frozenset(string.punctuation)


class DatasetError(ValueError):
    """Malformed dataset record."""


@dataclass(frozen=True)
class Statement:
    id: str
    text: str
    tokens: tuple[str, ...]
    label: bool
    group_id: str
    origin: str = "golden"
    pos_tags: tuple[str, ...] | None = None
    truncated: bool = False

    def __post_init__(self):
        if not self.tokens:
            raise ValueError(f"statement {self.id!r} has no tokens")
        if self.origin not in ORIGINS:
            raise ValueError(f"unknown origin {self.origin!r}")
        if self.pos_tags is not None and len(self.pos_tags) != len(self.tokens):
            raise ValueError(
                f"statement {self.id!r}: {len(self.pos_tags)} tags for {len(self.tokens)} tokens"
            )

    def with_token(self, position: int, token: str, **changes) -> "Statement":
        toks = list(self.tokens)
        toks[position] = token
        return replace(self, tokens=tuple(toks), text=" ".join(toks), **changes)


@dataclass
class StatementGroup:
    group_id: str
    statements: list[Statement] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.statements)


def tokenize(text: str, max_len: int = MAX_TOKENS) -> tuple[list[str], bool]:
    """Lowercase whitespace tokenization with edge punctuation split off.

    Returns ``(tokens, truncated)``.
    """
    tokens: list[str] = []
    for word in text.lower().split():
        lead: list[str] = []
        trail: list[str] = []
        while word and word[0] in _PUNCT:
            lead.append(word[0])
            word = word[1:]
        while word and word[-1] in _PUNCT:
            trail.append(word[-1])
            word = word[:-1]
        tokens.extend(lead)
        if word:
            tokens.append(word)
        tokens.extend(reversed(trail))
    if not tokens:
        raise ValueError("empty input after normalization")
    if len(tokens) > max_len:
        return tokens[:max_len], True
    return tokens, False


@lru_cache(maxsize=1)
def stopwords() -> frozenset[str]:
    data = resources.files("ccsg").joinpath("data/stopwords.txt").read_text(encoding="utf-8")
    return frozenset(w.strip() for w in data.splitlines() if w.strip())


def extract_nouns(statement: Statement, store=None) -> list[int]:
    """Indices of noun candidates, in order.

    Uses the statement's POS tags when present. Without tags, falls back to
    alphabetic non-stopword tokens that exist in ``store``.
    """
    if statement.pos_tags is not None:
        return [i for i, tag in enumerate(statement.pos_tags) if tag.upper() in NOUN_TAGS]
    stop = stopwords()
    out = []
    for i, tok in enumerate(statement.tokens):
        if not tok.isalpha() or tok in stop:
            continue
        if store is not None and tok not in store:
            continue
        out.append(i)
    return out


def make_statement(
    id: str,
    text: str,
    label: bool,
    group_id: str,
    tags: Sequence[str] | None = None,
    max_len: int = MAX_TOKENS,
    origin: str = "golden",
) -> Statement:
    tokens, truncated = tokenize(text, max_len)
    pos = None
    if tags is not None:
        tags = list(tags)
        if len(tags) < len(tokens) or (len(tags) != len(tokens) and not truncated):
            raise DatasetError(f"record {id!r}: {len(tags)} tags for {len(tokens)} tokens")
        pos = tuple(tags[: len(tokens)])
    return Statement(
        id=id,
        text=text,
        tokens=tuple(tokens),
        label=bool(label),
        group_id=group_id,
        origin=origin,
        pos_tags=pos,
        truncated=truncated,
    )


def _require(rec: dict, keys: Iterable[str], where: str) -> None:
    for key in keys:
        if key not in rec:
            raise DatasetError(f"{where}: missing field {key!r}")


def load_dataset(path, format: str = "statements", max_len: int = MAX_TOKENS) -> list[StatementGroup]:
    """Load newline-delimited JSON records into statement groups.

    ``statements`` records: ``{id, text, label, group[, tags]}``.
    ``multichoice`` records: ``{id, question, choices, answer_idx[, tags]}``;
    each choice becomes ``"<question> <choice>"`` and only ``answer_idx`` is true.
    """
    if format not in ("statements", "multichoice"):
        raise ValueError(f"unknown dataset format {format!r}")
    groups: dict[str, StatementGroup] = {}
    ids: set[str] = set()

    def add(stmt: Statement) -> None:
        if stmt.id in ids:
            raise DatasetError(f"duplicate id {stmt.id!r}")
        ids.add(stmt.id)
        groups.setdefault(stmt.group_id, StatementGroup(stmt.group_id)).statements.append(stmt)

    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
            where = f"{path}:{lineno} record {rec.get('id', '?')!r}"
            if format == "statements":
                _require(rec, ("id", "text", "label", "group"), where)
                add(make_statement(str(rec["id"]), rec["text"], rec["label"], str(rec["group"]),
                                   rec.get("tags"), max_len, origin=rec.get("origin", "golden")))
                continue
            _require(rec, ("id", "question", "choices", "answer_idx"), where)
            rid, choices, answer = str(rec["id"]), rec["choices"], rec["answer_idx"]
            if not isinstance(answer, int) or not 0 <= answer < len(choices):
                raise DatasetError(f"record {rid!r}: answer_idx {answer} out of range for {len(choices)} choices")
            if rid in groups:
                raise DatasetError(f"duplicate id {rid!r}")
            tags = rec.get("tags")
            for j, choice in enumerate(choices):
                add(make_statement(f"{rid}/{j}", f"{rec['question']} {choice}", j == answer, rid,
                                   tags[j] if tags else None, max_len))
    return list(groups.values())


def statement_record(stmt: Statement) -> dict:
    rec = {"id": stmt.id, "text": stmt.text, "label": stmt.label, "group": stmt.group_id}
    if stmt.pos_tags is not None:
        rec["tags"] = list(stmt.pos_tags)
    if stmt.origin != "golden":
        rec["origin"] = stmt.origin
    return rec


def save_dataset(groups: Iterable[StatementGroup], path, extra=None) -> None:
    """Write groups in the ``statements`` record format (one JSON object per line)."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for group in groups:
            for stmt in group.statements:
                rec = statement_record(stmt)
                if extra:
                    rec.update(extra)
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def flatten(groups: Iterable[StatementGroup]) -> list[Statement]:
    return [s for g in groups for s in g.statements]
