"""Per-token word contributions and the token-contribution report."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .model import ForwardCache, PEModelParams, backward, forward
from .text import Statement

REPORT_COLUMNS = ("statement_id", "position", "token", "score", "normalized")


@dataclass
class ContributionMap:
    """statement id -> [(token, score), ...], tagged with the epoch that produced it."""

    epoch_tag: int = 0
    entries: dict[str, list[tuple[str, float]]] = field(default_factory=dict)

    def __contains__(self, statement_id: str) -> bool:
        return statement_id in self.entries

    def __getitem__(self, statement_id: str) -> list[tuple[str, float]]:
        return self.entries[statement_id]

    def __len__(self) -> int:
        return len(self.entries)

    def scores(self, statement_id: str) -> list[float]:
        return [s for _, s in self.entries[statement_id]]

    def record(self, statement: Statement, scores: Iterable[float]) -> None:
        scores = [float(s) for s in scores]
        if len(scores) != len(statement.tokens):
            raise ValueError(f"{len(scores)} scores for {len(statement.tokens)} tokens")
        if not all(np.isfinite(scores)):
            raise ValueError(f"non-finite contribution for {statement.id!r}")
        self.entries[statement.id] = list(zip(statement.tokens, scores))


def contributions_from_cache(params: PEModelParams, cache: ForwardCache, label: bool,
                             mode: str = "gradient") -> np.ndarray:
    """Contribution of each token to P(label) from an existing forward pass.

    ``gradient`` sums dP/de_i over embedding components. ``grad_input`` weights
    the gradient by the embedding itself before summing.
    """
    _, tok = backward(params, cache, grad_s=1.0 if label else -1.0)
    if mode == "gradient":
        return tok.summed()
    if mode == "grad_input":
        return (tok.grads * cache.raw).sum(axis=1)
    raise ValueError(f"unknown contribution mode {mode!r}")


def word_contribution(params: PEModelParams, statement: Statement,
                      mode: str = "gradient") -> list[tuple[str, float]]:
    cache = forward(params, statement)
    scores = contributions_from_cache(params, cache, statement.label, mode)
    return list(zip(statement.tokens, (float(s) for s in scores)))


def contribution_map(params: PEModelParams, statements: Iterable[Statement], epoch: int = 0,
                     mode: str = "gradient") -> ContributionMap:
    cmap = ContributionMap(epoch_tag=epoch)
    for stmt in statements:
        cmap.record(stmt, [s for _, s in word_contribution(params, stmt, mode)])
    return cmap


def report_rows(entries: ContributionMap | dict) -> list[tuple]:
    items = entries.entries if isinstance(entries, ContributionMap) else entries
    rows = []
    for sid, pairs in items.items():
        total = sum(abs(s) for _, s in pairs)
        for pos, (tok, s) in enumerate(pairs):
            rows.append((sid, pos, tok, s, s / total if total > 0 else 0.0))
    return rows


def emit_contribution_report(entries: ContributionMap | dict, path, meta: dict | None = None) -> list[tuple]:
    """Write a tab-separated table: statement_id, position, token, score, normalized.

    ``normalized`` is score / sum(|score|) within the statement (0 when that sum is 0).
    ``meta`` entries are written first as ``# key = value`` comment lines.
    """
    rows = report_rows(entries)
    if not rows:
        raise ValueError("no contribution entries to report")
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        for k, v in (meta or {}).items():
            fh.write(f"# {k} = {v}\n")
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for sid, pos, tok, s, norm in rows:
            writer.writerow((sid, pos, tok, repr(float(s)), repr(float(norm))))
    return rows
