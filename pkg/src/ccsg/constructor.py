"""Counterfactual sample construction.

Negatives replace a high-contribution noun with an embedding neighbor and flip
the label. Positives are the same statement re-encoded under a seeded,
low-rate dropout mask.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .attribution import ContributionMap
from .config import ConstructorConfig
from .embedding_store import EmbeddingStore, cosine
from .text import Statement, extract_nouns, stopwords


class MissingContributionError(KeyError):
    """Keyword ranking was requested for a statement with no recorded contributions."""


@dataclass(frozen=True)
class Substitution:
    position: int
    original: str
    replacement: str
    similarity: float


@dataclass(frozen=True)
class PositiveView:
    statement: Statement
    seed: int
    dropout_rate: float

    @property
    def label(self) -> bool:
        return self.statement.label


@dataclass
class CounterfactualSet:
    anchor_id: str
    positives: list[PositiveView] = field(default_factory=list)
    negatives: list[Statement] = field(default_factory=list)
    provenance: list[Substitution] = field(default_factory=list)


@dataclass
class AugmentedBatch:
    anchors: list[Statement]
    sets: list[CounterfactualSet]
    epoch: int
    counters: Counter = field(default_factory=Counter)

    @property
    def negatives(self) -> list[Statement]:
        return [n for cs in self.sets for n in cs.negatives]

    @property
    def positives(self) -> list[PositiveView]:
        return [p for cs in self.sets for p in cs.positives]


def derive_seed(*parts) -> int:
    digest = hashlib.blake2b(":".join(str(p) for p in parts).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


def select_initial_entities(statement: Statement, store: EmbeddingStore, size: int = 5) -> list[int]:
    """Top-``size`` in-vocabulary nouns by cosine similarity to the rest of the statement.

    The centroid for noun i is the mean VKB vector of every other in-vocabulary token.
    """
    in_vocab = [j for j, t in enumerate(statement.tokens) if t in store]
    nouns = [i for i in extract_nouns(statement, store) if statement.tokens[i] in store]
    scored = []
    for i in nouns:
        others = [store.vector(statement.tokens[j]) for j in in_vocab if j != i]
        sim = cosine(store.vector(statement.tokens[i]), np.mean(others, axis=0)) if others else 0.0
        scored.append((sim, i))
    scored.sort(key=lambda si: (-si[0], si[1]))
    return [i for _, i in scored[:size]]


def rank_keywords(candidates: Sequence[int], contributions, k: int) -> list[int]:
    """The ``k`` candidates with the largest contribution; ties go to the earlier position."""
    if contributions is None:
        raise MissingContributionError("no contributions recorded for this statement")
    scores = [c[1] if isinstance(c, tuple) else c for c in contributions]
    return sorted(candidates, key=lambda i: (-scores[i], i))[:k]


def admissible(keyword: str, candidate: str, config: ConstructorConfig) -> bool:
    g = config.prefix_guard
    if candidate[:g] == keyword[:g]:
        return False
    if config.exclude_stopwords and candidate in stopwords():
        return False
    if config.alpha_only and not candidate.isalpha():
        return False
    return True


def neighbor_candidates(keyword: str, store: EmbeddingStore, n: int,
                        config: ConstructorConfig) -> list[tuple[str, float]]:
    ranked = store.nearest(keyword, k=len(store))
    return [(t, s) for t, s in ranked if admissible(keyword, t, config)][:n]


def substitute(statement: Statement, keyword_idx: int, store: EmbeddingStore, n: int = 1,
               config: ConstructorConfig | None = None) -> tuple[list[Statement], list[Substitution], int]:
    """Label-flipped copies of ``statement`` with the keyword swapped for its nearest admissible neighbors.

    Returns ``(negatives, provenance, shortfall)`` where shortfall counts the
    requested neighbors that could not be found.
    """
    config = config or ConstructorConfig()
    keyword = statement.tokens[keyword_idx]
    if keyword not in store:
        raise KeyError(f"keyword {keyword!r} not in store")
    negatives, prov = [], []
    for rank, (tok, sim) in enumerate(neighbor_candidates(keyword, store, n, config)):
        negatives.append(statement.with_token(
            keyword_idx, tok,
            id=f"{statement.id}~neg{keyword_idx}.{rank}",
            origin="cf_neg",
            label=not statement.label,
        ))
        prov.append(Substitution(keyword_idx, keyword, tok, sim))
    return negatives, prov, n - len(negatives)


def make_positive(statement: Statement, R_p_drop: float = 0.05, seed: int = 0) -> PositiveView:
    if not 0.0 < R_p_drop < 1.0:
        raise ValueError(f"R_p_drop must be in (0, 1), got {R_p_drop}")
    return PositiveView(statement, int(seed), float(R_p_drop))


def construct(anchors: Sequence[Statement], store: EmbeddingStore,
              prev_contributions: ContributionMap | None, config: ConstructorConfig | None = None,
              epoch: int = 1, seed: int = 0) -> AugmentedBatch:
    """Attach one dropout positive to every anchor and, once contributions exist, substitution negatives.

    The first epoch never gets negatives: no earlier epoch exists whose
    contributions could pick the keywords, so any map passed in is ignored.
    """
    config = config or ConstructorConfig()
    if epoch <= 1:
        prev_contributions = None
    batch = AugmentedBatch(anchors=list(anchors), sets=[], epoch=epoch)
    c = batch.counters
    for anchor in anchors:
        cs = CounterfactualSet(anchor.id)
        if config.R_p_drop > 0:
            cs.positives.append(make_positive(anchor, config.R_p_drop, derive_seed(seed, epoch, anchor.id)))
            c["positives"] += 1
        if prev_contributions is not None:
            cands = select_initial_entities(anchor, store, config.initial_set_size)
            if not cands:
                c["no_candidates"] += 1
                c["shortfall"] += 1
            else:
                if anchor.id not in prev_contributions:
                    raise MissingContributionError(anchor.id)
                keywords = rank_keywords(cands, prev_contributions[anchor.id], config.top_k)
                for kw in keywords:
                    negs, prov, short = substitute(anchor, kw, store, config.neighbors_per_keyword, config)
                    cs.negatives.extend(negs)
                    cs.provenance.extend(prov)
                    c["neighbor_shortfall"] += short
                    c["shortfall"] += short
                c["negatives"] += len(cs.negatives)
        batch.sets.append(cs)
    return batch
