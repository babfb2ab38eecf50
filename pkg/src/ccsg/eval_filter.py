"""Accuracy, paired consistency, plausibility filtering and intervention (ACE) estimates."""

from __future__ import annotations

import json
import math
import logging
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .attribution import word_contribution
from .config import ConstructorConfig
from .constructor import neighbor_candidates, rank_keywords, select_initial_entities
from .embedding_store import EmbeddingStore
from .model import PEModelParams, forward
from .text import Statement, stopwords

log = logging.getLogger(__name__)


def predict(z: float) -> bool:
    """Logit sign rule: z > 0 is plausible, z <= 0 (including the tie) is not."""
    return z > 0.0


def score_exceeds(z: float, threshold: float) -> bool:
    """The rule sigmoid(z) > threshold, decided on the logit.

    Comparing rounded scores misfires near the cut: sigmoid(1e-16) is exactly
    0.5 in float64. The logit of 0.5 is exactly 0, so at the default threshold
    this coincides with ``predict``.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    if threshold == 0.0:
        return True
    if threshold == 1.0:
        return False
    return z > math.log(threshold / (1.0 - threshold))


def _forward_all(params: PEModelParams, statements: Sequence[Statement], threads: int = 1):
    if threads > 1 and len(statements) > 64:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda s: forward(params, s), statements))
    return [forward(params, s) for s in statements]


@dataclass
class EvalReport:
    accuracy: float
    correct: int
    total: int
    n_true: int
    n_false: int
    threshold: str = "z > 0"
    per_group: dict[str, float] = field(default_factory=dict)
    paired_consistency: float | None = None

    def to_record(self) -> dict:
        return asdict(self)

    def summary(self) -> str:
        lines = [
            f"accuracy            {self.accuracy:.4f}  ({self.correct}/{self.total})",
            f"statements          {self.n_true} true / {self.n_false} false",
            f"decision rule       {self.threshold}",
        ]
        if self.paired_consistency is not None:
            lines.append(f"paired consistency  {self.paired_consistency:.4f}")
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)


def accuracy(params: PEModelParams, statements: Sequence[Statement], threads: int = 1) -> EvalReport:
    if not statements:
        raise ValueError("empty dataset")
    caches = _forward_all(params, statements, threads)
    hits = [predict(c.z) == s.label for s, c in zip(statements, caches)]
    per_group: dict[str, list[bool]] = defaultdict(list)
    for s, hit in zip(statements, hits):
        per_group[s.group_id].append(hit)
    correct = sum(hits)
    n_true = sum(s.label for s in statements)
    return EvalReport(
        accuracy=correct / len(statements),
        correct=correct,
        total=len(statements),
        n_true=n_true,
        n_false=len(statements) - n_true,
        per_group={g: sum(v) / len(v) for g, v in per_group.items()},
    )


def threshold_accuracy(params: PEModelParams, statements: Sequence[Statement], threshold: float = 0.5) -> float:
    """Accuracy with the score rule s > threshold."""
    if not statements:
        raise ValueError("empty dataset")
    hits = [score_exceeds(forward(params, s).z, threshold) == s.label for s in statements]
    return sum(hits) / len(hits)


def paired_consistency(params: PEModelParams, pairs: Sequence[tuple[Statement, Statement]]) -> float:
    """Fraction of (true, false) pairs where both members are classified correctly."""
    if not pairs:
        raise ValueError("no pairs")
    both = 0
    for good, bad in pairs:
        if not (good.label and not bad.label):
            raise ValueError(f"pair ({good.id}, {bad.id}) is not one true and one false statement")
        if predict(forward(params, good).z) and not predict(forward(params, bad).z):
            both += 1
    return both / len(pairs)


def filter_statements(params: PEModelParams, statements: Sequence[Statement], threshold: float = 0.5):
    """Split into (retained, rejected) lists of (statement, score); retained means score > threshold."""
    retained, rejected = [], []
    for s in statements:
        cache = forward(params, s)
        (retained if score_exceeds(cache.z, threshold) else rejected).append((s, cache.s))
    return retained, rejected


# ---------------------------------------------------------------------------
# intervention analysis
# ---------------------------------------------------------------------------

@dataclass
class Intervention:
    statement: Statement
    position: int
    original: str
    replacement: str


@dataclass
class ACEResult:
    ace: float
    mean_intervened: float
    mean_original: float
    applied: int
    skipped: int
    interventions: list[Intervention] = field(default_factory=list)


def keyword_position(params: PEModelParams, statement: Statement, store: EmbeddingStore,
                     config: ConstructorConfig, mode: str = "gradient") -> int | None:
    cands = select_initial_entities(statement, store, config.initial_set_size)
    if not cands:
        return None
    contrib = word_contribution(params, statement, mode)
    return rank_keywords(cands, contrib, 1)[0]


def plan_intervention(params: PEModelParams, statement: Statement, intervention: str,
                      store: EmbeddingStore, config: ConstructorConfig,
                      mode: str = "gradient") -> Intervention | None:
    """Pick the position to intervene on and its replacement (nearest admissible neighbor).

    ``keyword`` targets the top-ranked keyword. ``context`` targets the first
    other content token (alphabetic, in the store, not a stopword) that has an
    admissible neighbor.
    """
    kw = keyword_position(params, statement, store, config, mode)
    if kw is None:
        return None
    if intervention == "keyword":
        positions = [kw]
    elif intervention == "context":
        stop = stopwords()
        positions = [i for i, t in enumerate(statement.tokens)
                     if i != kw and t.isalpha() and t not in stop and t in store]
    else:
        raise ValueError(f"unknown intervention {intervention!r}")
    for pos in positions:
        tok = statement.tokens[pos]
        nbrs = neighbor_candidates(tok, store, 1, config)
        if nbrs:
            return Intervention(statement, pos, tok, nbrs[0][0])
    return None


def estimate_ace(params: PEModelParams, statements: Sequence[Statement], intervention: str,
                 store: EmbeddingStore, config: ConstructorConfig | None = None,
                 mode: str = "gradient") -> ACEResult:
    """Mean score after do(token := neighbor) minus mean original score.

    Only statements where the intervention applies enter either mean.
    """
    config = config or ConstructorConfig()
    plans, skipped = [], 0
    for s in statements:
        plan = plan_intervention(params, s, intervention, store, config, mode)
        if plan is None:
            skipped += 1
        else:
            plans.append(plan)
    if not plans:
        raise ValueError(f"no statement admits a {intervention} intervention")
    after = [forward(params, p.statement.with_token(p.position, p.replacement)).s for p in plans]
    before = [forward(params, p.statement).s for p in plans]
    m_after = sum(after) / len(after)
    m_before = sum(before) / len(before)
    return ACEResult(m_after - m_before, m_after, m_before, len(plans), skipped, plans)
