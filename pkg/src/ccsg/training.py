"""Batch assembly, binary + supervised contrastive objective, and the epoch loop."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .attribution import ContributionMap, contributions_from_cache
from .config import TrainConfig
from .constructor import AugmentedBatch, construct, derive_seed
from .embedding_store import EmbeddingStore
from .model import NonFiniteError, PEModelParams, backward, forward, init_params
from .text import Statement, StatementGroup, flatten

log = logging.getLogger(__name__)


class ZeroNormError(ValueError):
    """A representation with zero norm reached the contrastive loss."""


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def binary_loss(s: float, y: bool) -> tuple[float, float]:
    """Cross-entropy of score ``s`` against label ``y`` and its derivative in ``s``."""
    if y:
        return -math.log(s), -1.0 / s
    return -math.log1p(-s), 1.0 / (1.0 - s)


def _cos_row(h: np.ndarray, others: np.ndarray):
    hn = np.linalg.norm(h)
    on = np.linalg.norm(others, axis=1)
    if hn == 0.0 or np.any(on == 0.0):
        raise ZeroNormError("zero-norm representation in contrastive loss")
    cos = (others @ h) / (on * hn)
    return cos, hn, on


def contrastive_loss(h_i, positives, negatives, tau: float):
    """Supervised contrastive loss of one anchor against its positive and negative sets.

        loss = -log( sum_P exp(cos/tau) / sum_{P+N} exp(cos/tau) )

    Returns ``(loss, grad_anchor, grad_positives, grad_negatives)``. With no
    negatives the loss is exactly 0; with no positives the anchor contributes
    nothing (loss 0, zero gradients).
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    h_i = np.asarray(h_i, dtype=np.float64)
    P = np.asarray(positives, dtype=np.float64).reshape(-1, h_i.size)
    N = np.asarray(negatives, dtype=np.float64).reshape(-1, h_i.size)
    zero = (0.0, np.zeros_like(h_i), np.zeros_like(P), np.zeros_like(N))
    if len(P) == 0:
        return zero
    others = np.vstack([P, N])
    cos, hn, on = _cos_row(h_i, others)
    if len(N) == 0:
        return zero
    logits = cos / tau
    # separate shifts: positives can sit far below the overall max
    shift = logits.max()
    e = np.exp(logits - shift)
    shift_p = logits[: len(P)].max()
    e_p = np.exp(logits[: len(P)] - shift_p)
    loss = (math.log(e.sum()) + shift) - (math.log(e_p.sum()) + shift_p)

    # d loss / d logit_k = softmax_all(k) - [k in P] softmax_P(k)
    dlogit = e / e.sum()
    dlogit[: len(P)] -= e_p / e_p.sum()
    dcos = dlogit / tau
    # d cos(h, o) / d h = o / (|h||o|) - cos h / |h|^2
    g_i = (dcos / (on * hn)) @ others - (dcos @ cos) * h_i / hn**2
    g_o = (dcos / (on * hn))[:, None] * h_i[None, :] - (dcos * cos / on**2)[:, None] * others
    return loss, g_i, g_o[: len(P)], g_o[len(P):]


def _mean(xs) -> float:
    return sum(xs) / len(xs) if xs else 0.0


def total_loss(binary_losses: Sequence[float], contrastive_losses: Sequence[float],
               alpha: float = 1.0, beta: float = 0.25) -> float:
    """alpha * mean(binary) + beta * mean(contrastive); empty components count as 0."""
    return alpha * _mean(binary_losses) + beta * _mean(contrastive_losses)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

def make_batches(groups: Sequence[StatementGroup], B_G: int = 4, B_S: int = 8,
                 seed: int = 0) -> list[list[StatementGroup]]:
    """Shuffle groups and greedily pack whole groups under the B_G / B_S caps.

    A group larger than B_S becomes its own (oversized) batch.
    """
    if not groups:
        raise ValueError("empty dataset")
    order = np.random.default_rng(seed).permutation(len(groups))
    batches: list[list[StatementGroup]] = []
    cur: list[StatementGroup] = []
    n_stmts = 0
    for gi in order:
        g = groups[int(gi)]
        if len(g) > B_S:
            log.warning("group %s has %d statements, more than B_S=%d; batching it alone",
                        g.group_id, len(g), B_S)
            if cur:
                batches.append(cur)
                cur, n_stmts = [], 0
            batches.append([g])
            continue
        if cur and (len(cur) + 1 > B_G or n_stmts + len(g) > B_S):
            batches.append(cur)
            cur, n_stmts = [], 0
        cur.append(g)
        n_stmts += len(g)
    if cur:
        batches.append(cur)
    return batches


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class Adam:
    def __init__(self, params: PEModelParams, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.arrays().items()}
        self.v = {k: np.zeros_like(v) for k, v in params.arrays().items()}

    def step(self, params: PEModelParams, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, p in params.arrays().items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        params.version += 1
        params.check_finite()


class GradAccumulator:
    def __init__(self, params: PEModelParams):
        self.g = {k: np.zeros_like(v) for k, v in params.arrays().items()}

    def add(self, pg) -> None:
        np.add.at(self.g["E"], pg.E_rows, pg.E)
        self.g["W1"] += pg.W1
        self.g["b1"] += pg.b1
        self.g["w2"] += pg.w2
        self.g["b2"] += pg.b2


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class Member:
    statement: Statement
    dropout_rate: float
    seed: int
    kind: str  # golden | cf_pos | cf_neg

    @property
    def label(self) -> bool:
        return self.statement.label


def batch_members(anchors: Sequence[Statement], aug: AugmentedBatch | None) -> list[Member]:
    members = [Member(a, 0.0, 0, "golden") for a in anchors]
    if aug is not None:
        for cs in aug.sets:
            members.extend(Member(p.statement, p.dropout_rate, p.seed, "cf_pos") for p in cs.positives)
            members.extend(Member(n, 0.0, 0, "cf_neg") for n in cs.negatives)
    return members


def contrastive_sets(labels: Sequence[bool], i: int, usable: Sequence[bool]) -> tuple[list[int], list[int]]:
    """P(i): same-label members other than i; N(i): different-label members."""
    pos = [m for m, y in enumerate(labels) if usable[m] and m != i and y == labels[i]]
    neg = [m for m, y in enumerate(labels) if usable[m] and y != labels[i]]
    return pos, neg


@dataclass
class BatchResult:
    L_bin: float
    L_cot: float
    L: float
    counters: Counter


def train_step(params: PEModelParams, opt: Adam, anchors: Sequence[Statement],
               aug: AugmentedBatch | None, config: TrainConfig,
               contributions: ContributionMap | None = None) -> BatchResult:
    """Forward every member, build the weighted loss, backpropagate and take one Adam step."""
    members = batch_members(anchors, aug)
    caches = [forward(params, m.statement, m.dropout_rate, m.seed) for m in members]
    n_anchor = len(anchors)
    counters = Counter()

    grad_s = [0.0] * len(members)
    bin_losses = []
    for i in range(n_anchor):
        loss, g = binary_loss(caches[i].s, members[i].label)
        bin_losses.append(loss)
        grad_s[i] = config.alpha * g / n_anchor

    if contributions is not None:
        for i in range(n_anchor):
            contributions.record(members[i].statement, contributions_from_cache(
                params, caches[i], members[i].label, config.contribution_mode))

    grad_h = [None] * len(members)
    cot_losses = []
    if not config.no_ccsg and config.beta > 0:
        usable = [bool(np.any(c.hidden != 0.0)) for c in caches]
        counters["zero_norm_members"] += usable.count(False)
        labels = [m.label for m in members]
        eligible = []
        for i in range(n_anchor):
            if not usable[i]:
                counters["skipped_anchor_zero_norm"] += 1
                continue
            P, N = contrastive_sets(labels, i, usable)
            if not P:
                counters["skipped_anchor_empty_positive"] += 1
                continue
            eligible.append((i, P, N))
        for i, P, N in eligible:
            loss, g_i, g_p, g_n = contrastive_loss(
                caches[i].hidden, [caches[k].hidden for k in P], [caches[k].hidden for k in N], config.tau)
            cot_losses.append(loss)
            w = config.beta / len(eligible)
            for k, g in [(i, g_i), *zip(P, g_p), *zip(N, g_n)]:
                grad_h[k] = w * g if grad_h[k] is None else grad_h[k] + w * g

    total = total_loss(bin_losses, cot_losses, config.alpha, config.beta)
    if not math.isfinite(total):
        raise NonFiniteError(
            f"non-finite loss {total} (binary={bin_losses}, contrastive={cot_losses}) "
            f"for statements {[a.id for a in anchors]}"
        )

    acc = GradAccumulator(params)
    for k, cache in enumerate(caches):
        if grad_s[k] == 0.0 and grad_h[k] is None:
            continue
        pg, _ = backward(params, cache, grad_s[k], grad_h[k])
        acc.add(pg)
    opt.step(params, acc.g)
    return BatchResult(_mean(bin_losses), _mean(cot_losses), total, counters)


@dataclass
class TrainResult:
    params: PEModelParams
    metrics: list[dict] = field(default_factory=list)
    contributions: ContributionMap | None = None
    config: TrainConfig | None = None


def split_holdout(groups: Sequence[StatementGroup], fraction: float, seed: int):
    if fraction <= 0 or len(groups) < 2:
        return list(groups), []
    n_hold = max(1, int(round(fraction * len(groups))))
    perm = np.random.default_rng(derive_seed(seed, "holdout") % 2**32).permutation(len(groups))
    hold = set(int(i) for i in perm[:n_hold])
    return ([g for i, g in enumerate(groups) if i not in hold],
            [g for i, g in enumerate(groups) if i in hold])


def train(config: TrainConfig, groups: Sequence[StatementGroup], store: EmbeddingStore,
          heldout: Sequence[StatementGroup] | None = None, pairs=None,
          on_record: Callable[[dict], None] | None = None,
          params: PEModelParams | None = None) -> TrainResult:
    """Train a plausibility model.

    Epoch 1 has no substitution negatives (there are no contributions yet);
    from epoch 2 on the constructor uses the contributions recorded during the
    previous epoch. With ``config.no_ccsg`` the constructor and contrastive
    term are bypassed and this is plain binary cross-entropy training.
    """
    from .eval_filter import accuracy, paired_consistency

    if heldout is None:
        groups, heldout = split_holdout(groups, config.holdout_fraction, config.seed)
    heldout_stmts = flatten(heldout) if heldout else []
    train_stmts = flatten(groups)
    if not train_stmts:
        raise ValueError("empty dataset")
    if not any(t in store for s in train_stmts for t in s.tokens):
        log.warning("dataset and vector vocabulary are disjoint; every token maps to the unknown row")

    params = params or init_params(store, hidden=config.hidden, seed=config.seed)
    opt = Adam(params, config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps)
    ccfg = config.constructor()
    metrics: list[dict] = []

    def emit(rec):
        metrics.append(rec)
        if on_record is not None:
            on_record(rec)

    prev: ContributionMap | None = None
    for epoch in range(1, config.epochs + 1):
        cur = ContributionMap(epoch_tag=epoch)
        batches = make_batches(groups, config.B_G, config.B_S, derive_seed(config.seed, "batches", epoch) % 2**32)
        epoch_counts = Counter()
        sums = {"L_bin": 0.0, "L_cot": 0.0, "L": 0.0}
        for b, batch in enumerate(batches):
            anchors = flatten(batch)
            aug = None
            if not config.no_ccsg:
                aug = construct(anchors, store, prev, ccfg, epoch=epoch, seed=config.seed)
            res = train_step(params, opt, anchors, aug, config, cur)
            counts = Counter(res.counters)
            if aug is not None:
                counts.update(aug.counters)
            epoch_counts.update(counts)
            for key in sums:
                sums[key] += getattr(res, key)
            emit({"kind": "batch", "epoch": epoch, "batch": b, "L_bin": res.L_bin, "L_cot": res.L_cot,
                  "L": res.L, "heldout_acc": None, "counters": dict(sorted(counts.items()))})
        rec = {"kind": "epoch", "epoch": epoch, "batch": None}
        rec.update({k: v / len(batches) for k, v in sums.items()})
        rec["heldout_acc"] = accuracy(params, heldout_stmts).accuracy if heldout_stmts else None
        if pairs:
            rec["heldout_paired"] = paired_consistency(params, pairs)
        rec["counters"] = dict(sorted(epoch_counts.items()))
        emit(rec)
        log.info("epoch %d: L=%.4f L_bin=%.4f L_cot=%.4f heldout_acc=%s", epoch, rec["L"],
                 rec["L_bin"], rec["L_cot"], rec["heldout_acc"])
        prev = cur
    return TrainResult(params, metrics, prev, config)
