import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccsg.attribution import ContributionMap
from ccsg.config import ConstructorConfig
from ccsg.constructor import (
    MissingContributionError,
    admissible,
    construct,
    derive_seed,
    make_positive,
    rank_keywords,
    select_initial_entities,
    substitute,
)
from ccsg.embedding_store import EmbeddingStore, cosine
from ccsg.synthetic import BenchmarkSpec, fixture_store, generate
from ccsg.text import make_statement

from oracles import toy_store


def edit_distance_tokens(a, b):
    return sum(x != y for x, y in zip(a, b)) + abs(len(a) - len(b))


def flat_map(statements, value=1.0):
    cmap = ContributionMap(epoch_tag=1)
    for s in statements:
        cmap.record(s, [value] * len(s.tokens))
    return cmap


class TestSubstitute:
    def test_fish_can_swim(self):
        stmt = make_statement("x", "fish can swim", True, "g")
        negs, prov, short = substitute(stmt, 2, toy_store(), n=1)
        assert [n.text for n in negs] == ["fish can run"]
        assert negs[0].label is False and negs[0].origin == "cf_neg"
        assert prov[0].original == "swim" and prov[0].replacement == "run" and short == 0

    def test_prefix_guard(self):
        # swims / swimming are closer to swim than run but share its 4-char prefix
        store = toy_store()
        assert store.nearest("swim", k=1)[0][0] in ("swims", "swimming")
        assert not admissible("swim", "swims", ConstructorConfig())
        assert admissible("swim", "run", ConstructorConfig())

    def test_stopword_and_symbol_filter(self):
        cfg = ConstructorConfig()
        assert not admissible("fish", "the", cfg)
        assert not admissible("fish", "c3po", cfg)

    def test_shortfall(self):
        store = EmbeddingStore.from_dict({"swim": [1, 0], "swims": [1, 0.1], "the": [0.5, 0.5]})
        stmt = make_statement("x", "swim", True, "g")
        negs, _, short = substitute(stmt, 0, store, n=2)
        assert negs == [] and short == 2

    def test_keyword_missing(self):
        stmt = make_statement("x", "zork can swim", True, "g")
        with pytest.raises(KeyError):
            substitute(stmt, 0, toy_store())

    def test_fixture_partners(self):
        store = fixture_store()
        for good, bad in generate(BenchmarkSpec(seed=0)).pairs[:20]:
            negs, _, _ = substitute(good, 2, store)
            assert negs[0].tokens == bad.tokens


class TestSelectInitialEntities:
    def test_centroid_by_hand(self):
        store = EmbeddingStore.from_dict({"cat": [1.0, 0.0], "mat": [0.0, 1.0], "sat": [1.0, 1.0]})
        stmt = make_statement("x", "cat sat mat", True, "g", ["NOUN", "VERB", "NOUN"])
        # cat vs mean(sat, mat) = (0.5, 1): cos = 0.5 / sqrt(1.25); mat vs mean(cat, sat) = (1, 0.5): same
        c = 0.5 / np.sqrt(1.25)
        assert cosine(store.vector("cat"), [0.5, 1.0]) == pytest.approx(c)
        assert select_initial_entities(stmt, store, 2) == [0, 2]
        assert select_initial_entities(stmt, store, 1) == [0]

    def test_ordering(self):
        store = EmbeddingStore.from_dict({"a": [1.0, 0.0], "b": [0.9, 0.1], "c": [0.0, 1.0]})
        stmt = make_statement("x", "c a b", True, "g", ["NOUN", "NOUN", "NOUN"])
        # a and b are close to each other's centroid, c is not
        assert select_initial_entities(stmt, store, 3)[-1] == 0

    def test_no_nouns(self):
        stmt = make_statement("x", "the of", True, "g")
        assert select_initial_entities(stmt, toy_store(), 5) == []


class TestRankKeywords:
    def test_top_k(self):
        assert rank_keywords([0, 1, 2, 3], [0.1, 0.5, -1.0, 0.3], 2) == [1, 3]

    def test_ties_by_position(self):
        assert rank_keywords([3, 1, 2], [("a", 0.0), ("b", 0.2), ("c", 0.2), ("d", 0.2)], 2) == [1, 2]

    def test_missing(self):
        with pytest.raises(MissingContributionError):
            rank_keywords([0], None, 1)


class TestConstruct:
    def anchors(self):
        return [make_statement("a", "fish can swim", True, "g", ["NOUN", "AUX", "NOUN"]),
                make_statement("b", "dog can swim", False, "g", ["NOUN", "AUX", "NOUN"])]

    def test_epoch_one_has_no_negatives(self):
        batch = construct(self.anchors(), toy_store(), None, epoch=1)
        assert batch.negatives == [] and len(batch.positives) == 2

    def test_epoch_one_ignores_supplied_contributions(self):
        anchors = self.anchors()
        assert construct(anchors, toy_store(), flat_map(anchors), epoch=1).negatives == []

    def test_negatives_edit_distance_one_and_flipped(self):
        anchors = self.anchors()
        cfg = ConstructorConfig(top_k=2, neighbors_per_keyword=2)
        batch = construct(anchors, toy_store(), flat_map(anchors), cfg, epoch=2)
        assert batch.negatives
        by_id = {a.id: a for a in anchors}
        for cs in batch.sets:
            for n in cs.negatives:
                a = by_id[cs.anchor_id]
                assert edit_distance_tokens(a.tokens, n.tokens) == 1
                assert n.label == (not a.label)

    def test_deterministic(self):
        anchors = self.anchors()
        a = construct(anchors, toy_store(), flat_map(anchors), epoch=3, seed=5)
        b = construct(anchors, toy_store(), flat_map(anchors), epoch=3, seed=5)
        assert a == b
        c = construct(anchors, toy_store(), flat_map(anchors), epoch=4, seed=5)
        assert [p.seed for p in a.positives] != [p.seed for p in c.positives]

    def test_missing_contribution(self):
        anchors = self.anchors()
        with pytest.raises(MissingContributionError):
            construct(anchors, toy_store(), flat_map(anchors[:1]), epoch=2)

    def test_counters(self):
        anchors = self.anchors() + [make_statement("c", "the of", True, "g")]
        batch = construct(anchors, toy_store(), flat_map(anchors), epoch=2)
        assert batch.counters["no_candidates"] == 1
        assert batch.counters["negatives"] == len(batch.negatives)

    def test_no_dropout_no_positives(self):
        batch = construct(self.anchors(), toy_store(), None, ConstructorConfig(R_p_drop=0.0))
        assert batch.positives == []

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 40))
    def test_contracts_on_benchmark(self, seed, n):
        stmts = [s for g in generate(BenchmarkSpec(seed=seed % 7, n_train_pairs=n, n_heldout_pairs=1)).train
                 for s in g.statements]
        rng = np.random.default_rng(seed)
        cmap = ContributionMap(epoch_tag=1)
        for s in stmts:
            cmap.record(s, rng.normal(size=len(s.tokens)))
        store = fixture_store()
        assert construct(stmts, store, cmap, epoch=1, seed=seed).negatives == []
        batch = construct(stmts, store, cmap, ConstructorConfig(top_k=2), epoch=2, seed=seed)
        assert batch == construct(stmts, store, cmap, ConstructorConfig(top_k=2), epoch=2, seed=seed)
        by_id = {s.id: s for s in stmts}
        for cs in batch.sets:
            for neg in cs.negatives:
                assert edit_distance_tokens(by_id[cs.anchor_id].tokens, neg.tokens) == 1
                assert neg.label != by_id[cs.anchor_id].label


class TestPositives:
    def test_rate_bounds(self):
        s = make_statement("x", "fish", True, "g")
        for bad in (0.0, 1.0, -0.1):
            with pytest.raises(ValueError):
                make_positive(s, bad)
        assert make_positive(s, 0.1, 3).label is True

    def test_seed_derivation_stable(self):
        assert derive_seed(0, 1, "a") == derive_seed(0, 1, "a")
        assert derive_seed(0, 1, "a") != derive_seed(0, 2, "a")
        assert 0 <= derive_seed("x") < 2**63
