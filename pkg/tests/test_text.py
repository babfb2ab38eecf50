import json

import pytest

from ccsg.embedding_store import EmbeddingStore
from ccsg.text import (
    DatasetError,
    Statement,
    extract_nouns,
    load_dataset,
    make_statement,
    save_dataset,
    stopwords,
    tokenize,
)


def write_jsonl(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records))
    return path


class TestTokenize:
    def test_punctuation_split(self):
        assert tokenize("Mr. July ordered wires.") == (["mr", ".", "july", "ordered", "wires", "."], False)

    def test_truncation(self):
        toks, truncated = tokenize(" ".join(f"w{i}" for i in range(200)), max_len=128)
        assert len(toks) == 128 and truncated

    def test_blank(self):
        with pytest.raises(ValueError):
            tokenize("  ")

    def test_inner_punctuation_kept(self):
        assert tokenize("(don't!)")[0] == ["(", "don't", "!", ")"]


class TestExtractNouns:
    store = EmbeddingStore.from_dict({"cat": [1, 0], "sat": [0, 1]})

    def stmt(self, tags=None):
        return make_statement("s", "the cat sat", True, "g", tags)

    def test_tag_filter(self):
        assert extract_nouns(self.stmt(["DET", "NOUN", "VERB"]), self.store) == [1]

    def test_heuristic(self):
        assert "the" in stopwords()
        assert extract_nouns(self.stmt(), self.store) == [1, 2]

    def test_all_stopwords(self):
        s = make_statement("s", "the of and", True, "g")
        assert extract_nouns(s, self.store) == []


class TestLoadDataset:
    def test_multichoice(self, tmp_path):
        p = write_jsonl(tmp_path / "mc.jsonl",
                        [{"id": "q1", "question": "Birds can", "choices": ["fly", "melt"], "answer_idx": 0}])
        (group,) = load_dataset(p, "multichoice")
        assert [(s.text, s.label) for s in group.statements] == [("Birds can fly", True), ("Birds can melt", False)]
        assert sum(s.label for s in group.statements) == 1

    def test_statements_passthrough(self, tmp_path):
        p = write_jsonl(tmp_path / "s.jsonl", [{"id": "a", "text": "fish can swim", "label": True, "group": "g1"}])
        (group,) = load_dataset(p)
        assert group.group_id == "g1" and len(group) == 1
        assert group.statements[0].tokens == ("fish", "can", "swim")

    def test_answer_out_of_range(self, tmp_path):
        p = write_jsonl(tmp_path / "mc.jsonl",
                        [{"id": "q9", "question": "Birds can", "choices": ["fly", "melt"], "answer_idx": 5}])
        with pytest.raises(DatasetError, match="q9"):
            load_dataset(p, "multichoice")

    def test_missing_field(self, tmp_path):
        p = write_jsonl(tmp_path / "s.jsonl", [{"id": "a", "text": "x", "group": "g"}])
        with pytest.raises(DatasetError, match="label"):
            load_dataset(p)

    def test_duplicate_ids(self, tmp_path):
        rec = {"id": "a", "text": "x", "label": True, "group": "g"}
        p = write_jsonl(tmp_path / "s.jsonl", [rec, rec])
        with pytest.raises(DatasetError, match="duplicate"):
            load_dataset(p)

    def test_tag_length_mismatch(self, tmp_path):
        p = write_jsonl(tmp_path / "s.jsonl", [{"id": "a", "text": "fish swim", "label": True, "group": "g",
                                                "tags": ["NOUN"]}])
        with pytest.raises(DatasetError):
            load_dataset(p)

    def test_round_trip(self, tmp_path):
        p = write_jsonl(tmp_path / "mc.jsonl", [
            {"id": "q1", "question": "Birds can", "choices": ["fly", "melt", "sing"], "answer_idx": 2,
             "tags": [["NOUN", "AUX", "VERB"]] * 3},
            {"id": "q2", "question": "Mr. July ordered", "choices": ["noodles.", "wires."], "answer_idx": 0},
        ])
        groups = load_dataset(p, "multichoice")
        save_dataset(groups, tmp_path / "out.jsonl")
        assert load_dataset(tmp_path / "out.jsonl") == groups


def test_statement_invariants():
    with pytest.raises(ValueError):
        Statement("x", "", (), True, "g")
    with pytest.raises(ValueError):
        Statement("x", "a b", ("a", "b"), True, "g", pos_tags=("NOUN",))
    with pytest.raises(ValueError):
        Statement("x", "a", ("a",), True, "g", origin="mystery")
