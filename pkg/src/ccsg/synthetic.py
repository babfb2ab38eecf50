"""Templated paired-commonsense benchmark with planted keyword rules, plus its fixture vectors.

Every statement is ``<agent> <relation> <filler> [<cue>]``. Agents and fillers
each belong to one of two classes and a statement is plausible exactly when
the classes agree (fish can swim, dog can run, cow eats grass, ...). Each
filler has a contrast partner of the opposite class (swim/run, grass/meat)
which is also its nearest neighbor in the fixture vector space.

The optional trailing cue word carries no information about plausibility.
``selection_bias`` drops one member of a share of the training pairs, keeping
the member whose label matches its cue, which plants a spurious cue/label
correlation in training only. Held-out pairs keep both members and share one
cue, so only the slot words can separate them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from .embedding_store import EmbeddingStore, load_vectors, save_vectors
from .text import Statement, StatementGroup, make_statement, save_dataset, statement_record


@dataclass(frozen=True)
class Template:
    name: str
    relation: str
    relation_tag: str
    filler_tag: str
    # class -> [(agent, contrast partner)], partners belong to the other class
    agent_pairs: tuple[tuple[str, str], ...]
    filler_pairs: tuple[tuple[str, str], ...]
    classes: tuple[str, str]

    def agents(self) -> dict[str, str]:
        """agent -> class"""
        a, b = self.classes
        out = {}
        for x, y in self.agent_pairs:
            out[x], out[y] = a, b
        return out

    def fillers(self) -> dict[str, str]:
        a, b = self.classes
        out = {}
        for x, y in self.filler_pairs:
            out[x], out[y] = a, b
        return out

    def partner(self, token: str) -> str:
        for x, y in self.filler_pairs + self.agent_pairs:
            if token == x:
                return y
            if token == y:
                return x
        raise KeyError(token)

    def compatible(self, agent: str, filler: str) -> bool:
        return self.agents()[agent] == self.fillers()[filler]


TEMPLATES = {
    "can": Template(
        name="can", relation="can", relation_tag="AUX", filler_tag="VERB",
        classes=("water", "land"),
        agent_pairs=(
            ("fish", "dog"), ("shark", "horse"), ("whale", "cat"), ("dolphin", "zebra"),
            ("trout", "mouse"), ("salmon", "donkey"), ("eel", "pony"), ("tuna", "hamster"),
            ("cod", "squirrel"), ("carp", "ferret"), ("squid", "cheetah"), ("octopus", "antelope"),
        ),
        filler_pairs=(
            ("swim", "run"), ("dive", "climb"), ("paddle", "gallop"),
            ("float", "walk"), ("surface", "jump"), ("wade", "trot"),
        ),
    ),
    "eats": Template(
        name="eats", relation="eats", relation_tag="VERB", filler_tag="NOUN",
        classes=("herbivore", "carnivore"),
        agent_pairs=(
            ("cow", "lion"), ("sheep", "tiger"), ("goat", "wolf"), ("deer", "bear"),
            ("moose", "fox"), ("bison", "leopard"), ("camel", "jaguar"), ("llama", "hyena"),
            ("giraffe", "panther"), ("elk", "lynx"), ("yak", "cougar"), ("hippo", "coyote"),
        ),
        filler_pairs=(
            ("grass", "meat"), ("hay", "prey"), ("leaves", "flesh"),
            ("clover", "carcasses"), ("berries", "rodents"), ("acorns", "carrion"),
        ),
    ),
}

CUES = ("often", "rarely")
FUNCTION_WORDS = ("can", "eats", "the", "a", "is", "it", "and", "of", "to", "in")
DISTRACTORS = (
    "table", "chair", "window", "pencil", "engine", "bottle", "ladder", "carpet", "blanket", "mirror",
    "kettle", "violin", "hammer", "bucket", "candle", "tunnel", "bridge", "castle", "garden", "market",
    "letter", "ticket", "pocket", "button", "jacket", "basket", "rocket", "planet", "island", "desert",
    "forest", "valley", "meadow", "harbor", "cottage", "lantern", "compass", "blizzard", "thunder", "rainbow",
    "silver", "copper", "marble", "velvet", "cotton", "paper", "ribbon", "wires", "bricks", "nails",
)

FIXTURE_DIM = 48
FIXTURE_SEED = 20240613


def _unit(rng, d):
    v = rng.normal(size=d)
    return v / np.linalg.norm(v)


def build_fixture_store(dim: int = FIXTURE_DIM, seed: int = FIXTURE_SEED) -> EmbeddingStore:
    """Deterministic vector space for the benchmark vocabulary.

    word = domain direction + class sign * class direction + contrast-pair
    direction + noise, so that each agent/filler's nearest neighbor is its
    partner from the opposite class, and the class is linearly readable.
    """
    rng = np.random.default_rng(seed)
    rows: dict[str, np.ndarray] = {}
    n_struct = sum(1 + 2 + len(t.agent_pairs) + len(t.filler_pairs) for t in TEMPLATES.values())
    if dim < n_struct:
        raise ValueError(f"fixture needs dim >= {n_struct}")
    basis = iter(np.linalg.qr(rng.normal(size=(dim, dim)))[0].T)

    def put(tok, vec):
        rows[tok] = np.round(vec, 6)

    for tname in sorted(TEMPLATES):
        t = TEMPLATES[tname]
        class_dir = next(basis)
        for pairs in (t.agent_pairs, t.filler_pairs):
            domain = next(basis)
            for x, y in pairs:
                pair_dir = next(basis)
                for tok, sign in ((x, 1.0), (y, -1.0)):
                    put(tok, 1.0 * domain + 0.8 * sign * class_dir + 1.5 * pair_dir
                        + 0.04 * rng.normal(size=dim))
    for tok in FUNCTION_WORDS + CUES:
        if tok not in rows:
            put(tok, 0.6 * _unit(rng, dim) + 0.04 * rng.normal(size=dim))
    distract = _unit(rng, dim)
    for tok in DISTRACTORS:
        if tok not in rows:
            put(tok, 0.7 * distract + 0.7 * _unit(rng, dim))
    tokens = list(rows)
    return EmbeddingStore(dim=dim, tokens=tokens, matrix=np.vstack([rows[t] for t in tokens]))


def fixture_path():
    return resources.files("ccsg").joinpath("data/fixture_vectors.txt")


@lru_cache(maxsize=1)
def fixture_store() -> EmbeddingStore:
    """The shipped fixture vectors."""
    with resources.as_file(fixture_path()) as p:
        return load_vectors(p)


@dataclass(frozen=True)
class BenchmarkSpec:
    seed: int = 0
    n_train_pairs: int = 400
    n_heldout_pairs: int = 120
    templates: tuple[str, ...] = ("can", "eats")
    agents_per_template: int | None = None
    heldout_agent_pairs: int = 3       # per template
    cues: tuple[str, ...] = CUES
    selection_bias: float = 0.9

    @property
    def n_pairs(self) -> int:
        return self.n_train_pairs + self.n_heldout_pairs


@dataclass
class Benchmark:
    spec: BenchmarkSpec
    train: list[StatementGroup]
    heldout: list[StatementGroup]
    pairs: list[tuple[Statement, Statement]]
    train_pairs: list[tuple[Statement, Statement]] = field(default_factory=list)

    def heldout_statements(self) -> list[Statement]:
        return [s for g in self.heldout for s in g.statements]

    def train_statements(self) -> list[Statement]:
        return [s for g in self.train for s in g.statements]


def _statement(sid, template: Template, agent, filler, cue, group, max_len=128):
    words = [agent, template.relation, filler] + ([cue] if cue else [])
    tags = ["NOUN", template.relation_tag, template.filler_tag] + (["ADV"] if cue else [])
    return make_statement(sid, " ".join(words), template.compatible(agent, filler), group, tags, max_len)


def _candidates(template: Template, agent_pairs, cues):
    agents = [a for pair in agent_pairs for a in pair]
    fill = template.fillers()
    out = []
    for a in agents:
        for f in fill:
            if template.compatible(a, f):
                for c in cues:
                    out.append((template.name, a, f, c))
    return out


def generate(spec: BenchmarkSpec, store: EmbeddingStore | None = None) -> Benchmark:
    """Build the training groups and the held-out (true, false) pairs.

    Held-out agents (whole contrast pairs of agents) never appear in training.
    """
    store = store or fixture_store()
    if spec.n_train_pairs < 0 or spec.n_heldout_pairs < 0:
        raise ValueError("pair counts must be non-negative")
    rng = np.random.default_rng(spec.seed)
    cues = tuple(spec.cues) or (None,)
    train_cands, held_cands = [], []
    for name in spec.templates:
        t = TEMPLATES[name]
        vocab = [t.relation, *t.agents(), *t.fillers(), *(c for c in cues if c)]
        missing = [w for w in vocab if w not in store]
        if missing:
            raise KeyError(f"benchmark vocabulary missing from vectors: {missing}")
        pairs = list(t.agent_pairs)
        if spec.agents_per_template is not None:
            pairs = pairs[: max(1, spec.agents_per_template // 2)]
        order = rng.permutation(len(pairs))
        n_hold = min(spec.heldout_agent_pairs, len(pairs) - 1)
        held_cands += _candidates(t, [pairs[i] for i in order[:n_hold]], cues)
        train_cands += _candidates(t, [pairs[i] for i in order[n_hold:]], cues)

    def draw(cands, n, what):
        if n > len(cands):
            raise ValueError(f"requested {n} {what} pairs but only {len(cands)} distinct pairs exist")
        idx = rng.permutation(len(cands))[:n]
        return [cands[i] for i in sorted(idx)]

    held = draw(held_cands, spec.n_heldout_pairs, "held-out")
    train = draw(train_cands, spec.n_train_pairs, "training")

    def make_pair(prefix, k, item):
        tname, agent, good, cue = item
        t = TEMPLATES[tname]
        bad = t.partner(good)
        gid = f"{prefix}{k:04d}"
        return (_statement(f"{gid}a", t, agent, good, cue, gid),
                _statement(f"{gid}b", t, agent, bad, cue, gid))

    pairs = [make_pair("h", k, item) for k, item in enumerate(held)]
    heldout = [StatementGroup(g.group_id, [g, b]) for g, b in pairs]
    train_pairs = [make_pair("t", k, item) for k, item in enumerate(train)]
    biased = rng.random(len(train_pairs)) < spec.selection_bias
    train_groups = []
    for (good, bad), drop in zip(train_pairs, biased):
        if drop:
            # keep the member whose label the cue favours: first cue -> true
            keep = good if good.tokens[-1] == cues[0] else bad
            train_groups.append(StatementGroup(good.group_id, [keep]))
        else:
            train_groups.append(StatementGroup(good.group_id, [good, bad]))
    return Benchmark(spec, train_groups, heldout, pairs, train_pairs)


def save_pairs(pairs, path, meta: dict | None = None) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for k, v in (meta or {}).items():
            fh.write(f"# {k} = {v}\n")
        fh.write("pair_id\ttrue_id\tfalse_id\n")
        for good, bad in pairs:
            fh.write(f"{good.group_id}\t{good.id}\t{bad.id}\n")


def load_pairs(path, statements) -> list[tuple[Statement, Statement]]:
    by_id = {s.id: s for s in statements}
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        lines = [(n, ln) for n, ln in enumerate(fh, start=1) if not ln.startswith("#")]
    if not lines:
        raise ValueError(f"{path}: empty pairs file")
    header = lines[0][1].rstrip("\n").split("\t")
    if header != ["pair_id", "true_id", "false_id"]:
        raise ValueError(f"{path}: unexpected header {header}")
    for lineno, line in lines[1:]:
        if not line.strip():
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 3 columns")
        _, tid, fid = parts
        if tid not in by_id or fid not in by_id:
            raise ValueError(f"{path}:{lineno}: unpaired record {tid!r}/{fid!r}")
        out.append((by_id[tid], by_id[fid]))
    return out


def write_benchmark(bench: Benchmark, outdir, store: EmbeddingStore | None = None,
                    meta: dict | None = None) -> dict[str, Path]:
    """Write train.jsonl, heldout.jsonl, heldout_pairs.tsv and vectors.txt into ``outdir``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {
        "train": outdir / "train.jsonl",
        "heldout": outdir / "heldout.jsonl",
        "pairs": outdir / "heldout_pairs.tsv",
        "vectors": outdir / "vectors.txt",
    }
    save_dataset(bench.train, paths["train"], meta)
    save_dataset(bench.heldout, paths["heldout"], meta)
    save_pairs(bench.pairs, paths["pairs"], meta)
    save_vectors(store or fixture_store(), paths["vectors"])
    return paths


def corpus_digest(bench: Benchmark) -> str:
    h = hashlib.sha256()
    for g in bench.train + bench.heldout:
        for s in g.statements:
            h.update(json.dumps(statement_record(s), sort_keys=True).encode("utf-8"))
    return h.hexdigest()[:16]
