"""Word-vector knowledge base: loading, cosine similarity and exact neighbor search."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

log = logging.getLogger(__name__)


class VectorFormatError(ValueError):
    """Raised for malformed word-vector files."""


@dataclass
class EmbeddingStore:
    dim: int
    tokens: list[str]
    matrix: np.ndarray
    duplicates: int = 0
    _index: dict[str, int] = field(init=False, repr=False)
    _norms: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.matrix = np.ascontiguousarray(self.matrix, dtype=np.float64)
        if self.dim <= 0:
            raise ValueError("dim must be positive")
        if self.matrix.shape != (len(self.tokens), self.dim):
            raise ValueError(
                f"matrix shape {self.matrix.shape} does not match "
                f"{len(self.tokens)} tokens x dim {self.dim}"
            )
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("non-finite vector component")
        self._index = {}
        for i, tok in enumerate(self.tokens):
            if not tok:
                raise ValueError("empty token key")
            if tok in self._index:
                raise ValueError(f"duplicate token {tok!r}")
            self._index[tok] = i
        self._norms = np.linalg.norm(self.matrix, axis=1)
        self.matrix.setflags(write=False)

    @classmethod
    def from_dict(cls, entries: dict[str, Iterable[float]]) -> "EmbeddingStore":
        tokens = [t.lower() for t in entries]
        rows = [np.asarray(list(v), dtype=np.float64) for v in entries.values()]
        if not rows:
            raise ValueError("empty store")
        return cls(dim=len(rows[0]), tokens=tokens, matrix=np.vstack(rows))

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token.lower() in self._index

    def index(self, token: str) -> int:
        return self._index[token.lower()]

    def vector(self, token: str) -> np.ndarray:
        try:
            return self.matrix[self._index[token.lower()]]
        except KeyError:
            raise KeyError(f"token {token!r} not in store") from None

    def vocab_hash(self) -> str:
        h = hashlib.sha256()
        for tok in self.tokens:
            h.update(tok.encode("utf-8"))
            h.update(b"\n")
        return h.hexdigest()[:16]

    def nearest(self, query, k: int, exclude: Iterable[str] = ()) -> list[tuple[str, float]]:
        """Exact top-k neighbors by cosine similarity.

        ``query`` is either a stored token or a raw vector. The query token
        and everything in ``exclude`` are never returned. Equal similarities
        are ordered by ascending token string.
        """
        if k <= 0:
            raise ValueError("k must be positive")
        banned = {t.lower() for t in exclude}
        if isinstance(query, str):
            q = query.lower()
            if q not in self._index:
                raise KeyError(f"query token {query!r} not in store")
            banned.add(q)
            qvec = self.matrix[self._index[q]]
        else:
            qvec = np.asarray(query, dtype=np.float64)
            if qvec.shape != (self.dim,):
                raise ValueError(f"query vector has length {qvec.size}, expected {self.dim}")
        sims = self.similarities(qvec)
        candidates = [(tok, float(sims[i])) for i, tok in enumerate(self.tokens) if tok not in banned]
        candidates.sort(key=lambda ts: (-ts[1], ts[0]))
        return candidates[:k]

    def similarities(self, qvec: np.ndarray) -> np.ndarray:
        """Cosine similarity of ``qvec`` against every stored vector (zero-norm rows give 0)."""
        qn = float(np.linalg.norm(qvec))
        if qn == 0.0:
            return np.zeros(len(self.tokens))
        dots = self.matrix @ qvec
        denom = self._norms * qn
        out = np.zeros_like(dots)
        ok = denom > 0
        out[ok] = dots[ok] / denom[ok]
        return np.clip(out, -1.0, 1.0)


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.shape} vs {v.shape}")
    nu = math.sqrt(float(u @ u))
    nv = math.sqrt(float(v @ v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return max(-1.0, min(1.0, float(u @ v) / (nu * nv)))


def load_vectors(path, expected_dim: int | None = None) -> EmbeddingStore:
    """Read a GloVe-style text file (``token v1 ... vd`` per line)."""
    path = Path(path)
    try:
        fh = path.open("r", encoding="utf-8")
    except OSError as exc:
        raise VectorFormatError(f"cannot read {path}: {exc}") from exc

    dim = expected_dim
    tokens: list[str] = []
    rows: list[list[float]] = []
    seen: set[str] = set()
    duplicates = 0
    with fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            tok, comps = parts[0].lower(), parts[1:]
            if dim is None:
                dim = len(comps)
                if dim == 0:
                    raise VectorFormatError(f"{path}:{lineno}: line has no vector components")
            if len(comps) != dim:
                raise VectorFormatError(
                    f"{path}:{lineno}: dimension mismatch, got {len(comps)} components, expected {dim}"
                )
            try:
                vec = [float(c) for c in comps]
            except ValueError:
                raise VectorFormatError(f"{path}:{lineno}: non-numeric component") from None
            if not all(math.isfinite(x) for x in vec):
                raise VectorFormatError(f"{path}:{lineno}: non-finite component")
            if tok in seen:
                duplicates += 1
                continue
            seen.add(tok)
            tokens.append(tok)
            rows.append(vec)
    if not tokens:
        raise VectorFormatError(f"{path}: empty vector file")
    if duplicates:
        log.warning("%s: %d duplicate tokens ignored (first occurrence kept)", path, duplicates)
    store = EmbeddingStore(dim=dim, tokens=tokens, matrix=np.array(rows, dtype=np.float64))
    store.duplicates = duplicates
    return store


def save_vectors(store: EmbeddingStore, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for tok, row in zip(store.tokens, store.matrix):
            fh.write(tok + " " + " ".join(repr(float(x)) for x in row) + "\n")
