"""Plausibility-estimation model: mean-pooled word embeddings, one ReLU layer, scalar head.

    e_i    = E[token_i] * dropout_mask_i
    pooled = mean_i e_i
    h      = relu(W1^T pooled + b1)
    z      = w2^T h + b2          (clamped to [-30, 30])
    s      = sigmoid(z)

All arithmetic is float64 and every gradient is written out by hand.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .embedding_store import EmbeddingStore
from .text import Statement

UNK = "<unk>"
LOGIT_CLAMP = 30.0
PARAM_NAMES = ("E", "W1", "b1", "w2", "b2")

CHECKPOINT_MAGIC = b"CCSGCKPT"
CHECKPOINT_VERSION = 1


class NonFiniteError(FloatingPointError):
    """A parameter, loss or gradient became NaN or infinite."""


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + np.exp(-z))
    ez = np.exp(z)
    return ez / (1.0 + ez)


@dataclass
class PEModelParams:
    vocab: list[str]
    E: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    version: int = 0
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if self.vocab[0] != UNK:
            raise ValueError(f"vocabulary must start with {UNK!r}")
        self._index = {t: i for i, t in enumerate(self.vocab)}
        d, H = self.W1.shape
        if self.E.shape != (len(self.vocab), d):
            raise ValueError(f"E shape {self.E.shape} inconsistent with vocab {len(self.vocab)} and d={d}")
        if self.b1.shape != (H,) or self.w2.shape != (H,) or self.b2.shape != (1,):
            raise ValueError("head shapes inconsistent with W1")
        self.check_finite()

    @property
    def dim(self) -> int:
        return self.W1.shape[0]

    @property
    def hidden(self) -> int:
        return self.W1.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def lookup(self, tokens: Sequence[str]) -> np.ndarray:
        idx = self._index
        return np.array([idx.get(t, 0) for t in tokens], dtype=np.int64)

    def check_finite(self) -> None:
        for name, arr in self.arrays().items():
            if not np.all(np.isfinite(arr)):
                raise NonFiniteError(f"parameter {name} contains non-finite values")

    def copy(self) -> "PEModelParams":
        return PEModelParams(list(self.vocab), *(a.copy() for a in self.arrays().values()),
                             version=self.version)

    def vocab_hash(self) -> str:
        h = hashlib.sha256()
        for tok in self.vocab[1:]:
            h.update(tok.encode("utf-8"))
            h.update(b"\n")
        return h.hexdigest()[:16]

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in self.arrays().values():
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()


def init_params(store: EmbeddingStore, hidden: int = 64, seed: int = 0) -> PEModelParams:
    """VKB rows copied exactly; the shared unknown-token row starts at zero."""
    rng = np.random.default_rng(seed)
    d = store.dim
    E = np.vstack([np.zeros((1, d)), np.array(store.matrix, dtype=np.float64)])
    return PEModelParams(
        vocab=[UNK] + list(store.tokens),
        E=E,
        W1=rng.normal(0.0, np.sqrt(2.0 / d), size=(d, hidden)),
        b1=np.full(hidden, 0.01),
        w2=rng.normal(0.0, 1.0 / np.sqrt(hidden), size=hidden),
        b2=np.zeros(1),
    )


@dataclass
class ForwardCache:
    token_idx: np.ndarray
    raw: np.ndarray          # looked-up rows, (n, d)
    mask: np.ndarray | None  # inverted-dropout multipliers, (n, d)
    pooled: np.ndarray
    pre: np.ndarray
    hidden: np.ndarray
    z: float
    s: float
    clamped: bool
    dropout_rate: float
    seed: int
    version: int
    params_id: int

    @property
    def h(self) -> np.ndarray:
        return self.hidden


@dataclass
class ParamGradients:
    E_rows: np.ndarray
    E: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def dense_E(self, vocab_size: int) -> np.ndarray:
        out = np.zeros((vocab_size, self.E.shape[1]))
        np.add.at(out, self.E_rows, self.E)
        return out


@dataclass
class TokenGradients:
    grads: np.ndarray  # (n, d), aligned to token positions

    def __len__(self) -> int:
        return self.grads.shape[0]

    def summed(self) -> np.ndarray:
        return self.grads.sum(axis=1)


def dropout_mask(n: int, d: int, rate: float, seed: int) -> np.ndarray | None:
    if rate == 0.0:
        return None
    rng = np.random.default_rng(seed)
    keep = rng.random((n, d)) >= rate
    return keep / (1.0 - rate)


def forward(params: PEModelParams, statement: Statement | Sequence[str],
            dropout_rate: float = 0.0, seed: int = 0) -> ForwardCache:
    tokens = statement.tokens if isinstance(statement, Statement) else statement
    if len(tokens) == 0:
        raise ValueError("empty token list")
    if not 0.0 <= dropout_rate < 1.0:
        raise ValueError(f"dropout_rate must be in [0, 1), got {dropout_rate}")
    idx = params.lookup(tokens)
    raw = params.E[idx]
    mask = dropout_mask(len(idx), params.dim, dropout_rate, seed)
    emb = raw if mask is None else raw * mask
    # sum in row-index order so the pooled vector is exactly order-invariant
    order = np.argsort(idx, kind="stable")
    pooled = emb[order].sum(axis=0) / len(idx)
    pre = pooled @ params.W1 + params.b1
    hidden = np.maximum(pre, 0.0)
    z_raw = float(hidden @ params.w2 + params.b2[0])
    z = min(LOGIT_CLAMP, max(-LOGIT_CLAMP, z_raw))
    return ForwardCache(
        token_idx=idx, raw=raw, mask=mask, pooled=pooled, pre=pre, hidden=hidden,
        z=z, s=float(sigmoid(z)), clamped=z != z_raw, dropout_rate=dropout_rate,
        seed=seed, version=params.version, params_id=id(params),
    )


def backward(params: PEModelParams, cache: ForwardCache, grad_s: float = 0.0,
             grad_h: np.ndarray | None = None) -> tuple[ParamGradients, TokenGradients]:
    """Reverse-mode gradients of a scalar loss given dL/ds (and optionally dL/dh).

    Token gradients are taken with respect to each looked-up row ``E[token_i]``,
    i.e. they already include the dropout mask and the 1/n of the mean-pool.
    """
    if cache.params_id != id(params) or cache.version != params.version:
        raise ValueError("forward cache was produced by different or since-updated parameters")
    s = cache.s
    dz = 0.0 if cache.clamped else grad_s * s * (1.0 - s)
    dh = dz * params.w2
    if grad_h is not None:
        dh = dh + grad_h
    dpre = dh * (cache.pre > 0.0)
    dpooled = params.W1 @ dpre
    n = len(cache.token_idx)
    tok = np.broadcast_to(dpooled / n, cache.raw.shape)
    tok = tok * cache.mask if cache.mask is not None else tok.copy()
    return (
        ParamGradients(
            E_rows=cache.token_idx, E=tok, W1=np.outer(cache.pooled, dpre), b1=dpre,
            w2=dz * cache.hidden, b2=np.array([dz]),
        ),
        TokenGradients(tok),
    )


def replay(params: PEModelParams, statement, cache: ForwardCache) -> ForwardCache:
    return forward(params, statement, cache.dropout_rate, cache.seed)


def prob_of_label(cache: ForwardCache, label: bool) -> float:
    return cache.s if label else 1.0 - cache.s


def score(params: PEModelParams, statement) -> float:
    return forward(params, statement).s


def logit(params: PEModelParams, statement) -> float:
    return forward(params, statement).z


# ---------------------------------------------------------------------------
# checkpoint I/O
#
# layout (little-endian):
#   magic     8 bytes  b"CCSGCKPT"
#   version   uint8
#   d, H, V   3 x uint32
#   vocab     V x (uint32 byte length, utf-8 bytes)
#   E         V*d float64, row-major
#   W1        d*H float64, row-major
#   b1        H float64
#   w2        H float64
#   b2        1 float64
# ---------------------------------------------------------------------------

def save_checkpoint(params: PEModelParams, path, manifest: dict | None = None) -> None:
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<B", CHECKPOINT_VERSION))
        fh.write(struct.pack("<III", params.dim, params.hidden, len(params.vocab)))
        for tok in params.vocab:
            b = tok.encode("utf-8")
            fh.write(struct.pack("<I", len(b)))
            fh.write(b)
        for arr in params.arrays().values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    info = {
        "d": params.dim,
        "H": params.hidden,
        "vocab_size": len(params.vocab),
        "vocab_hash": params.vocab_hash(),
        "param_digest": params.digest()[:16],
    }
    info.update(manifest or {})
    with manifest_path(path).open("w", encoding="utf-8") as fh:
        for key, value in info.items():
            fh.write(f"{key} = {value}\n")


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".manifest")


def read_manifest(path) -> dict[str, str]:
    mp = manifest_path(path)
    if not mp.exists():
        return {}
    out = {}
    for line in mp.read_text(encoding="utf-8").splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def load_checkpoint(path) -> PEModelParams:
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    off = len(CHECKPOINT_MAGIC)
    (version,) = struct.unpack_from("<B", data, off)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off += 1
    d, H, V = struct.unpack_from("<III", data, off)
    off += 12
    vocab = []
    for _ in range(V):
        (n,) = struct.unpack_from("<I", data, off)
        off += 4
        vocab.append(data[off:off + n].decode("utf-8"))
        off += n
    arrays = []
    for shape in ((V, d), (d, H), (H,), (H,), (1,)):
        count = int(np.prod(shape))
        arrays.append(np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape).astype(np.float64))
        off += 8 * count
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes")
    return PEModelParams(vocab, *arrays)
