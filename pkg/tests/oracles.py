"""Independent reference computations used as test oracles.

Nothing here calls into the code paths it checks: forward passes are
re-derived in plain numpy, losses are evaluated directly at high precision
with mpmath, and gradients come from central finite differences.
"""

import mpmath
import numpy as np

from ccsg.embedding_store import EmbeddingStore
from ccsg.model import PEModelParams, UNK
from ccsg.text import make_statement

FD_STEP = 1e-5


def central_diff(f, x, step=FD_STEP):
    """Gradient of scalar f() w.r.t. array x, perturbing x in place."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + step
        up = f()
        x[i] = old - step
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * step)
    return g


def max_rel_err(analytic, numeric, floor=1e-7):
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def reference_forward(rows, mask, W1, b1, w2, b2):
    """z and h from per-position embedding rows; written independently of ccsg.model."""
    emb = rows if mask is None else rows * mask
    pooled = np.mean(emb, axis=0)
    pre = W1.T.dot(pooled) + b1
    h = np.where(pre > 0, pre, 0.0)
    z = float(np.dot(w2, h) + b2[0])
    return z, h, pre


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def random_params(rng, vocab_size=6, d=4, H=3, scale=1.0):
    vocab = [UNK] + [f"w{i}" for i in range(vocab_size - 1)]
    return PEModelParams(
        vocab=vocab,
        E=rng.normal(0, scale, size=(vocab_size, d)),
        W1=rng.normal(0, scale, size=(d, H)),
        b1=rng.normal(0, 0.5, size=H),
        w2=rng.normal(0, scale, size=H),
        b2=rng.normal(0, 0.5, size=1),
    )


def random_statement(rng, params, n_tokens=3, label=None):
    toks = [params.vocab[int(i)] for i in rng.integers(1, len(params.vocab), size=n_tokens)]
    label = bool(rng.integers(2)) if label is None else label
    return make_statement("s", " ".join(toks), label, "g")


def kink_free(params, stmt, margin=1e-3):
    rows = params.E[params.lookup(stmt.tokens)]
    z, _, pre = reference_forward(rows, None, params.W1, params.b1, params.w2, params.b2)
    return bool(np.all(np.abs(pre) > margin)) and abs(z) < 25


def contrastive_direct(h_i, positives, negatives, tau, dps=50):
    """-log( sum_P exp(cos/tau) / sum_{P+N} exp(cos/tau) ) evaluated in mpmath."""
    with mpmath.workdps(dps):
        def cos(u, v):
            u = [mpmath.mpf(float(x)) for x in u]
            v = [mpmath.mpf(float(x)) for x in v]
            dot = mpmath.fsum(a * b for a, b in zip(u, v))
            return dot / (mpmath.sqrt(mpmath.fsum(a * a for a in u)) * mpmath.sqrt(mpmath.fsum(b * b for b in v)))

        t = mpmath.mpf(tau)
        num = mpmath.fsum(mpmath.exp(cos(h_i, p) / t) for p in positives)
        den = num + mpmath.fsum(mpmath.exp(cos(h_i, n) / t) for n in negatives)
        return float(-mpmath.log(num / den))


def bce_direct(s, y):
    with mpmath.workdps(50):
        s = mpmath.mpf(s)
        return float(-mpmath.log(s) if y else -mpmath.log(1 - s))


def toy_store():
    return EmbeddingStore.from_dict({
        "fish": [1.0, 0.1, 0.0, 0.2],
        "can": [0.1, 0.1, 0.1, 0.1],
        "swim": [0.9, 0.0, 0.3, 0.1],
        "run": [0.8, 0.1, 0.35, 0.0],
        "swims": [0.9, 0.01, 0.3, 0.1],
        "swimming": [0.9, 0.0, 0.31, 0.1],
        "dog": [-0.2, 1.0, 0.1, 0.0],
        "the": [0.5, 0.5, 0.5, 0.5],
    })


def keyword_only_fixture():
    """Agent words live in dims 0-1, slot words in dims 2-3; the model only reads dim 0."""
    store = EmbeddingStore.from_dict({
        "fish": [1.0, 0.5, 0.0, 0.0],
        "dog": [0.2, 1.0, 0.0, 0.0],
        "swim": [0.0, 0.0, 1.0, 0.2],
        "run": [0.0, 0.0, 0.9, 0.5],
    })
    vocab = [UNK] + store.tokens
    E = np.vstack([np.zeros(4), store.matrix])
    W1 = np.array([[2.0], [0.0], [0.0], [0.0]])
    params = PEModelParams(vocab=vocab, E=E, W1=W1, b1=np.array([0.5]), w2=np.array([1.5]), b2=np.array([-1.0]))
    tags = ["NOUN", "AUX", "VERB"]
    stmts = [make_statement("a", "fish can swim", True, "g", tags),
             make_statement("b", "fish can run", False, "g", tags),
             make_statement("c", "fish swim", True, "h", ["NOUN", "VERB"])]
    return params, store, stmts


def two_pass_ace(params, plans):
    """Re-score originals and edited copies independently of the estimator."""
    before, after = [], []
    for p in plans:
        toks = list(p.statement.tokens)
        rows = params.E[params.lookup(toks)]
        before.append(sigmoid(reference_forward(rows, None, params.W1, params.b1, params.w2, params.b2)[0]))
        toks[p.position] = p.replacement
        rows = params.E[params.lookup(toks)]
        after.append(sigmoid(reference_forward(rows, None, params.W1, params.b1, params.w2, params.b2)[0]))
    return float(np.mean(after) - np.mean(before))
