import itertools

import numpy as np
import pytest

from ccsg.model import (
    LOGIT_CLAMP,
    backward,
    forward,
    init_params,
    load_checkpoint,
    prob_of_label,
    read_manifest,
    replay,
    save_checkpoint,
)
from ccsg.text import make_statement

from oracles import (
    central_diff,
    kink_free,
    max_rel_err,
    random_params,
    random_statement,
    reference_forward,
    sigmoid,
    toy_store,
)


def fd_instances(n, d=4, H=3, n_tokens=3, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        params = random_params(rng, d=d, H=H)
        stmt = random_statement(rng, params, n_tokens)
        if kink_free(params, stmt):
            out.append((params, stmt, rng.normal(), rng.normal(size=H)))
    return out


def scalar_objective(params, stmt, a, c, mask=None):
    """a * s + c . h, via the independent reference forward."""
    rows = params.E[params.lookup(stmt.tokens)]
    z, h, _ = reference_forward(rows, mask, params.W1, params.b1, params.w2, params.b2)
    return a * sigmoid(z) + float(c @ h)


class TestForward:
    def test_zero_head(self):
        params = init_params(toy_store(), hidden=3)
        params.W1[:] = 0
        params.b1[:] = 0
        params.w2[:] = 0
        cache = forward(params, make_statement("x", "fish can swim", True, "g"))
        assert cache.z == 0.0 and cache.s == 0.5

    def test_deterministic_without_dropout(self):
        params = init_params(toy_store(), hidden=5, seed=1)
        stmt = make_statement("x", "the fish can run", True, "g")
        assert forward(params, stmt).z == forward(params, stmt).z

    def test_seeded_dropout(self):
        params = init_params(toy_store(), hidden=5, seed=1)
        stmt = make_statement("x", "the fish can run", True, "g")
        a = forward(params, stmt, 0.05, seed=1)
        b = forward(params, stmt, 0.05, seed=2)
        assert not np.array_equal(a.mask, b.mask)
        again = replay(params, stmt, a)
        assert again.z == a.z and np.array_equal(again.hidden, a.hidden)

    def test_matches_reference(self):
        for params, stmt, _, _ in fd_instances(10, seed=5):
            z_ref, h_ref, _ = reference_forward(params.E[params.lookup(stmt.tokens)], None, params.W1,
                                                params.b1, params.w2, params.b2)
            cache = forward(params, stmt)
            assert cache.z == pytest.approx(z_ref, abs=1e-12)
            np.testing.assert_allclose(cache.hidden, h_ref, atol=1e-12)

    def test_permutation_invariant(self):
        params = init_params(toy_store(), hidden=7, seed=2)
        toks = ["the", "fish", "can", "swim", "unknownword"]
        zs = {forward(params, list(p)).z for p in itertools.permutations(toks)}
        assert len(zs) == 1

    def test_unknown_tokens_use_shared_row(self):
        params = init_params(toy_store(), hidden=3)
        assert list(params.lookup(["zzz", "qqq", "fish"]))[:2] == [0, 0]

    def test_empty(self):
        params = init_params(toy_store(), hidden=3)
        with pytest.raises(ValueError):
            forward(params, [])

    def test_logit_clamped(self):
        params = init_params(toy_store(), hidden=3)
        params.W1[:] = 0
        params.b1[:] = 1.0
        params.w2[:] = 100.0
        cache = forward(params, ["fish"])
        assert cache.z == LOGIT_CLAMP and 0 < cache.s < 1

    def test_vkb_rows_copied_exactly(self):
        store = toy_store()
        params = init_params(store, hidden=3)
        for tok in store.tokens:
            assert np.array_equal(params.E[params.lookup([tok])[0]], store.vector(tok))


class TestBackward:
    def test_zero_head_blocks_token_gradients(self):
        params = init_params(toy_store(), hidden=3)
        params.w2[:] = 0
        cache = forward(params, ["fish"])
        _, tok = backward(params, cache, grad_s=1.0)
        assert np.all(tok.grads == 0)

    @pytest.mark.parametrize("dropout", [0.0, 0.3])
    def test_finite_differences(self, dropout):
        worst = 0.0
        for params, stmt, a, c in fd_instances(20, seed=11):
            cache = forward(params, stmt, dropout, seed=4)
            pg, tok = backward(params, cache, grad_s=a, grad_h=c)

            def f():
                return scalar_objective(params, stmt, a, c, cache.mask)

            for name in ("W1", "b1", "w2", "b2"):
                worst = max(worst, max_rel_err(getattr(pg, name), central_diff(f, getattr(params, name))))
            worst = max(worst, max_rel_err(pg.dense_E(len(params.vocab)), central_diff(f, params.E)))

            rows = params.E[params.lookup(stmt.tokens)].copy()

            def g():
                z, h, _ = reference_forward(rows, cache.mask, params.W1, params.b1, params.w2, params.b2)
                return a * sigmoid(z) + float(c @ h)

            worst = max(worst, max_rel_err(tok.grads, central_diff(g, rows)))
        assert worst <= 1e-4

    def test_duplicate_tokens_equal_gradients(self):
        params = init_params(toy_store(), hidden=4, seed=3)
        cache = forward(params, ["fish", "can", "fish"])
        _, tok = backward(params, cache, grad_s=1.0)
        assert np.array_equal(tok.grads[0], tok.grads[2])

    def test_stale_cache_rejected(self):
        params = init_params(toy_store(), hidden=3)
        cache = forward(params, ["fish"])
        params.version += 1
        with pytest.raises(ValueError):
            backward(params, cache, 1.0)
        with pytest.raises(ValueError):
            backward(params.copy(), forward(params, ["fish"]), 1.0)


class TestProbOfLabel:
    @pytest.mark.parametrize("s,label,want", [(0.8, True, 0.8), (0.8, False, 0.2), (0.5, True, 0.5), (0.5, False, 0.5)])
    def test_values(self, s, label, want):
        class C:
            pass
        c = C()
        c.s = s
        assert prob_of_label(c, label) == pytest.approx(want, abs=1e-15)


def test_checkpoint_round_trip(tmp_path):
    params = init_params(toy_store(), hidden=6, seed=9)
    params.E[0] += 0.25
    save_checkpoint(params, tmp_path / "m.ckpt", {"seed": 9, "config_hash": "abc"})
    back = load_checkpoint(tmp_path / "m.ckpt")
    assert back.vocab == params.vocab
    for name, arr in params.arrays().items():
        assert np.array_equal(getattr(back, name), arr)
    man = read_manifest(tmp_path / "m.ckpt")
    assert man["config_hash"] == "abc" and man["vocab_hash"] == params.vocab_hash()
    raw = (tmp_path / "m.ckpt").read_bytes()
    assert raw[:8] == b"CCSGCKPT" and raw[8] == 1


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "bad").write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad")
