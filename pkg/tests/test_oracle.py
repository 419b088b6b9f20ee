import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from servesim.oracle import (TinyDims, TinyMlaWeights, count_deviation, equivalence_error,
                             instrumented_counts, make_state, mla_naive, mla_reordered,
                             random_instance, verify_suite)

GOLDEN = json.loads((Path(__file__).parent / "data" / "golden_mla.json").read_text())


def _weights(case):
    w = {k: np.array(v, dtype=float) for k, v in case["weights"].items()}
    return TinyMlaWeights(n_hd=GOLDEN["dims"]["n_hd"], **w)


@pytest.mark.parametrize("case", GOLDEN["cases"], ids=lambda c: f"seed{c['seed']}-ell{c['ell']}")
@pytest.mark.parametrize("path", [mla_naive, mla_reordered], ids=["naive", "reordered"])
def test_matches_loop_reference(case, path):
    w = _weights(case)
    state = make_state(w, np.array(case["H"], dtype=float), case["ell"])
    S, O = path(state, w)
    np.testing.assert_allclose(S, np.array(case["S"]), rtol=0, atol=1e-12)
    np.testing.assert_allclose(O, np.array(case["O"]), rtol=0, atol=1e-12)


def test_zero_weights_give_zero():
    dims = TinyDims(n_hd=3, d_hd=4, d_kvco=5, d_emb=6, L=7, ell=2)
    rng = np.random.default_rng(0)
    w = TinyMlaWeights.random(dims, rng, scale=0.0)
    state = make_state(w, rng.standard_normal((dims.L, dims.d_emb)), dims.ell)
    for path in (mla_naive, mla_reordered):
        S, O = path(state, w)
        assert not S.any() and not O.any()


def test_identity_reduces_to_plain_attention():
    # one head, latent == head dim, identity decompression, RoPE weights zero
    D, L = 4, 5
    rng = np.random.default_rng(1)
    Wq, Wk = rng.standard_normal((D, D)), rng.standard_normal((D, D))
    eye = np.eye(D)
    w = TinyMlaWeights(W_CQ=Wq, W_CKV=Wk, W_RK=np.zeros((D, 2)), W_DQ=eye, W_RQ=np.zeros((D, 2)),
                       W_DK=eye, W_DV=eye, n_hd=1)
    H = rng.standard_normal((L, D))
    state = make_state(w, H, L)
    Q, K = H @ Wq, H @ Wk
    s = Q @ K.T / np.sqrt(D) + np.triu(np.full((L, L), -np.inf), 1)
    p = np.exp(s - s.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    for path in (mla_naive, mla_reordered):
        S, O = path(state, w)
        np.testing.assert_allclose(S[0], Q @ K.T, atol=1e-12)
        np.testing.assert_allclose(O, p @ K, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(n_hd=st.integers(1, 4), d_hd=st.integers(1, 12), d_kvco=st.integers(1, 12),
       d_emb=st.integers(1, 12), d_qco=st.integers(1, 12), half_rope=st.integers(1, 6),
       L=st.integers(1, 12), data=st.data())
def test_reordering_preserves_outputs(n_hd, d_hd, d_kvco, d_emb, d_qco, half_rope, L, data):
    ell = data.draw(st.integers(1, L))
    seed = data.draw(st.integers(0, 2**31))
    dims = TinyDims(n_hd, d_hd, d_kvco, d_emb, L, d_qco, 2 * half_rope, ell)
    assert equivalence_error(*random_instance(dims, seed)) <= 1e-9


BIG = dict(n_hd=64, d_hd=64, d_kvco=128, d_emb=64, d_qco=64, d_rope=64)


@pytest.mark.parametrize("path", ["naive", "reordered"])
@pytest.mark.parametrize("dims", [TinyDims(L=128, ell=1, **BIG), TinyDims(L=64, ell=64, **BIG)],
                         ids=["decode", "prefill"])
def test_counts_match_closed_form(path, dims):
    dev = count_deviation(path, dims)
    assert dev
    assert max(dev.values()) <= 0.10, dev


@pytest.mark.parametrize("L", [8, 128, 512])
def test_k_decompress_flop_ratio_is_L(L):
    dims = TinyDims(L=L, ell=1, **BIG)
    fn, _ = instrumented_counts("naive", dims)
    fr, _ = instrumented_counts("reordered", dims)
    assert fn["d_k_decompress"] / fr["d_k_decompress"] == L


def test_single_token_decompress_flops_coincide():
    # with one cached token, decompressing K costs the same as absorbing it into Q
    dims = TinyDims(L=1, ell=1, **BIG)
    fn, _ = instrumented_counts("naive", dims)
    fr, _ = instrumented_counts("reordered", dims)
    assert fn["d_k_decompress"] == fr["d_k_decompress"]
    assert fn["e_v_decompress"] == fr["e_v_decompress"]


def test_bad_path_rejected():
    with pytest.raises(ValueError):
        instrumented_counts("other", TinyDims(1, 2, 2, 2, 2))


def test_verify_suite_all_pass():
    results = verify_suite(seeds=20)
    assert all(ok for _, ok, _ in results), results
