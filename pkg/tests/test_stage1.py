import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bfla.blocks import BlockGeometry, partition_and_pool
from bfla.core import gen_workload
from bfla.errors import ConfigError
from bfla.stage1 import (
    BlockProbs,
    BlockScores,
    block_scores,
    block_softmax,
    causal_block_mask,
    keep_mass_select,
)

from oracles import naive_block_scores


def _scores(w, geom):
    return block_scores(partition_and_pool(w.Q, geom), partition_and_pool(w.K, geom), geom, w.m)


def _dyadic(w):
    # multiples of 1/8 in [-4, 4]: every product and partial sum is exact
    q = np.clip(np.round(w.Q * 8) / 8, -4, 4)
    k = np.clip(np.round(w.K * 8) / 8, -4, 4)
    return w.replace(Q=q, K=k)


def test_block_scores_equal_naive_loop_exactly():
    w = _dyadic(gen_workload(5, 1, 1, 8, 8, 2, precision="f64"))
    geom = BlockGeometry(4, 2, 4)
    np.testing.assert_array_equal(_scores(w, geom).S, naive_block_scores(w.Q, w.K, 4, 2, 0))


@pytest.mark.parametrize("shape", [(4, 2, 7, 19, 3, 4, 2), (2, 1, 9, 9, 2, 8, 2), (2, 2, 16, 21, 4, 8, 8)])
def test_block_scores_naive_chunked_padded(shape):
    h_q, h_kv, n_q, n_kv, c, b, g = shape
    w = _dyadic(gen_workload(17, h_q, h_kv, n_q, n_kv, c, precision="f64"))
    S = _scores(w, BlockGeometry(b, g, b)).S
    np.testing.assert_array_equal(S, naive_block_scores(w.Q, w.K, b, g, w.n_c))


def test_single_group_is_flat_dot():
    w = gen_workload(2, 1, 1, 8, 8, 3, precision="f64")
    S = _scores(w, BlockGeometry(4, 4, 4)).S
    flat_q, flat_k = w.Q[0].reshape(2, 12), w.K[0].reshape(2, 12)
    assert S[0, 0, 1, 0] == pytest.approx(flat_q[1] @ flat_k[0], rel=1e-14)
    assert S[0, 0, 0, 1] == -np.inf


def test_scaling_key_block_doubles_scores():
    w = gen_workload(9, 1, 1, 16, 16, 2, precision="f64")
    w = w.replace(Q=np.abs(w.Q), K=np.abs(w.K))  # positive scores
    geom = BlockGeometry(4, 2, 4)
    base = _scores(w, geom).S
    k = w.K.copy()
    k[:, 4:8] *= 2.0
    S = _scores(w.replace(K=k), geom).S
    np.testing.assert_allclose(S[..., 1][np.isfinite(base[..., 1])], 2 * base[..., 1][np.isfinite(base[..., 1])])
    for i in range(1, 4):
        if np.argmax(base[0, 0, i]) == 1:
            assert np.argmax(S[0, 0, i]) == 1


def test_stage1_macs_counter():
    w = gen_workload(3, 4, 2, 64, 64, 8)
    geom = BlockGeometry(16, 4, 8)
    out = _scores(w, geom)
    causal_pairs = 4 * 5 // 2
    assert out.macs == 4 * causal_pairs * 4 ** 2 * 4 * 8


def test_causal_block_mask_examples():
    b = 4
    geom = BlockGeometry(b, 1, 1)
    np.testing.assert_array_equal(causal_block_mask(geom, 0, 4 * b, 4 * b), np.tril(np.ones((4, 4), bool)))
    np.testing.assert_array_equal(causal_block_mask(geom, 2 * b, b, 3 * b), [[True, True, True]])
    assert causal_block_mask(BlockGeometry(256, 64, 64), 0, 1, 1).tolist() == [[True]]


def _probs_row(row, causal=None):
    row = np.asarray(row, dtype=np.float64)
    causal = np.ones((1, len(row)), bool) if causal is None else causal
    return BlockProbs(row.reshape(1, 1, 1, -1), 1.0, causal)


def test_block_softmax_examples():
    c = np.array([[True, False]])
    s = BlockScores(np.array([5.0, -np.inf]).reshape(1, 1, 1, 2), c, 0)
    np.testing.assert_array_equal(block_softmax(s, 4).A.ravel(), [1.0, 0.0])
    s = BlockScores(np.array([3.0, 3.0]).reshape(1, 1, 1, 2), np.ones((1, 2), bool), 0)
    np.testing.assert_array_equal(block_softmax(s, 4).A.ravel(), [0.5, 0.5])
    s = BlockScores(np.array([1.0, 2.0]).reshape(1, 1, 1, 2), np.ones((1, 2), bool), 0)
    out = block_softmax(s, 4)
    assert out.alpha == 0.5
    # scalar reference: softmax([0.5, 1.0])
    np.testing.assert_allclose(out.A.ravel(), [0.37754066879814546, 0.6224593312018546], rtol=1e-15)


def test_keep_mass_examples():
    km = keep_mass_select(_probs_row([0.5, 0.3, 0.15, 0.05]), 0.9)
    assert km.mass.ravel().tolist() == [True, True, True, False]
    km = keep_mass_select(_probs_row([0.4, 0.4, 0.2]), 0.4)
    assert km.mass.ravel().tolist() == [True, False, False]
    km = keep_mass_select(_probs_row([0.7, 0.2, 0.1, 0.0]), 1.0)
    assert km.mass.all()
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(ConfigError):
            keep_mass_select(_probs_row([1.0]), bad)


def test_keep_mass_gqa_union():
    a = np.array([[0.9, 0.1, 0.0], [0.05, 0.05, 0.9]]).reshape(1, 2, 1, 3)
    km = keep_mass_select(BlockProbs(a, 1.0, np.ones((1, 3), bool)), 0.8)
    assert km.mass[0, 0, 0].tolist() == [True, False, False]
    assert km.mass[0, 1, 0].tolist() == [False, False, True]
    assert km.kv[0, 0].tolist() == [True, False, True]


def _stage1_probs(seed, n=256, b=16, dist="gaussian", nq=None):
    w = gen_workload(seed, 4, 2, nq or n, n, 8, dist)
    geom = BlockGeometry(b, 4, b)
    return block_softmax(_scores(w, geom), w.dim), w, geom


def test_row_sums_and_noncausal_zero():
    probs, _, _ = _stage1_probs(1, nq=200)
    causal = np.broadcast_to(probs.causal, probs.A.shape)
    assert (probs.A[~causal] == 0).all()
    np.testing.assert_allclose(probs.A.sum(-1), 1.0, atol=1e-12)


def test_square_row0_keeps_only_block0():
    probs, _, _ = _stage1_probs(4)
    km = keep_mass_select(probs, 0.5)
    assert km.mass[:, :, 0, 0].all()
    assert not km.mass[:, :, 0, 1:].any()


def test_diagonal_block_nonzero():
    probs, w, geom = _stage1_probs(8, nq=100)
    for i in range(probs.A.shape[2]):
        j = (w.n_c + i * geom.b) // geom.b
        assert (probs.A[:, :, i, j] > 0).all()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 1.0), st.floats(0.05, 1.0))
def test_keep_mass_monotone_in_gamma(seed, g1, g2):
    g1, g2 = sorted((g1, g2))
    probs, _, _ = _stage1_probs(seed, n=128)
    lo, hi = keep_mass_select(probs, g1), keep_mass_select(probs, g2)
    assert not (lo.mass & ~hi.mass).any()


def test_clustered_concentrates_on_planted_blocks():
    w = gen_workload(2, 2, 1, 128, 128, 8, "clustered")
    geom = BlockGeometry(8, 2, 8)
    probs = block_softmax(_scores(w, geom), w.dim)
    planted = np.zeros(geom.n_blocks(w.n_kv), bool)
    for s, e in w.planted:
        planted[s // geom.b:(e - 1) // geom.b + 1] = True
    mass = probs.A[..., planted].sum(-1)
    assert mass.min() >= 0.5
