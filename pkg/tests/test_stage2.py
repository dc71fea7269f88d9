import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bfla.blocks import BlockGeometry
from bfla.errors import ConfigError
from bfla.stage1 import CoarseKeepMask, causal_block_mask
from bfla.stage2 import (
    Label,
    RescueConfig,
    apply_band_and_sink,
    build_tile_mask,
    expand_to_tiles,
    full_tile_mask,
    speculative_rescue,
    tile_causal_mask,
    to_pgm,
)

NO_RESCUE = RescueConfig(n_local=0, eta=0, rho=0.0)


def coarse_from(kv, causal):
    kv = np.asarray(kv, bool)
    return CoarseKeepMask(kv[:, None], kv, np.ones(kv.shape[:1] + (1,) + kv.shape[1:2]), 0, 0.5, causal)


def brute_tile_causal(n_q, n_kv, t):
    n_c = n_kv - n_q
    rows, cols = -(-n_q // t), -(-n_kv // t)
    return np.array([[j * t <= min(n_c + (i + 1) * t - 1, n_kv - 1) for j in range(cols)] for i in range(rows)])


@given(st.integers(1, 90), st.integers(0, 60), st.sampled_from([1, 2, 4, 8, 16]))
def test_tile_causal_matches_brute(n_q, extra, t):
    np.testing.assert_array_equal(tile_causal_mask(n_q, n_q + extra, t), brute_tile_causal(n_q, n_q + extra, t))


def test_identity_expansion():
    geom = BlockGeometry(4, 2, 4)
    causal = causal_block_mask(geom, 0, 16, 16)
    kv = np.tril(np.random.default_rng(0).random((1, 4, 4)) < 0.5) | np.eye(4, dtype=bool)
    tm = expand_to_tiles(coarse_from(kv, causal), geom, 16, 16)
    np.testing.assert_array_equal(tm.keep, kv & causal)


def test_expansion_patches():
    geom = BlockGeometry(256, 64, 64)
    n = 1024
    causal = causal_block_mask(geom, 0, n, n)
    kv = np.zeros((1, 4, 4), bool)
    kv[0, 2, 1] = True
    kv[0, 3, 3] = True
    tm = expand_to_tiles(coarse_from(kv, causal), geom, n, n)
    assert tm.keep[0, 8:12, 4:8].all() and tm.keep[0, 8:12, 4:8].sum() == 16
    # diagonal block: only the causal part of its 4x4 patch
    assert tm.keep[0, 12:16, 12:16].sum() == 10
    assert tm.keep.sum() == 26
    assert (tm.label[tm.keep] == Label.MASS).all()


def test_full_coarse_gives_full_causal_tiles():
    for n_q, n_kv in [(100, 100), (37, 300), (256, 256)]:
        geom = BlockGeometry(32, 8, 8)
        causal = causal_block_mask(geom, n_kv - n_q, n_q, n_kv)
        tm = expand_to_tiles(coarse_from(causal[None], causal), geom, n_q, n_kv)
        np.testing.assert_array_equal(tm.keep[0], tm.causal)


def _empty(h_kv, n_q, n_kv, t):
    geom = BlockGeometry(t, 1, t)
    causal = causal_block_mask(geom, n_kv - n_q, n_q, n_kv)
    return expand_to_tiles(coarse_from(np.zeros((h_kv,) + causal.shape, bool), causal), geom, n_q, n_kv)


def test_band_saturation():
    tm = apply_band_and_sink(_empty(2, 40, 64, 8), RescueConfig(n_local=100, eta=0))
    np.testing.assert_array_equal(tm.keep, np.broadcast_to(tm.causal, tm.keep.shape))


def test_band_zero_is_diagonal_plus_sink():
    tm = apply_band_and_sink(_empty(1, 32, 32, 8), RescueConfig(n_local=0, eta=0))
    expected = np.eye(4, dtype=bool)
    expected[:, 0] = True
    np.testing.assert_array_equal(tm.keep[0], expected)
    assert tm.label[0, 0, 0] == Label.SINK
    assert tm.label[0, 2, 2] == Label.BAND and tm.label[0, 2, 0] == Label.SINK


def test_band_chunked_frontier():
    # N_c = 20, T = 8: row 0 reaches absolute position 27 -> tile 3
    tm = apply_band_and_sink(_empty(1, 16, 36, 8), RescueConfig(n_local=1, eta=0))
    assert tm.keep[0, 0].tolist() == [True, False, True, True, False]
    assert tm.keep[0, 1].tolist() == [True, False, False, True, True]


def test_band_sink_idempotent_on_full():
    full = full_tile_mask(2, 50, 70, 8)
    out = apply_band_and_sink(full, RescueConfig(n_local=3))
    np.testing.assert_array_equal(out.keep, full.keep)
    np.testing.assert_array_equal(out.label, full.label)


def test_stride_one_rescues_everything():
    tm = apply_band_and_sink(_empty(2, 64, 64, 4), NO_RESCUE)
    out = speculative_rescue(tm, RescueConfig(n_local=0, eta=1))
    np.testing.assert_array_equal(out.keep, np.broadcast_to(out.causal, out.keep.shape))
    assert ((out.label == Label.STRIDE_RESCUED) == (~tm.keep & tm.causal[None])).all()


def test_no_rescue_is_noop():
    tm = apply_band_and_sink(_empty(2, 64, 64, 4), NO_RESCUE)
    out = speculative_rescue(tm, NO_RESCUE)
    np.testing.assert_array_equal(out.keep, tm.keep)
    np.testing.assert_array_equal(out.label, tm.label)


def test_rho_one_rescues_everything():
    tm = apply_band_and_sink(_empty(2, 64, 64, 4), NO_RESCUE)
    out = speculative_rescue(tm, RescueConfig(n_local=0, eta=0, rho=1.0))
    np.testing.assert_array_equal(out.keep, np.broadcast_to(out.causal, out.keep.shape))


def test_stride_rate_and_determinism():
    tm = apply_band_and_sink(_empty(1, 512, 512, 2), NO_RESCUE)
    a = speculative_rescue(tm, RescueConfig(n_local=0, eta=16, seed=3))
    b = speculative_rescue(tm, RescueConfig(n_local=0, eta=16, seed=3))
    assert a.keep.tobytes() == b.keep.tobytes() and a.label.tobytes() == b.label.tobytes()
    dropped = int((tm.causal[None] & ~tm.keep).sum())
    rate = (a.label == Label.STRIDE_RESCUED).sum() / dropped
    assert abs(rate - 1 / 16) < 0.01


@pytest.mark.parametrize("rho", [0.1, 0.3])
def test_random_rescue_binomial(rho):
    tm = apply_band_and_sink(_empty(2, 512, 512, 2), NO_RESCUE)
    dropped = int((tm.causal[None] & ~tm.keep).sum())
    assert dropped >= 10_000
    out = speculative_rescue(tm, RescueConfig(n_local=0, eta=0, rho=rho, seed=11))
    rescued = int((out.label == Label.RANDOM_RESCUED).sum())
    sigma = math.sqrt(dropped * rho * (1 - rho))
    assert abs(rescued - rho * dropped) <= 3 * sigma


def test_rescue_config_validation():
    for kw in ({"n_local": -1}, {"eta": -2}, {"rho": 1.5}, {"rho": -0.1}):
        with pytest.raises(ConfigError):
            RescueConfig(**kw)


@settings(max_examples=40, deadline=None)
@given(
    st.integers(1, 80), st.integers(0, 80), st.sampled_from([(8, 4), (8, 8), (16, 4)]),
    st.integers(0, 5), st.sampled_from([0, 1, 3, 16]), st.sampled_from([0.0, 0.2]),
    st.integers(0, 2**64 - 1),
)
def test_rescue_invariants(n_q, extra, bt, n_local, eta, rho, seed):
    b, t = bt
    n_kv = n_q + extra
    geom = BlockGeometry(b, 1, t)
    causal = causal_block_mask(geom, extra, n_q, n_kv)
    kv = (np.random.default_rng(seed % 1000).random((2,) + causal.shape) < 0.3) & causal
    rc = RescueConfig(n_local, eta, rho, seed)
    base = expand_to_tiles(coarse_from(kv, causal), geom, n_q, n_kv)
    final = build_tile_mask(coarse_from(kv, causal), geom, rc, n_q, n_kv)
    assert not (final.keep & ~final.causal[None]).any()
    assert not (base.keep & ~final.keep).any()
    assert final.keep[:, :, 0].all()
    d = final.frontier
    for i in range(len(d)):
        assert final.keep[:, i, max(0, d[i] - n_local): d[i] + 1].all()
    assert ((final.label != Label.DROPPED) == final.keep).all()
    assert (final.label[base.keep] == Label.MASS).all()


def test_pgm_format():
    tm = apply_band_and_sink(_empty(1, 24, 40, 8), RescueConfig(n_local=0, eta=0))
    text = to_pgm(tm)
    lines = text.splitlines()
    assert lines[:3] == ["P2", "5 3", "255"]
    assert lines[3].split() == ["192", "0", "160", "0", "0"]
    assert len(lines) == 6
