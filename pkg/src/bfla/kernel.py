"""Exact-inside-tile sparse causal attention."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import DENSE_SIZE_GUARD, WorkloadTensors, causal_token_mask, masked_softmax_rows
from .errors import ConfigError, ContractViolation, SizeGuardError
from .stage2 import TileMask


@dataclass(frozen=True)
class SparseOutput:
    O: np.ndarray  # (H_q, N_q, C), dtype of the inputs
    tiles_visited: np.ndarray  # (H_q, T_q)
    macs: int


def _check_shapes(w: WorkloadTensors, mask: TileMask):
    t = mask.tile
    expect = (w.h_kv, -(-w.n_q // t), -(-w.n_kv // t))
    if mask.keep.shape != expect or (mask.n_q, mask.n_kv) != (w.n_q, w.n_kv):
        raise ConfigError(f"tile mask shape {mask.keep.shape} does not match workload {expect}")


def _head(w: WorkloadTensors, mask: TileMask, p: int):
    h = p // w.m
    t = mask.tile
    n_c = w.n_c
    scale = 1.0 / np.sqrt(w.dim)
    q_all = w.Q[p].astype(np.float64)
    k_all = w.K[h].astype(np.float64)
    v_all = w.V[h].astype(np.float64)
    t_q = mask.keep.shape[1]
    out = np.empty((w.n_q, w.dim))
    visited = np.zeros(t_q, dtype=np.int64)
    macs = 0
    for i in range(t_q):
        r0, r1 = i * t, min((i + 1) * t, w.n_q)
        q = q_all[r0:r1] * scale
        limit = n_c + np.arange(r0, r1)  # last visible absolute position per row
        run_max = np.full(r1 - r0, -np.inf)
        denom = np.zeros(r1 - r0)
        acc = np.zeros((r1 - r0, w.dim))
        for j in np.flatnonzero(mask.keep[h, i]):
            c0, c1 = j * t, min((j + 1) * t, w.n_kv)
            s = q @ k_all[c0:c1].T
            s = np.where(np.arange(c0, c1)[None, :] <= limit[:, None], s, -np.inf)
            new_max = np.maximum(run_max, s.max(axis=1))
            live = np.isfinite(new_max)
            base = np.where(live, new_max, 0.0)
            shrink = np.where(np.isfinite(run_max), np.exp(run_max - base), 0.0)
            prob = np.exp(s - base[:, None])
            denom = denom * shrink + prob.sum(axis=1)
            acc = acc * shrink[:, None] + prob @ v_all[c0:c1]
            run_max = new_max
            visited[i] += 1
            macs += 2 * (r1 - r0) * (c1 - c0) * w.dim
        if not (denom > 0).all():
            bad = r0 + int(np.argmin(denom > 0))
            raise ContractViolation(f"query head {p}, row {bad}: no attendable key in kept tiles")
        out[r0:r1] = acc / denom[:, None]
    return out, visited, macs


def sparse_prefill_attention(
    w: WorkloadTensors, mask: TileMask, workers: int = 1
) -> SparseOutput:
    """Online-softmax attention over the kept KV tiles of each query tile row.

    Tiles are visited in ascending column order with float64 running max,
    denominator and accumulator; key positions past a row's causal limit are
    masked token by token. Dropped tiles are never read.
    """
    _check_shapes(w, mask)
    heads = range(w.h_q)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda p: _head(w, mask, p), heads))
    else:
        results = [_head(w, mask, p) for p in heads]
    out = np.stack([r[0] for r in results]).astype(w.Q.dtype)
    visited = np.stack([r[1] for r in results])
    return SparseOutput(out, visited, sum(r[2] for r in results))


def token_keep_mask(mask: TileMask, h: int) -> np.ndarray:
    """Token-level ``(N_q, N_kv)`` view of head ``h``: kept tile and causal."""
    t = mask.tile
    tiles = np.repeat(np.repeat(mask.keep[h], t, axis=0), t, axis=1)
    return tiles[: mask.n_q, : mask.n_kv] & causal_token_mask(mask.n_q, mask.n_kv)


def reference_masked_attention(
    w: WorkloadTensors, mask: TileMask, size_guard: int = DENSE_SIZE_GUARD
) -> SparseOutput:
    """Oracle: materialize the additive mask and take a plain row softmax."""
    _check_shapes(w, mask)
    if w.n_kv > size_guard:
        raise SizeGuardError(f"N_kv={w.n_kv} exceeds size guard {size_guard}")
    scale = 1.0 / np.sqrt(w.dim)
    out = np.empty((w.h_q, w.n_q, w.dim))
    for p in range(w.h_q):
        h = p // w.m
        allowed = token_keep_mask(mask, h)
        additive = np.where(allowed, 0.0, -np.inf)
        scores = (w.Q[p].astype(np.float64) @ w.K[h].astype(np.float64).T) * scale + additive
        if not allowed.any(axis=1).all():
            raise ContractViolation(f"query head {p} has a row with no attendable key")
        out[p] = masked_softmax_rows(scores, allowed) @ w.V[h].astype(np.float64)
    visited = np.repeat(mask.keep.sum(axis=2), w.m, axis=0)
    return SparseOutput(out, visited, 0)
