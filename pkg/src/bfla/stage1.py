"""Block-level importance estimation and keep-mass selection."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cmp_to_key

import numpy as np

from .blocks import BlockGeometry, PooledBlocks
from .errors import ConfigError, ContractViolation


@dataclass(frozen=True)
class BlockScores:
    S: np.ndarray  # (H_kv, m, L_q, L_kv), -inf where causally masked
    causal: np.ndarray  # (L_q, L_kv)
    macs: int


@dataclass(frozen=True)
class BlockProbs:
    A: np.ndarray  # (H_kv, m, L_q, L_kv)
    alpha: float
    causal: np.ndarray


@dataclass(frozen=True)
class CoarseKeepMask:
    mass: np.ndarray  # (H_kv, m, L_q, L_kv) per query head
    kv: np.ndarray  # (H_kv, L_q, L_kv), OR over the m query heads
    kept_mass: np.ndarray  # (H_kv, m, L_q)
    sort_ops: int
    gamma: float
    causal: np.ndarray  # (L_q, L_kv)

    @property
    def keeps_all_causal(self) -> np.ndarray:
        """(H_kv, m, L_q): row kept every causal block."""
        return self.mass.sum(axis=-1) == self.causal.sum(axis=-1)


def causal_frontier(n_q: int, n_kv: int, size: int) -> np.ndarray:
    """Last KV index (in units of ``size``) visible from each query unit.

    Query unit ``i`` ends at absolute position
    ``e_i = min(n_c + (i+1)*size - 1, n_kv - 1)``; unit ``j`` starts at ``j*size``
    and is causal iff ``j*size <= e_i``.
    """
    n_c = n_kv - n_q
    n_units = -(-n_q // size)
    ends = np.minimum(n_c + (np.arange(n_units) + 1) * size - 1, n_kv - 1)
    return ends // size


def causal_block_mask(geom: BlockGeometry, n_c: int, n_q: int, n_kv: int) -> np.ndarray:
    if n_c != n_kv - n_q or n_c < 0:
        raise ConfigError(f"inconsistent chunk: n_c={n_c}, n_q={n_q}, n_kv={n_kv}")
    last = causal_frontier(n_q, n_kv, geom.b)
    return np.arange(geom.n_blocks(n_kv))[None, :] <= last[:, None]


def block_scores(
    phi_q: PooledBlocks, phi_k: PooledBlocks, geom: BlockGeometry, gqa_m: int
) -> BlockScores:
    """Max-pooled group dot products for every causal (query block, KV block).

    Group pairs where either side is pure padding do not take part in the max.
    Only one query block's group scores are held at a time.
    """
    h_q, l_q, groups, gc = phi_q.data.shape
    h_kv, l_kv = phi_k.data.shape[:2]
    if h_q != gqa_m * h_kv or phi_k.data.shape[2:] != (groups, gc):
        raise ConfigError("pooled Q/K shapes are inconsistent with gqa_m")
    n_q, n_kv = phi_q.n_tokens, phi_k.n_tokens
    causal = causal_block_mask(geom, n_kv - n_q, n_q, n_kv)
    last = causal_frontier(n_q, n_kv, geom.b)

    S = np.full((h_kv, gqa_m, l_q, l_kv), -np.inf)
    kv_valid = np.arange(groups)[None, :] < phi_k.valid_groups[:, None]  # (L_kv, G)
    macs = 0
    for i in range(l_q):
        n_j = int(last[i]) + 1
        vq = int(phi_q.valid_groups[i])
        valid = kv_valid[:n_j]
        n_pairs = vq * int(valid.sum())
        if n_pairs == 0:
            raise ContractViolation(f"query block {i} has no valid group pair")
        for h in range(h_kv):
            qg = phi_q.data[h * gqa_m:(h + 1) * gqa_m, i, :vq].astype(np.float64)
            kg = phi_k.data[h, :n_j].astype(np.float64).reshape(n_j * groups, gc)
            sc = (qg.reshape(gqa_m * vq, gc) @ kg.T).reshape(gqa_m, vq, n_j, groups)
            sc = np.where(valid[None, None], sc, -np.inf)
            S[h, :, i, :n_j] = sc.max(axis=(1, 3))
        macs += h_q * n_pairs * gc
    return BlockScores(S, causal, macs)


def block_softmax(s: BlockScores, dim: int) -> BlockProbs:
    alpha = 1.0 / np.sqrt(dim)
    if not s.causal.any(axis=1).all():
        raise ContractViolation("a query block has no causal KV block")
    causal = np.broadcast_to(s.causal, s.S.shape)
    if not np.isfinite(s.S[causal]).all():
        raise ContractViolation("non-finite score on a causal block")
    x = np.where(causal, alpha * s.S, -np.inf)
    x = x - x.max(axis=-1, keepdims=True)
    e = np.where(causal, np.exp(x), 0.0)
    return BlockProbs(e / e.sum(axis=-1, keepdims=True), float(alpha), s.causal)


def _select_row(probs: np.ndarray, n_causal: int, gamma: float) -> tuple[list[int], float, int]:
    comparisons = 0

    def cmp(a: int, b: int) -> int:
        nonlocal comparisons
        comparisons += 1
        if probs[a] != probs[b]:
            return -1 if probs[a] > probs[b] else 1
        return -1 if a < b else (1 if a > b else 0)

    order = sorted(range(n_causal), key=cmp_to_key(cmp))
    if gamma >= 1.0:
        return order, float(sum(float(probs[j]) for j in order)), comparisons
    acc = 0.0
    for r, j in enumerate(order, 1):
        acc += float(probs[j])
        if acc >= gamma:
            return order[:r], acc, comparisons
    # rounding kept the total just below gamma: keep everything causal
    return order, acc, comparisons


def keep_mass_select(a: BlockProbs, gamma: float) -> CoarseKeepMask:
    """Keep, per (KV head, query head, query block), the shortest prefix of
    KV blocks sorted by descending probability (ties to the lower index)
    whose mass reaches ``gamma``. ``gamma >= 1`` keeps every causal block."""
    if not (0.0 < gamma <= 1.0):
        raise ConfigError(f"gamma must lie in (0, 1], got {gamma}")
    h_kv, m, l_q, l_kv = a.A.shape
    n_causal = a.causal.sum(axis=1)
    mass = np.zeros(a.A.shape, dtype=bool)
    kept_mass = np.zeros((h_kv, m, l_q))
    sort_ops = 0
    for h in range(h_kv):
        for p in range(m):
            for i in range(l_q):
                kept, acc, ops = _select_row(a.A[h, p, i], int(n_causal[i]), gamma)
                mass[h, p, i, kept] = True
                kept_mass[h, p, i] = acc
                sort_ops += ops
    return CoarseKeepMask(mass, mass.any(axis=1), kept_mass, sort_ops, float(gamma), a.causal)
