"""Density accounting, the MAC cost model and the Frobenius error bound."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .blocks import BlockGeometry
from .core import DENSE_SIZE_GUARD, WorkloadTensors, causal_token_mask, frobenius_norm
from .errors import ContractViolation, SizeGuardError
from .kernel import token_keep_mask
from .stage1 import causal_block_mask
from .stage2 import Label, TileMask, tile_causal_mask

BOUND_SLACK = 1e-9


@dataclass(frozen=True)
class DensityStats:
    kept: int
    causal_tiles: int  # summed over KV heads
    density: float
    sparsity: float
    per_label: dict

    @property
    def kappa(self) -> Fraction:
        return Fraction(self.kept, self.causal_tiles)


def density_stats(mask: TileMask) -> DensityStats:
    """Kept causal tiles over all causal tiles, pooled across KV heads."""
    kept = int(mask.keep.sum())
    total = mask.causal_tiles * mask.keep.shape[0]
    per_label = {
        lab.name.lower(): int(((mask.label == lab) & mask.keep).sum())
        for lab in Label
        if lab != Label.DROPPED
    }
    density = kept / total
    return DensityStats(kept, total, density, 1.0 - density, per_label)


def _span(idx: int, size: int, n: int) -> int:
    return min((idx + 1) * size, n) - idx * size


def dense_tile_macs(h_q: int, n_q: int, n_kv: int, dim: int, tile: int) -> int:
    """MACs of a dense tiled causal kernel (QK^T and PV) visiting every causal tile."""
    causal = tile_causal_mask(n_q, n_kv, tile)
    rows = np.array([_span(i, tile, n_q) for i in range(causal.shape[0])], dtype=np.int64)
    cols = np.array([_span(j, tile, n_kv) for j in range(causal.shape[1])], dtype=np.int64)
    pairs = int((rows[:, None] * cols[None, :] * causal).sum())
    return 2 * h_q * pairs * dim


@dataclass(frozen=True)
class CostModel:
    dense_full: int  # H_q N_q N_kv C
    stage1_full: Fraction  # H_q N_q N_kv C / g
    stage1_causal: int  # H_q * causal block pairs * G^2 g C
    dense_causal: int  # dense_tile_macs
    stage2: Fraction  # kappa * dense_causal
    sort_ops_hq: float  # H_q L_q L_kv log2 L_kv
    sort_ops_hkv: float
    square_total: Fraction | None  # H_q N^2 C / g + kappa H_q N^2 C when N_q == N_kv


def cost_model(
    geom: BlockGeometry, h_q: int, h_kv: int, n_q: int, n_kv: int, dim: int, kappa
) -> CostModel:
    kappa = Fraction(kappa)
    if not (0 < kappa <= 1):
        raise ValueError(f"kappa must lie in (0, 1], got {kappa}")
    l_q, l_kv = geom.n_blocks(n_q), geom.n_blocks(n_kv)
    causal_pairs = int(causal_block_mask(geom, n_kv - n_q, n_q, n_kv).sum())
    dense_causal = dense_tile_macs(h_q, n_q, n_kv, dim, geom.tile)
    log_term = l_q * l_kv * math.log2(l_kv) if l_kv > 1 else 0.0
    square = None
    if n_q == n_kv:
        square = Fraction(h_q * n_q * n_q * dim, geom.g) + kappa * h_q * n_q * n_q * dim
    return CostModel(
        dense_full=h_q * n_q * n_kv * dim,
        stage1_full=Fraction(h_q * n_q * n_kv * dim, geom.g),
        stage1_causal=h_q * causal_pairs * geom.groups**2 * geom.g * dim,
        dense_causal=dense_causal,
        stage2=kappa * dense_causal,
        sort_ops_hq=h_q * log_term,
        sort_ops_hkv=h_kv * log_term,
        square_total=square,
    )


@dataclass(frozen=True)
class CostReport:
    kappa: Fraction
    dense_macs: int
    stage1_macs: int
    stage2_macs: int
    predicted_stage1: int
    predicted_stage2: Fraction
    sort_ops: int
    model: CostModel

    @property
    def stage1_matches(self) -> bool:
        return self.stage1_macs == self.predicted_stage1

    @property
    def stage2_matches(self) -> bool:
        return self.stage2_macs == self.predicted_stage2


def cost_report(
    geom: BlockGeometry,
    w: WorkloadTensors,
    mask: TileMask,
    stage1_macs: int,
    stage2_macs: int,
    sort_ops: int,
) -> CostReport:
    kappa = density_stats(mask).kappa
    model = cost_model(geom, w.h_q, w.h_kv, w.n_q, w.n_kv, w.dim, kappa)
    return CostReport(
        kappa=kappa,
        dense_macs=model.dense_causal,
        stage1_macs=stage1_macs,
        stage2_macs=stage2_macs,
        predicted_stage1=model.stage1_causal,
        predicted_stage2=model.stage2,
        sort_ops=sort_ops,
        model=model,
    )


@dataclass(frozen=True)
class BoundReport:
    """Per query head: ``lhs = ||O - O_s||_F``, ``alpha`` the bound factor,
    ``rhs = alpha ||A||_F ||V||_F``."""

    lhs: np.ndarray
    alpha: np.ndarray
    rhs: np.ndarray

    @property
    def holds(self) -> bool:
        return bool(np.all(self.lhs <= self.rhs + BOUND_SLACK * self.rhs))


def _normalize(e: np.ndarray, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ez = e * z
    d = ez.sum(axis=1)
    if not (d > 0).all():
        raise ContractViolation("zero row sum in attention normalizer")
    return ez / d[:, None], d


def error_bound_check(
    w: WorkloadTensors, mask: TileMask, size_guard: int = DENSE_SIZE_GUARD
) -> BoundReport:
    """Check ``||A2 V - A V||_F <= alpha ||A||_F ||V||_F`` head by head.

    ``Z_s`` is the causal indicator, ``Z`` the kept-tile indicator intersected
    with causality, ``D_s``/``D`` the matching row normalizers and
    ``alpha = ||D^-1 D_s - I||_F ||Z||_F + ||Z - Z_s||_F``.
    """
    if w.n_kv > size_guard:
        raise SizeGuardError(f"N_kv={w.n_kv} exceeds size guard {size_guard}")
    scale = 1.0 / np.sqrt(w.dim)
    z_s = causal_token_mask(w.n_q, w.n_kv).astype(np.float64)
    lhs, alpha, rhs = (np.empty(w.h_q) for _ in range(3))
    for p in range(w.h_q):
        h = p // w.m
        z = token_keep_mask(mask, h).astype(np.float64)
        scores = (w.Q[p].astype(np.float64) @ w.K[h].astype(np.float64).T) * scale
        # a common per-row shift cancels in both normalizations
        shift = np.where(z_s > 0, scores, -np.inf).max(axis=1, keepdims=True)
        e = np.exp(np.minimum(scores - shift, 0.0)) * z_s
        a_dense, d_s = _normalize(e, z_s)
        a_sparse, d = _normalize(e, z)
        v = w.V[h].astype(np.float64)
        lhs[p] = frobenius_norm(a_sparse @ v - a_dense @ v)
        alpha[p] = frobenius_norm(d_s / d - 1.0) * frobenius_norm(z) + frobenius_norm(z - z_s)
        rhs[p] = alpha[p] * frobenius_norm(a_dense) * frobenius_norm(v)
    return BoundReport(lhs, alpha, rhs)
