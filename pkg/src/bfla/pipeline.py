"""End-to-end run and parameter sweeps."""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from . import analysis
from .blocks import partition_and_pool
from .config import BflaConfig
from .core import DENSE_SIZE_GUARD, dense_causal_attention, gen_workload, relative_frobenius
from .errors import ConfigError
from .kernel import SparseOutput, sparse_prefill_attention
from .stage1 import CoarseKeepMask, block_scores, block_softmax, keep_mass_select
from .stage2 import TileMask, build_tile_mask

CSV_COLUMNS = (
    "b", "g", "gamma", "tile", "n_local", "eta", "rho", "seed", "hq", "hkv", "nq", "nkv",
    "dim", "density", "sparsity", "kappa", "max_rel_err", "stage1_macs", "stage2_macs",
    "dense_macs", "mask_build_ms", "bound_holds",
)

DEFAULT_SWEEP_CAP = 64


@dataclass(frozen=True)
class MaskBuild:
    coarse: CoarseKeepMask
    mask: TileMask
    stage1_macs: int


def build_mask(cfg: BflaConfig, w) -> MaskBuild:
    geom = cfg.geometry
    phi_q = partition_and_pool(w.Q, geom)
    phi_k = partition_and_pool(w.K, geom)
    scores = block_scores(phi_q, phi_k, geom, w.m)
    probs = block_softmax(scores, w.dim)
    coarse = keep_mass_select(probs, cfg.gamma)
    mask = build_tile_mask(coarse, geom, cfg.rescue, w.n_q, w.n_kv)
    return MaskBuild(coarse, mask, scores.macs)


@dataclass
class RunReport:
    config: BflaConfig
    density: analysis.DensityStats
    cost: analysis.CostReport
    bound: analysis.BoundReport | None
    max_rel_err: float | None
    timings_ms: dict
    checks: dict
    mask: TileMask = field(repr=False)
    output: SparseOutput = field(repr=False)

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def csv_row(self) -> dict:
        c = self.config
        return {
            "b": c.b, "g": c.g, "gamma": c.gamma, "tile": c.tile, "n_local": c.n_local,
            "eta": c.eta, "rho": c.rho, "seed": c.seed, "hq": c.hq, "hkv": c.hkv,
            "nq": c.nq, "nkv": c.nkv, "dim": c.dim,
            "density": self.density.density,
            "sparsity": self.density.sparsity,
            "kappa": float(self.cost.kappa),
            "max_rel_err": self.max_rel_err,
            "stage1_macs": self.cost.stage1_macs,
            "stage2_macs": self.cost.stage2_macs,
            "dense_macs": self.cost.dense_macs,
            "mask_build_ms": self.timings_ms.get("mask_build"),
            "bound_holds": None if self.bound is None else self.bound.holds,
        }

    def as_record(self) -> dict:
        cost = self.cost
        rec = {
            "config": self.config.as_dict(),
            "density": {
                "kept": self.density.kept,
                "causal_tiles": self.density.causal_tiles,
                "density": self.density.density,
                "sparsity": self.density.sparsity,
                "per_label": self.density.per_label,
            },
            "cost": {
                "kappa": float(cost.kappa),
                "dense_macs": cost.dense_macs,
                "stage1_macs": cost.stage1_macs,
                "stage2_macs": cost.stage2_macs,
                "predicted_stage1": cost.predicted_stage1,
                "predicted_stage2": float(cost.predicted_stage2),
                "predicted_stage1_asymptotic": float(cost.model.stage1_full),
                "dense_asymptotic": cost.model.dense_full,
                "sort_ops": cost.sort_ops,
                "predicted_sort_ops_hq": cost.model.sort_ops_hq,
                "predicted_sort_ops_hkv": cost.model.sort_ops_hkv,
            },
            "max_rel_err": self.max_rel_err,
            "checks": self.checks,
            "timings_ms": self.timings_ms,
        }
        if self.bound is not None:
            rec["bound"] = {
                "lhs": [float(x) for x in self.bound.lhs],
                "alpha": [float(x) for x in self.bound.alpha],
                "rhs": [float(x) for x in self.bound.rhs],
                "holds": self.bound.holds,
            }
        return rec


def _internal_checks(cfg: BflaConfig, w, built: MaskBuild, cost, bound) -> dict:
    coarse, mask = built.coarse, built.mask
    checks = {}
    # rows that kept every causal block are exempt: gamma >= 1 or rounding
    checks["mass_guarantee"] = bool(
        np.all((coarse.kept_mass >= cfg.gamma) | coarse.keeps_all_causal)
    )
    checks["mask_causal"] = bool(not (mask.keep & ~mask.causal[None]).any())
    frontier = mask.frontier
    rows = np.arange(len(frontier))
    lo = np.maximum(0, frontier - cfg.n_local)
    band_ok = all(mask.keep[:, i, lo[i]:frontier[i] + 1].all() for i in rows)
    checks["band_and_sink_present"] = bool(band_ok and mask.keep[:, :, 0].all())
    full_tiles = w.n_q % cfg.tile == 0 and w.n_kv % cfg.tile == 0
    if full_tiles:
        checks["stage2_macs_eq_kappa_dense"] = cost.stage2_matches
    full_blocks = w.n_q % cfg.b == 0 and w.n_kv % cfg.b == 0
    if full_blocks:
        checks["stage1_macs_eq_model"] = cost.stage1_matches
    if bound is not None:
        checks["error_bound_holds"] = bound.holds
    return checks


def run(cfg: BflaConfig, timing: bool = False, workers: int = 1) -> RunReport:
    cfg.validate()
    timings = {}
    clock = time.perf_counter
    w = gen_workload(cfg.seed, cfg.hq, cfg.hkv, cfg.nq, cfg.nkv, cfg.dim, cfg.dist, cfg.precision)

    t0 = clock()
    built = build_mask(cfg, w)
    t1 = clock()
    out = sparse_prefill_attention(w, built.mask, workers=workers)
    t2 = clock()

    use_oracle = cfg.oracle == "on" or (cfg.oracle == "auto" and cfg.nkv <= DENSE_SIZE_GUARD)
    max_err = None
    if use_oracle:
        dense = dense_causal_attention(w)
        max_err = max(relative_frobenius(out.O[p], dense.O[p]) for p in range(w.h_q))
    t3 = clock()
    bound = analysis.error_bound_check(w, built.mask) if cfg.bound_check else None
    t4 = clock()

    if timing:
        timings = {
            "mask_build": (t1 - t0) * 1e3,
            "sparse_kernel": (t2 - t1) * 1e3,
            "dense_oracle": (t3 - t2) * 1e3,
            "bound_check": (t4 - t3) * 1e3,
        }
    density = analysis.density_stats(built.mask)
    cost = analysis.cost_report(
        cfg.geometry, w, built.mask, built.stage1_macs, out.macs, built.coarse.sort_ops
    )
    checks = _internal_checks(cfg, w, built, cost, bound)
    return RunReport(cfg, density, cost, bound, max_err, timings, checks, built.mask, out)


def parse_sweep(specs: list[str]) -> list[tuple[str, list[str]]]:
    grid = []
    for spec in specs:
        if "=" not in spec:
            raise ConfigError(f"sweep spec {spec!r} must look like KEY=V1,V2,...")
        key, values = spec.split("=", 1)
        vals = [v for v in values.split(",") if v.strip()]
        if not vals:
            raise ConfigError(f"sweep spec {spec!r} lists no values")
        grid.append((key.strip(), vals))
    return grid


def sweep(
    base: BflaConfig,
    grid: list[tuple[str, list[str]]],
    cap: int = DEFAULT_SWEEP_CAP,
    timing: bool = False,
    workers: int = 1,
) -> list[RunReport]:
    """Cross product of ``grid`` (first key varies slowest), one run per point."""
    size = 1
    for _, vals in grid:
        size *= len(vals)
    if size > cap:
        raise ConfigError(f"sweep grid has {size} points, above the cap of {cap}")
    keys = [k for k, _ in grid]
    configs = [
        base.with_values(**dict(zip(keys, combo))).validate()
        for combo in itertools.product(*(v for _, v in grid))
    ]
    return [run(c, timing=timing, workers=workers) for c in configs]
