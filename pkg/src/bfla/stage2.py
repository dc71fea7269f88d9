"""Tile-grid expansion of the coarse mask and the tile rescue strategies."""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import IntEnum

import numpy as np

from .blocks import BlockGeometry
from .errors import ConfigError
from .hashing import mix_chi, mix_chi_grid, mix_psi, mix_psi_grid  # noqa: F401
from .stage1 import CoarseKeepMask, causal_frontier


class Label(IntEnum):
    DROPPED = 0
    RANDOM_RESCUED = 1
    STRIDE_RESCUED = 2
    BAND = 3
    SINK = 4
    MASS = 5


# greymap levels for mask dumps
PGM_LEVEL = {
    Label.DROPPED: 0,
    Label.RANDOM_RESCUED: 96,
    Label.STRIDE_RESCUED: 128,
    Label.BAND: 160,
    Label.SINK: 192,
    Label.MASS: 255,
}


@dataclass(frozen=True)
class RescueConfig:
    n_local: int = 8
    eta: int = 16  # 0 disables stride rescue
    rho: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_local < 0:
            raise ConfigError(f"n_local must be >= 0, got {self.n_local}")
        if self.eta < 0:
            raise ConfigError(f"eta must be >= 1 (or 0 to disable), got {self.eta}")
        if not (0.0 <= self.rho <= 1.0):
            raise ConfigError(f"rho must lie in [0, 1], got {self.rho}")


@dataclass(frozen=True)
class TileMask:
    keep: np.ndarray  # (H_kv, T_q, T_kv) bool
    label: np.ndarray  # (H_kv, T_q, T_kv) uint8 Label
    causal: np.ndarray  # (T_q, T_kv) bool
    tile: int
    n_q: int
    n_kv: int

    @property
    def causal_tiles(self) -> int:
        return int(self.causal.sum())

    @property
    def frontier(self) -> np.ndarray:
        return causal_frontier(self.n_q, self.n_kv, self.tile)


def tile_causal_mask(n_q: int, n_kv: int, tile: int) -> np.ndarray:
    last = causal_frontier(n_q, n_kv, tile)
    return np.arange(-(-n_kv // tile))[None, :] <= last[:, None]


def expand_to_tiles(coarse: CoarseKeepMask, geom: BlockGeometry, n_q: int, n_kv: int) -> TileMask:
    """Each kept coarse block becomes a ``rho_b x rho_b`` patch of tiles."""
    if geom.b % geom.tile:
        raise ConfigError(f"tile={geom.tile} does not divide b={geom.b}")
    r = geom.rho_b
    t_q, t_kv = geom.n_tiles(n_q), geom.n_tiles(n_kv)
    big = np.repeat(np.repeat(coarse.kv, r, axis=1), r, axis=2)[:, :t_q, :t_kv]
    causal = tile_causal_mask(n_q, n_kv, geom.tile)
    keep = big & causal[None]
    label = np.where(keep, Label.MASS, Label.DROPPED).astype(np.uint8)
    return TileMask(keep, label, causal, geom.tile, n_q, n_kv)


def full_tile_mask(h_kv: int, n_q: int, n_kv: int, tile: int) -> TileMask:
    causal = tile_causal_mask(n_q, n_kv, tile)
    keep = np.broadcast_to(causal, (h_kv,) + causal.shape).copy()
    label = np.where(keep, Label.MASS, Label.DROPPED).astype(np.uint8)
    return TileMask(keep, label, causal, tile, n_q, n_kv)


def apply_band_and_sink(mask: TileMask, rc: RescueConfig) -> TileMask:
    """Add the local band (``n_local + 1`` tiles ending at each row's causal
    frontier) and the sink column 0. Sink outranks band when both apply."""
    t_q, t_kv = mask.causal.shape
    cols = np.arange(t_kv)[None, :]
    d = mask.frontier[:, None]
    band = (cols <= d) & (cols >= np.maximum(0, d - rc.n_local))
    sink = np.zeros_like(band)
    sink[:, 0] = mask.causal[:, 0]

    label = mask.label.copy()
    dropped = label == Label.DROPPED
    label[dropped & sink[None]] = Label.SINK
    label[(label == Label.DROPPED) & band[None]] = Label.BAND
    keep = mask.keep | band[None] | sink[None]
    return replace(mask, keep=keep, label=label)


def speculative_rescue(mask: TileMask, rc: RescueConfig) -> TileMask:
    """Re-admit dropped causal tiles by stride hash and by random draw."""
    h_kv, t_q, t_kv = mask.keep.shape
    dropped = mask.causal[None] & ~mask.keep
    rows, cols = np.meshgrid(np.arange(t_q), np.arange(t_kv), indexing="ij")

    if rc.eta >= 1:
        stride = (mix_chi_grid(rows, cols, rc.seed) % np.uint64(rc.eta)) == 0
        stride = np.broadcast_to(stride, dropped.shape)
    else:
        stride = np.zeros(dropped.shape, dtype=bool)
    if rc.rho > 0.0:
        rand = np.stack([mix_psi_grid(h, rows, cols, rc.seed) < rc.rho for h in range(h_kv)])
    else:
        rand = np.zeros(dropped.shape, dtype=bool)

    label = mask.label.copy()
    label[dropped & stride] = Label.STRIDE_RESCUED
    label[dropped & ~stride & rand] = Label.RANDOM_RESCUED
    keep = mask.keep | (dropped & (stride | rand))
    return replace(mask, keep=keep, label=label)


def build_tile_mask(
    coarse: CoarseKeepMask, geom: BlockGeometry, rc: RescueConfig, n_q: int, n_kv: int
) -> TileMask:
    tm = expand_to_tiles(coarse, geom, n_q, n_kv)
    tm = apply_band_and_sink(tm, rc)
    return speculative_rescue(tm, rc)


def to_pgm(mask: TileMask, head: int = 0) -> str:
    """Plain ``P2`` greymap, one pixel per tile, width ``T_kv``."""
    levels = np.zeros(256, dtype=np.int64)
    for lab, v in PGM_LEVEL.items():
        levels[int(lab)] = v
    px = np.where(mask.keep[head], levels[mask.label[head]], 0)
    t_q, t_kv = px.shape
    lines = ["P2", f"{t_kv} {t_q}", "255"]
    lines += [" ".join(str(int(v)) for v in row) for row in px]
    return "\n".join(lines) + "\n"
