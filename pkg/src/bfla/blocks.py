"""Coarse block partitioning and flattening-g pooling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


def _is_pow2(x: int) -> bool:
    return x >= 1 and (x & (x - 1)) == 0


@dataclass(frozen=True)
class BlockGeometry:
    """Block size ``b``, flattening group ``g`` and execution tile ``tile``."""

    b: int
    g: int
    tile: int

    def __post_init__(self):
        for name in ("b", "g", "tile"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or not _is_pow2(int(v)):
                raise ConfigError(f"{name}={v!r} must be a power of two >= 1")
        if self.b % self.g:
            raise ConfigError(f"g={self.g} does not divide b={self.b}")
        if self.b % self.tile:
            raise ConfigError(f"tile={self.tile} does not divide b={self.b}")

    @property
    def groups(self) -> int:
        return self.b // self.g

    @property
    def rho_b(self) -> int:
        return self.b // self.tile

    def n_blocks(self, n: int) -> int:
        return -(-n // self.b)

    def n_tiles(self, n: int) -> int:
        return -(-n // self.tile)


@dataclass(frozen=True)
class PooledBlocks:
    """``data`` has shape ``(H, L, G, g*C)``; ``valid_groups[l]`` counts groups
    of block ``l`` holding at least one real token (groups fill in order, so the
    valid ones are always a prefix)."""

    data: np.ndarray
    valid_groups: np.ndarray
    n_tokens: int


def partition_and_pool(x: np.ndarray, geom: BlockGeometry) -> PooledBlocks:
    h, n, c = x.shape
    n_blk = geom.n_blocks(n)
    padded = np.zeros((h, n_blk * geom.b, c), dtype=x.dtype)
    padded[:, :n] = x
    data = padded.reshape(h, n_blk, geom.groups, geom.g * c)
    starts = np.arange(n_blk)[:, None] * geom.b + np.arange(geom.groups)[None, :] * geom.g
    valid = (starts < n).sum(axis=1)
    return PooledBlocks(data, valid, n)


def unpool(pooled: PooledBlocks, geom: BlockGeometry) -> np.ndarray:
    """Inverse of :func:`partition_and_pool` with the padding stripped."""
    h, n_blk, _, gc = pooled.data.shape
    dim = gc // geom.g
    return pooled.data.reshape(h, n_blk * geom.b, dim)[:, : pooled.n_tokens]
