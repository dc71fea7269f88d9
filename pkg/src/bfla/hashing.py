"""Deterministic 64-bit mixing.

Everything random in this package (workload generation, stride rescue,
random rescue) is derived from the SplitMix64 finalizer applied to packed
integer counters, so results are identical on every platform.

Pinned constants::

    GOLDEN = 0x9E3779B97F4A7C15
    fmix(z):
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
        z = (z ^ (z >> 27)) * 0x94D049BB133111EB
        return z ^ (z >> 31)                      (all mod 2**64)

    chi(i, j, s)    = fmix(((i << 32 | j) ^ s) + GOLDEN)
    psi_int(h,i,j,s) = fmix((chi(i, j, s) ^ (h * HEAD_MULT)) + GOLDEN)
    psi(h, i, j, s) = (psi_int >> 11) * 2**-53          in [0, 1)

with ``HEAD_MULT = 0xD1B54A32D192ED03``; ``i``, ``j`` are reduced to 32 bits.
"""

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
MASK32 = 0xFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
MULT1 = 0xBF58476D1CE4E5B9
MULT2 = 0x94D049BB133111EB
HEAD_MULT = 0xD1B54A32D192ED03

_U53 = 2.0 ** -53


def u64(x: int) -> int:
    return x & MASK64


def fmix64(z: int) -> int:
    """SplitMix64 finalizer on a Python int."""
    z = u64(z)
    z = u64((z ^ (z >> 30)) * MULT1)
    z = u64((z ^ (z >> 27)) * MULT2)
    return z ^ (z >> 31)


def fmix64_array(z: np.ndarray) -> np.ndarray:
    """Vectorized :func:`fmix64`; wraps modulo 2**64 like the scalar path."""
    z = np.asarray(z, dtype=np.uint64).copy()
    z ^= z >> np.uint64(30)
    z *= np.uint64(MULT1)
    z ^= z >> np.uint64(27)
    z *= np.uint64(MULT2)
    z ^= z >> np.uint64(31)
    return z


def mix_chi(i: int, j: int, s: int) -> int:
    """Stride-rescue hash of tile ``(i, j)`` under seed ``s``."""
    word = ((i & MASK32) << 32) | (j & MASK32)
    return fmix64(u64(word ^ u64(s)) + GOLDEN)


def mix_psi_int(h: int, i: int, j: int, s: int) -> int:
    return fmix64(u64(mix_chi(i, j, s) ^ u64(h * HEAD_MULT)) + GOLDEN)


def mix_psi(h: int, i: int, j: int, s: int) -> float:
    """Random-rescue draw for tile ``(h, i, j)``, uniform on ``[0, 1)``."""
    return (mix_psi_int(h, i, j, s) >> 11) * _U53


def mix_chi_grid(rows: np.ndarray, cols: np.ndarray, s: int) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.uint64) & np.uint64(MASK32)
    cols = np.asarray(cols, dtype=np.uint64) & np.uint64(MASK32)
    word = (rows << np.uint64(32)) | cols
    with np.errstate(over="ignore"):
        return fmix64_array((word ^ np.uint64(u64(s))) + np.uint64(GOLDEN))


def mix_psi_grid(h: int, rows: np.ndarray, cols: np.ndarray, s: int) -> np.ndarray:
    chi = mix_chi_grid(rows, cols, s)
    with np.errstate(over="ignore"):
        z = fmix64_array((chi ^ np.uint64(u64(h * HEAD_MULT))) + np.uint64(GOLDEN))
    return (z >> np.uint64(11)).astype(np.float64) * _U53


def counter_uniforms(seed: int, stream: int, n: int) -> np.ndarray:
    """``n`` doubles in ``[0, 1)`` from counters ``0..n-1`` of one stream.

    Each value uses 53 bits of a mixed counter, so the conversion is exact
    and independent of the platform's libm.
    """
    key = fmix64(u64(seed) ^ fmix64(u64(stream) + GOLDEN))
    ctr = np.arange(n, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = fmix64_array(ctr * np.uint64(GOLDEN) + np.uint64(key))
    return (z >> np.uint64(11)).astype(np.float64) * _U53
