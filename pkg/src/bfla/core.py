"""Workload tensors, stable softmax and the dense causal attention oracle."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateRowError, SizeGuardError
from .hashing import counter_uniforms

DENSE_SIZE_GUARD = 4096

_DTYPES = {"f32": np.float32, "f64": np.float64}


def resolve_dtype(precision: str) -> type:
    try:
        return _DTYPES[precision]
    except KeyError:
        raise ConfigError(f"precision must be one of {sorted(_DTYPES)}, got {precision!r}")


@dataclass(frozen=True)
class WorkloadTensors:
    """Head-first Q/K/V for one prefill chunk.

    ``Q`` is ``(H_q, N_q, C)``, ``K`` and ``V`` are ``(H_kv, N_kv, C)``. The
    query chunk sits at the end of the KV sequence, so query token ``t`` has
    absolute position ``n_c + t``.
    """

    Q: np.ndarray
    K: np.ndarray
    V: np.ndarray
    planted: tuple[tuple[int, int], ...] = field(default=())

    def __post_init__(self):
        q, k, v = self.Q, self.K, self.V
        if q.ndim != 3 or k.ndim != 3 or v.ndim != 3:
            raise ConfigError("Q, K, V must be rank-3 (heads, tokens, dim)")
        if k.shape != v.shape:
            raise ConfigError(f"K shape {k.shape} != V shape {v.shape}")
        if q.shape[2] != k.shape[2]:
            raise ConfigError("Q and K disagree on head dimension")
        if q.shape[0] % k.shape[0] != 0:
            raise ConfigError(f"H_q={q.shape[0]} is not a multiple of H_kv={k.shape[0]}")
        if q.shape[1] > k.shape[1]:
            raise ConfigError(f"N_q={q.shape[1]} exceeds N_kv={k.shape[1]}")
        if min(q.shape) < 1 or min(k.shape) < 1:
            raise ConfigError("all tensor dimensions must be >= 1")
        if not (q.dtype == k.dtype == v.dtype) or q.dtype not in (np.float32, np.float64):
            raise ConfigError("Q, K, V must share a float32 or float64 dtype")
        for name, t in (("Q", q), ("K", k), ("V", v)):
            if not np.isfinite(t).all():
                raise ConfigError(f"{name} has non-finite entries")

    @property
    def h_q(self) -> int:
        return self.Q.shape[0]

    @property
    def h_kv(self) -> int:
        return self.K.shape[0]

    @property
    def m(self) -> int:
        return self.h_q // self.h_kv

    @property
    def n_q(self) -> int:
        return self.Q.shape[1]

    @property
    def n_kv(self) -> int:
        return self.K.shape[1]

    @property
    def n_c(self) -> int:
        return self.n_kv - self.n_q

    @property
    def dim(self) -> int:
        return self.Q.shape[2]

    @property
    def precision(self) -> str:
        return "f32" if self.Q.dtype == np.float32 else "f64"

    def replace(self, **kw) -> "WorkloadTensors":
        fields = dict(Q=self.Q, K=self.K, V=self.V, planted=self.planted)
        fields.update(kw)
        return WorkloadTensors(**fields)


@dataclass(frozen=True)
class DenseOutput:
    O: np.ndarray
    A: np.ndarray | None = None


def _normals(seed: int, stream: int, shape: tuple[int, ...]) -> np.ndarray:
    # Irwin-Hall(12) - 6: unit variance, only exactly-rounded adds, fixed order.
    n = int(np.prod(shape))
    u = counter_uniforms(seed, stream, 12 * n).reshape(n, 12)
    acc = u[:, 0].copy()
    for k in range(1, 12):
        acc += u[:, k]
    acc -= 6.0
    return acc.reshape(shape)


def gen_workload(
    seed: int,
    h_q: int,
    h_kv: int,
    n_q: int,
    n_kv: int,
    dim: int,
    distribution: str = "gaussian",
    precision: str = "f64",
) -> WorkloadTensors:
    """Deterministic synthetic Q/K/V.

    ``gaussian`` draws every entry i.i.d. (approximately) standard normal.
    ``clustered`` additionally plants three key spans aligned with a per-KV-head
    direction that all queries of the group share, one of them at position 0;
    the spans are recorded in ``WorkloadTensors.planted``.
    """
    if min(h_q, h_kv, n_q, n_kv, dim) < 1:
        raise ConfigError("all shape parameters must be >= 1")
    if h_q % h_kv:
        raise ConfigError(f"H_q={h_q} is not a multiple of H_kv={h_kv}")
    if n_q > n_kv:
        raise ConfigError(f"N_q={n_q} exceeds N_kv={n_kv}")
    dtype = resolve_dtype(precision)

    q = _normals(seed, 0, (h_q, n_q, dim))
    k = _normals(seed, 1, (h_kv, n_kv, dim))
    v = _normals(seed, 2, (h_kv, n_kv, dim))
    planted: tuple[tuple[int, int], ...] = ()

    if distribution == "clustered":
        m = h_q // h_kv
        direction = _normals(seed, 3, (h_kv, dim))
        span = max(1, n_kv // 16)
        starts = [0]
        for u in counter_uniforms(seed, 4, 2):
            starts.append(int(u * (n_kv - span + 1)))
        planted = tuple(sorted({(s, s + span) for s in starts}))
        k = 0.5 * k
        q = 0.5 * q + np.repeat(direction, m, axis=0)[:, None, :]
        for s, e in planted:
            k[:, s:e, :] += 2.0 * direction[:, None, :]
    elif distribution != "gaussian":
        raise ConfigError(f"unknown distribution {distribution!r}")

    return WorkloadTensors(q.astype(dtype), k.astype(dtype), v.astype(dtype), planted)


def causal_token_mask(n_q: int, n_kv: int) -> np.ndarray:
    """``allowed[t, j]`` is True iff KV position ``j <= n_c + t``."""
    n_c = n_kv - n_q
    return np.arange(n_kv)[None, :] <= (n_c + np.arange(n_q))[:, None]


def stable_softmax_row(scores) -> np.ndarray:
    x = np.asarray(scores, dtype=np.float64)
    finite = np.isfinite(x)
    if not finite.any():
        raise DegenerateRowError("softmax row has no finite entry")
    e = np.zeros_like(x)
    e[finite] = np.exp(x[finite] - x[finite].max())
    return e / e.sum()


def masked_softmax_rows(scores: np.ndarray, allowed: np.ndarray) -> np.ndarray:
    """Row softmax of ``scores`` restricted to ``allowed``; zero elsewhere."""
    if not allowed.any(axis=-1).all():
        raise DegenerateRowError("softmax row has no allowed entry")
    s = np.where(allowed, scores, -np.inf)
    s = s - s.max(axis=-1, keepdims=True)
    e = np.where(allowed, np.exp(s), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def dense_causal_attention(
    w: WorkloadTensors, materialize: bool = False, size_guard: int = DENSE_SIZE_GUARD
) -> DenseOutput:
    """Dense causal softmax attention, accumulated in float64.

    With ``materialize=True`` the full probability tensor ``A`` of shape
    ``(H_q, N_q, N_kv)`` is returned as well (subject to ``size_guard``).
    """
    if materialize and w.n_kv > size_guard:
        raise SizeGuardError(f"N_kv={w.n_kv} exceeds size guard {size_guard}")
    scale = 1.0 / np.sqrt(w.dim)
    allowed = causal_token_mask(w.n_q, w.n_kv)
    out = np.empty((w.h_q, w.n_q, w.dim), dtype=np.float64)
    probs = np.empty((w.h_q, w.n_q, w.n_kv)) if materialize else None
    for p in range(w.h_q):
        h = p // w.m
        q = w.Q[p].astype(np.float64)
        k = w.K[h].astype(np.float64)
        a = masked_softmax_rows((q @ k.T) * scale, allowed)
        out[p] = a @ w.V[h].astype(np.float64)
        if probs is not None:
            probs[p] = a
    return DenseOutput(out, probs)


def frobenius_norm(t) -> float:
    return float(np.sqrt(np.sum(np.square(np.asarray(t, dtype=np.float64)))))


def relative_frobenius(approx, exact) -> float:
    denom = frobenius_norm(exact)
    diff = frobenius_norm(np.asarray(approx, np.float64) - np.asarray(exact, np.float64))
    return diff / denom if denom > 0 else diff
