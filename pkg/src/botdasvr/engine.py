"""Batched SVR inference kernels.

Three schedules of the same decision function ``sum_i beta_i <SV_i, x> + b``:

* :func:`decide_naive` - support-vector-major, feature-inner loops with one
  running final sum (the golden reference).
* :func:`decide_distributed` - final-sum loop split off and the partial-sum
  nest interchanged to feature-major over the transposed SV matrix.
* :func:`decide_batched` - the interchanged nest run over a batch of inputs
  with the SV axis cut into ``f``-wide tiles: ``PS = X @ SV^T`` followed by
  ``PS @ beta + b``.

Arithmetic is single precision by default to match the accelerator; pass
``dtype=np.float64`` for an oracle-grade run.  In every schedule each
partial sum ``<SV_i, x>`` is accumulated feature by feature in index
order, so partial sums are bit-identical across schedules and only the
final reduction order differs.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .svr import DimensionError, SvrModel

SEQUENTIAL = "sequential"
PAIRWISE = "pairwise-tree"
REDUCTIONS = (SEQUENTIAL, PAIRWISE)

DEFAULT_MAX_BYTES = 1 << 30


class TileError(ValueError):
    pass


class CapacityError(MemoryError):
    pass


@dataclass(frozen=True)
class TileSpec:
    unroll: int = 1
    reduction: str = PAIRWISE

    def __post_init__(self):
        if int(self.unroll) != self.unroll or self.unroll < 1:
            raise TileError(f"unroll factor must be a positive integer, got {self.unroll}")
        if self.reduction not in REDUCTIONS:
            raise TileError(f"unknown reduction {self.reduction!r}; expected one of {REDUCTIONS}")

    def check(self, n_sv: int):
        if self.unroll > max(n_sv, 1):
            raise TileError(f"unroll factor {self.unroll} exceeds the number of support vectors {n_sv}")

    def n_tiles(self, n_sv: int) -> int:
        return max(1, -(-n_sv // self.unroll))


@dataclass
class BatchRequest:
    inputs: np.ndarray
    model: SvrModel

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs))
        if self.inputs.shape[1] != self.model.n_feat:
            raise DimensionError(
                f"inputs have {self.inputs.shape[1]} features, model expects {self.model.n_feat}"
            )

    @property
    def batch(self) -> int:
        return self.inputs.shape[0]


@dataclass
class PartialSumMatrix:
    """``values[k, i] = <x_k, SV_i>``; ``counts`` is the debug shadow of MAC visits."""

    values: np.ndarray
    counts: Optional[np.ndarray] = None


def mac_count(n_sv: int, n_feat: int, n_bgs: int) -> tuple[int, int]:
    """(multiplications, additions) for ``n_bgs`` decisions."""
    if min(n_sv, n_feat, n_bgs) < 1:
        raise ValueError("mac_count arguments must be positive")
    n = (n_sv * n_feat + n_sv) * n_bgs
    return n, n


def pairwise_sum(a: np.ndarray, axis: int = -1) -> np.ndarray:
    """Deterministic balanced-tree sum: adjacent pairs, odd tail carried up."""
    a = np.moveaxis(np.asarray(a), axis, -1)
    while a.shape[-1] > 1:
        n = a.shape[-1]
        head = a[..., 0 : n - (n & 1) : 2] + a[..., 1 : n - (n & 1) : 2]
        a = np.concatenate([head, a[..., n - 1 :]], axis=-1) if n & 1 else head
    return a[..., 0]


def sequential_sum(a: np.ndarray, axis: int = -1, start=None) -> np.ndarray:
    """Left-to-right sum (one adder chain), optionally seeded with ``start``."""
    a = np.moveaxis(np.asarray(a), axis, -1)
    if start is not None:
        seed = np.broadcast_to(np.asarray(start, dtype=a.dtype), a.shape[:-1] + (1,))
        a = np.concatenate([seed, a], axis=-1)
    if a.shape[-1] == 0:
        return np.zeros(a.shape[:-1], dtype=a.dtype)
    return np.add.accumulate(a, axis=-1)[..., -1]


def _as2d(x, n_feat, dtype):
    a = np.asarray(x, dtype=dtype)
    single = a.ndim == 1
    a = np.atleast_2d(a)
    if a.shape[1] != n_feat:
        raise DimensionError(f"expected {n_feat} features, got {a.shape[1]}")
    return a, single


def decide_naive(m: SvrModel, x, dtype=np.float32):
    """Support-vector-major evaluation with a single running final sum.

    For each SV the inner product is accumulated over features, then
    ``f_sum += beta_i * p_sum_i`` starting from the bias.  Accepts one
    feature vector or a stack of rows (evaluated independently).
    """
    X, single = _as2d(x, m.n_feat, dtype)
    sv = m.support_vectors.astype(dtype)
    beta = m.betas.astype(dtype)
    psum = np.zeros((X.shape[0], m.n_sv), dtype=dtype)
    for j in range(m.n_feat):
        psum += sv[:, j] * X[:, j : j + 1]
    out = sequential_sum(psum * beta, start=dtype(m.bias))
    return float(out[0]) if single else out.astype(float)


def decide_distributed(m: SvrModel, x, dtype=np.float32):
    """Distributed + interchanged schedule on one input: feature-major
    partial sums over the transposed SV matrix, then a separate final-sum loop."""
    X, single = _as2d(x, m.n_feat, dtype)
    svt = np.ascontiguousarray(m.support_vectors.T, dtype=dtype)
    beta = m.betas.astype(dtype)
    psum = np.zeros((X.shape[0], m.n_sv), dtype=dtype)
    for i in range(m.n_feat):
        psum += X[:, i : i + 1] * svt[i]
    out = sequential_sum(psum * beta, start=dtype(m.bias))
    return float(out[0]) if single else out.astype(float)


def _padded_operands(m: SvrModel, tile: TileSpec, dtype):
    nt = tile.n_tiles(m.n_sv)
    width = nt * tile.unroll
    svt = np.zeros((m.n_feat, width), dtype=dtype)
    svt[:, : m.n_sv] = m.support_vectors.T
    beta = np.zeros(width, dtype=dtype)
    beta[: m.n_sv] = m.betas
    return svt, beta, nt


def _partial_sums_chunk(X, svt, unroll, shadow):
    B = X.shape[0]
    width = svt.shape[1]
    ps = np.zeros((B, width), dtype=svt.dtype)
    counts = np.zeros((B, width), dtype=np.int64) if shadow else None
    for i in range(X.shape[1]):
        xi = X[:, i : i + 1]
        if shadow:
            for lo in range(0, width, unroll):
                sl = slice(lo, lo + unroll)
                ps[:, sl] += xi * svt[i, sl]
                counts[:, sl] += 1
        else:
            ps += xi * svt[i]
    return ps, counts


def _final_sums(ps, beta, bias, unroll, reduction):
    B, width = ps.shape
    prod = (ps * beta).reshape(B, width // unroll, unroll)
    if reduction == SEQUENTIAL:
        aux = sequential_sum(prod)
        return sequential_sum(aux, start=bias)
    aux = pairwise_sum(prod)
    return pairwise_sum(aux) + bias


def _row_chunks(B, workers):
    workers = max(1, min(workers, B))
    edges = np.linspace(0, B, workers + 1).astype(int)
    return [(lo, hi) for lo, hi in zip(edges[:-1], edges[1:]) if hi > lo]


def partial_sums(
    req: BatchRequest,
    tile: TileSpec,
    dtype=np.float32,
    workers: int = 1,
    shadow: bool = False,
    max_bytes: int = DEFAULT_MAX_BYTES,
) -> PartialSumMatrix:
    """``X @ SV^T`` by ``f``-wide tiles; padding columns are dropped from the result."""
    m = req.model
    tile.check(m.n_sv)
    svt, _, nt = _padded_operands(m, tile, dtype)
    _check_capacity(req.batch, nt * tile.unroll, dtype, max_bytes)
    X = req.inputs.astype(dtype)
    parts = _run_chunks(X, lambda Xc: _partial_sums_chunk(Xc, svt, tile.unroll, shadow), workers)
    ps = np.concatenate([p for p, _ in parts])[:, : m.n_sv]
    counts = np.concatenate([c for _, c in parts])[:, : m.n_sv] if shadow else None
    return PartialSumMatrix(ps, counts)


def _check_capacity(B, width, dtype, max_bytes):
    need = B * width * np.dtype(dtype).itemsize
    if need > max_bytes:
        raise CapacityError(
            f"partial-sum matrix needs {need} bytes for batch {B} x {width} columns; budget is {max_bytes}"
        )


def _run_chunks(X, fn, workers):
    chunks = _row_chunks(X.shape[0], workers)
    if len(chunks) == 1:
        return [fn(X)]
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        return list(pool.map(lambda c: fn(X[c[0] : c[1]]), chunks))


def decide_batched(
    req: BatchRequest,
    tile: TileSpec = TileSpec(),
    dtype=np.float32,
    workers: int = 1,
    max_bytes: int = DEFAULT_MAX_BYTES,
) -> np.ndarray:
    """Tiled batch evaluation; returns one temperature per input row.

    Rows are independent, so splitting the batch (across calls or across
    ``workers`` threads) never changes a result.  A ragged last tile is
    zero-padded in both SV and beta.
    """
    m = req.model
    tile.check(m.n_sv)
    svt, beta, nt = _padded_operands(m, tile, dtype)
    _check_capacity(req.batch, nt * tile.unroll, dtype, max_bytes)
    X = req.inputs.astype(dtype)
    bias = dtype(m.bias)

    def run(Xc):
        ps, _ = _partial_sums_chunk(Xc, svt, tile.unroll, False)
        return _final_sums(ps, beta, bias, tile.unroll, tile.reduction)

    out = np.concatenate(_run_chunks(X, run, workers))
    return out.astype(float)


def decide_stream(
    m: SvrModel,
    X,
    tile: TileSpec = TileSpec(),
    batch: int = 40,
    dtype=np.float32,
    workers: int = 1,
) -> np.ndarray:
    """Feed an arbitrarily long stack of spectra through :func:`decide_batched`
    ``batch`` rows at a time."""
    X = np.atleast_2d(np.asarray(X))
    if batch < 1:
        raise ValueError(f"batch size must be >= 1, got {batch}")
    out = np.empty(X.shape[0])
    for lo in range(0, X.shape[0], batch):
        hi = min(lo + batch, X.shape[0])
        out[lo:hi] = decide_batched(BatchRequest(X[lo:hi], m), tile, dtype=dtype, workers=workers)
    return out


def flops_per_decision(n_sv: int, n_feat: int) -> int:
    return 2 * n_sv * (n_feat + 1)


def tile_count(n_sv: int, unroll: int) -> int:
    return math.ceil(n_sv / unroll)
