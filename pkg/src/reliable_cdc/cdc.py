"""Real-valued (N, K) MDS-coded matrix-vector multiplication.

The task matrix is cut into K row blocks, which are combined into N coded
shards through an N x K generator whose every K x K minor is invertible. Any K
returned partial products determine ``A @ x``. Worker completion times follow a
shifted exponential computation model plus a geometric number of uplink
transmissions.
"""

from __future__ import annotations

import csv
import itertools
import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EncodingFailed,
    IndexDuplicate,
    InvalidOrder,
    SingularSubset,
)
from .stackelberg import CommModel, CompModel

MATRIX_MAGIC = b"CDCMAT01"
_HEADER = struct.Struct("<8sII")

# Above this many K x K minors the guard samples minors instead of enumerating.
MAX_EXHAUSTIVE_MINORS = 5000


@dataclass(frozen=True)
class CdcTask:
    matrix: np.ndarray
    vector: np.ndarray
    k: int
    n: int

    def __post_init__(self) -> None:
        a = np.asarray(self.matrix, dtype=float)
        x = np.asarray(self.vector, dtype=float).reshape(-1)
        if a.ndim != 2:
            raise DimensionMismatch("matrix must be two-dimensional")
        if a.shape[1] != x.shape[0]:
            raise DimensionMismatch(f"matrix has {a.shape[1]} columns, vector has {x.shape[0]}")
        if not 1 <= self.k < self.n:
            raise ValueError(f"need 1 <= k < n, got k={self.k}, n={self.n}")
        object.__setattr__(self, "matrix", a)
        object.__setattr__(self, "vector", x)

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def block_rows(self) -> int:
        return -(-self.n_rows // self.k)

    def direct(self) -> np.ndarray:
        return self.matrix @ self.vector


@dataclass(frozen=True)
class EncodedShard:
    shard_index: int  # 1-based
    coded_submatrix: np.ndarray
    coding_row: np.ndarray


@dataclass(frozen=True)
class CompletionSample:
    worker_id: int
    comp_time: float
    uplink_time: float
    transmissions: int

    @property
    def total(self) -> float:
        return self.comp_time + self.uplink_time


def row_blocks(matrix: np.ndarray, k: int) -> list[np.ndarray]:
    """Zero-pad to a multiple of ``k`` rows and cut into ``k`` equal blocks."""
    n_r = matrix.shape[0]
    pad = (-n_r) % k
    if pad:
        matrix = np.vstack([matrix, np.zeros((pad, matrix.shape[1]))])
    return np.split(matrix, k, axis=0)


def _minor_subsets(n: int, k: int, rng: np.random.Generator):
    if math.comb(n, k) <= MAX_EXHAUSTIVE_MINORS:
        return itertools.combinations(range(n), k)
    return (tuple(sorted(rng.choice(n, size=k, replace=False))) for _ in range(MAX_EXHAUSTIVE_MINORS))


def generator_is_well_conditioned(g: np.ndarray, cond_bound: float = 1e8, seed=0) -> bool:
    n, k = g.shape
    rng = np.random.default_rng(seed)
    for rows in _minor_subsets(n, k, rng):
        if not np.linalg.cond(g[list(rows)]) < cond_bound:
            return False
    return True


def make_generator(
    n: int,
    k: int,
    seed=None,
    systematic: bool = False,
    cond_bound: float = 1e8,
    max_tries: int = 100,
) -> np.ndarray:
    """Sample an N x K Gaussian generator whose K x K minors are well conditioned.

    With ``systematic`` the first K rows are the identity.
    """
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        g = rng.standard_normal((n, k))
        if systematic:
            g[:k] = np.eye(k)
        if generator_is_well_conditioned(g, cond_bound, seed=rng.integers(2**32)):
            return g
    raise EncodingFailed(f"no generator with all minors below condition {cond_bound:g} in {max_tries} draws")


def split_encode(
    task: CdcTask,
    seed=None,
    systematic: bool = False,
    generator: np.ndarray | None = None,
    cond_bound: float = 1e8,
) -> list[EncodedShard]:
    """Encode the task into N shards; shard i is ``sum_j G[i, j] A_j``."""
    if generator is None:
        generator = make_generator(task.n, task.k, seed, systematic, cond_bound)
    g = np.asarray(generator, dtype=float)
    if g.shape != (task.n, task.k):
        raise DimensionMismatch(f"generator shape {g.shape} != ({task.n}, {task.k})")
    blocks = np.stack(row_blocks(task.matrix, task.k))  # (k, rows, cols)
    coded = np.tensordot(g, blocks, axes=1)
    return [EncodedShard(i + 1, coded[i], g[i].copy()) for i in range(task.n)]


def shard_compute(shard: EncodedShard, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if shard.coded_submatrix.shape[1] != x.shape[0]:
        raise DimensionMismatch(
            f"shard has {shard.coded_submatrix.shape[1]} columns, vector has {x.shape[0]}"
        )
    return shard.coded_submatrix @ x


def _check_indices(indices: Sequence[int], n: int, k: int) -> None:
    if len(indices) != k:
        raise ValueError(f"need exactly {k} results, got {len(indices)}")
    if len(set(indices)) != len(indices):
        raise IndexDuplicate(f"duplicate shard indices in {list(indices)}")
    for i in indices:
        if not 1 <= i <= n:
            raise ValueError(f"shard index {i} outside 1..{n}")


def decode_from_k(results, generator, n_rows: int | None = None) -> np.ndarray:
    """Recover ``A @ x`` from K ``(shard_index, partial)`` pairs.

    ``n_rows`` truncates the zero padding added at encode time.
    """
    g = np.asarray(generator, dtype=float)
    n, k = g.shape
    results = list(results)
    idx = [int(i) for i, _ in results]
    _check_indices(idx, n, k)
    partials = np.stack([np.asarray(p, dtype=float).reshape(-1) for _, p in results])
    sub = g[[i - 1 for i in idx]]
    if np.array_equal(sub, np.eye(k)):
        blocks = partials
    else:
        try:
            blocks = np.linalg.solve(sub, partials)
        except np.linalg.LinAlgError as exc:
            raise SingularSubset(f"coding rows {idx} are singular") from exc
    y = blocks.reshape(-1)
    return y if n_rows is None else y[:n_rows]


def decode_exact(results, generator, n_rows: int | None = None) -> list[Fraction]:
    """Exact rational decode: Gauss-Jordan elimination on the float inputs taken as rationals."""
    g = np.asarray(generator, dtype=float)
    n, k = g.shape
    results = list(results)
    idx = [int(i) for i, _ in results]
    _check_indices(idx, n, k)
    width = len(np.asarray(results[0][1]).reshape(-1))
    rows = [
        [Fraction(float(v)) for v in g[i - 1]] + [Fraction(float(v)) for v in np.asarray(p).reshape(-1)]
        for i, (_, p) in zip(idx, results)
    ]
    for col in range(k):
        piv = next((r for r in range(col, k) if rows[r][col] != 0), None)
        if piv is None:
            raise SingularSubset(f"coding rows {idx} are singular")
        rows[col], rows[piv] = rows[piv], rows[col]
        inv = 1 / rows[col][col]
        rows[col] = [v * inv for v in rows[col]]
        for r in range(k):
            if r != col and rows[r][col] != 0:
                f = rows[r][col]
                rows[r] = [a - f * b for a, b in zip(rows[r], rows[col])]
    y = [v for r in range(k) for v in rows[r][k : k + width]]
    return y if n_rows is None else y[:n_rows]


def sample_completion_times(
    mus, comm: CommModel, comp: CompModel, seed=None
) -> list[CompletionSample]:
    """Draw one completion time per worker.

    Computation is ``a l`` plus an exponential with mean ``l / mu``; the uplink
    needs a geometric number of transmissions, each taking ``s N / (eta B)``.
    """
    mus = np.asarray(mus, dtype=float).reshape(-1)
    if np.any(mus <= 0):
        raise ValueError("all speeds must be positive")
    rng = np.random.default_rng(seed)
    n = mus.shape[0]
    l, a = comp.task_share, comp.startup
    comp_t = a * l + rng.exponential(l / mus)
    q = rng.geometric(1.0 - comm.erasure_prob, size=n)
    per_tx = comm.packet_size_bits * n / (comm.data_rate * comm.bandwidth)
    return [
        CompletionSample(i, float(comp_t[i]), float(q[i] * per_tx), int(q[i])) for i in range(n)
    ]


def task_latency(samples: Sequence[CompletionSample], k: int) -> float:
    """K-th smallest total completion time."""
    if not 1 <= k <= len(samples):
        raise InvalidOrder(f"need 1 <= k <= {len(samples)}, got {k}")
    return float(np.partition([s.total for s in samples], k - 1)[k - 1])


def fastest(samples: Sequence[CompletionSample], k: int) -> list[CompletionSample]:
    """The K earliest finishers, ties broken by worker id."""
    return sorted(samples, key=lambda s: (s.total, s.worker_id))[:k]


def execute(task: CdcTask, mus, comm: CommModel, comp: CompModel, seed=None):
    """Encode, compute every shard, sample latencies and decode from the fastest K.

    Returns ``(y, latency, samples, generator)``.
    """
    rng = np.random.default_rng(seed)
    g = make_generator(task.n, task.k, rng.integers(2**63))
    shards = split_encode(task, generator=g)
    samples = sample_completion_times(mus, comm, comp, rng.integers(2**63))
    first = fastest(samples, task.k)
    results = [(shards[s.worker_id].shard_index, shard_compute(shards[s.worker_id], task.vector)) for s in first]
    y = decode_from_k(results, g, task.n_rows)
    return y, task_latency(samples, task.k), samples, g


# -- matrix I/O ---------------------------------------------------------------


def save_matrix(path, matrix) -> None:
    """Binary: 16-byte header (magic, uint32 rows, uint32 cols, little endian) then float64 rows."""
    m = np.ascontiguousarray(matrix, dtype="<f8")
    if m.ndim != 2:
        raise DimensionMismatch("matrix must be two-dimensional")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MATRIX_MAGIC, m.shape[0], m.shape[1]))
        fh.write(m.tobytes(order="C"))


def load_matrix(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return load_matrix_csv(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, n_r, n_c = _HEADER.unpack_from(raw)
    if magic != MATRIX_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    body = raw[_HEADER.size :]
    if len(body) != 8 * n_r * n_c:
        raise ValueError(f"{path}: expected {n_r * n_c} values, found {len(body) // 8}")
    return np.frombuffer(body, dtype="<f8").reshape(n_r, n_c).astype(float)


def load_matrix_csv(path) -> np.ndarray:
    m = np.loadtxt(path, delimiter=",", ndmin=2)
    return m.astype(float)


def save_matrix_csv(path, matrix) -> None:
    m = np.atleast_2d(np.asarray(matrix, dtype=float))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        for row in m:
            w.writerow([repr(float(v)) for v in row])


def save_result_csv(path, y) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "value"])
        for i, v in enumerate(np.asarray(y, dtype=float).reshape(-1)):
            w.writerow([i, repr(float(v))])
