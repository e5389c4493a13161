"""Exact maximum-inner-product top-k over precomputed embedding vectors.

Vector file layout (little-endian)::

    magic    8 bytes  b"CMVECF32"
    version  u32      (1)
    count    u64
    dim      u32
    then ``count`` records:
        id_len  u32
        id      UTF-8 bytes
        dim     u32       must equal the header dim
        vector  f32[dim]

Question-vector files use the same layout; their ids are the 0-based line
numbers (as decimal strings) of the questions file they were encoded from.

Scores are float32 and accumulated over dimensions in ascending order
(``s = 0; s += x[0]*q[0]; s += x[1]*q[1]; ...``), independent of how rows are
partitioned, so every partitioning returns bit-identical scores.
"""

from __future__ import annotations

import heapq
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

MAGIC = b"CMVECF32"
FORMAT_VERSION = 1

RankedList = list[tuple[str, float]]


class VectorFileError(Exception):
    pass


class DimensionMismatch(ValueError):
    pass


@dataclass(eq=False)
class VectorStore:
    ids: list[str]
    vectors: np.ndarray  # float32[count, dim]

    def __post_init__(self) -> None:
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2:
            raise ValueError("vectors must be a 2-d matrix")
        if len(self.ids) != self.vectors.shape[0]:
            raise ValueError(f"{len(self.ids)} ids for {self.vectors.shape[0]} rows")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("duplicate ids in vector store")
        # Column-major copy: one contiguous row per dimension for the scan.
        self.columns = np.ascontiguousarray(self.vectors.T)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]


def save_vectors(store: VectorStore, path: str | Path) -> None:
    dim_bytes = struct.pack("<I", store.dim)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQI", FORMAT_VERSION, len(store), store.dim))
        for pid, row in zip(store.ids, store.vectors):
            b = pid.encode("utf-8")
            f.write(struct.pack("<I", len(b)))
            f.write(b)
            f.write(dim_bytes)
            f.write(row.astype("<f4").tobytes())


def load_vectors(path: str | Path) -> VectorStore:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise VectorFileError(f"{path}: bad magic header")
    if len(data) < 24:
        raise VectorFileError(f"{path}: truncated header")
    version, count, dim = struct.unpack_from("<IQI", data, 8)
    if version != FORMAT_VERSION:
        raise VectorFileError(f"{path}: unsupported version {version}")
    pos = 24
    ids: list[str] = []
    seen: set[str] = set()
    vectors = np.empty((count, dim), dtype=np.float32)
    row_bytes = 4 * dim
    for i in range(count):
        if pos + 4 > len(data):
            raise VectorFileError(f"{path}: truncated at record {i}")
        (id_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + id_len + 4 > len(data):
            raise VectorFileError(f"{path}: truncated at record {i}")
        pid = data[pos : pos + id_len].decode("utf-8")
        pos += id_len
        (row_dim,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if row_dim != dim:
            raise VectorFileError(f"{path}: record {i} has dim {row_dim}, header says {dim}")
        if pos + row_bytes > len(data):
            raise VectorFileError(f"{path}: truncated row at record {i}")
        if pid in seen:
            raise VectorFileError(f"{path}: duplicate id {pid!r}")
        seen.add(pid)
        ids.append(pid)
        vectors[i] = np.frombuffer(data, dtype="<f4", count=dim, offset=pos)
        pos += row_bytes
    if pos != len(data):
        raise VectorFileError(f"{path}: {len(data) - pos} trailing bytes after {count} records")
    return VectorStore(ids, vectors)


def inner_products(store: VectorStore, query: np.ndarray, lo: int = 0, hi: int | None = None) -> np.ndarray:
    """float32 scores of rows ``lo:hi`` in the fixed dimension-ascending order."""
    hi = len(store) if hi is None else hi
    cols = store.columns
    scores = np.zeros(hi - lo, dtype=np.float32)
    for j in range(store.dim):
        scores += cols[j, lo:hi] * query[j]
    return scores


def _partition_top(store: VectorStore, query: np.ndarray, lo: int, hi: int, k: int) -> list[tuple[float, str]]:
    scores = inner_products(store, query, lo, hi)
    if len(scores) > k:
        kth = len(scores) - k
        threshold = np.partition(scores, kth)[kth]
        keep = np.flatnonzero(scores >= threshold)
    else:
        keep = np.arange(len(scores))
    ids = store.ids
    return sorted((-float(scores[i]), ids[lo + i]) for i in keep)[:k]


def top_k_dense(
    query: Sequence[float] | np.ndarray, store: VectorStore, k: int,
    partitions: int = 1, threads: int = 1,
) -> RankedList:
    """Exact top-k rows by inner product, ties by ascending id.

    Rows are split into ``partitions`` contiguous ranges, each scanned
    independently; the per-partition lists are merged in partition order.
    """
    q = np.asarray(query, dtype=np.float32)
    if q.ndim != 1 or q.shape[0] != store.dim:
        raise DimensionMismatch(f"query dim {q.shape} does not match store dim {store.dim}")
    if k < 1:
        raise ValueError("k must be >= 1")
    n = len(store)
    if n == 0:
        return []
    partitions = max(1, min(partitions, n))
    bounds = [(i * n) // partitions for i in range(partitions + 1)]
    ranges = list(zip(bounds[:-1], bounds[1:]))
    if threads > 1 and partitions > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda r: _partition_top(store, q, r[0], r[1], k), ranges))
    else:
        parts = [_partition_top(store, q, lo, hi, k) for lo, hi in ranges]
    merged = heapq.merge(*parts)
    out = []
    for neg, pid in merged:
        out.append((pid, -neg))
        if len(out) == k:
            break
    return out
