"""Target sketches: per-direction quantile tables of the projected dataset.

The flow never touches the data itself, only these tables, so a sketch can
be built once (optionally in shards on separate machines, see
:func:`shard_projections` and :func:`merge_shard_sketches`) and reused.

File layout (``.swsk``, little-endian)::

    "SWSK" u32 version=1 u32 d u32 n_theta u32 q u64 seed u64 fingerprint
    n_theta x d f64 directions
    n_theta x q f64 table values
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._binio import Reader, f64_bytes
from .geometry import DirectionSet, project
from .ot1d import QuantileTable, quantile_matrix
from .rng import mix64, stream

MAGIC = b"SWSK"
VERSION = 1
_CHUNK = 64


@dataclass(frozen=True, eq=False)
class TargetSketch:
    directions: DirectionSet
    values: np.ndarray  # (n_theta, q)
    fingerprint: int = 0

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != self.directions.n_theta:
            raise ValueError(f"sketch needs one table per direction: {v.shape} vs {self.directions.n_theta} directions")
        if v.shape[1] < 2:
            raise ValueError("sketch tables need q >= 2")
        if np.any(np.diff(v, axis=1) < 0) or not np.all(np.isfinite(v)):
            raise ValueError("sketch tables must be finite and non-decreasing")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "fingerprint", int(self.fingerprint) & 0xFFFFFFFFFFFFFFFF)

    @property
    def q(self) -> int:
        return self.values.shape[1]

    @property
    def n_theta(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.directions.dim

    @property
    def tables(self) -> list:
        return [QuantileTable(row) for row in self.values]

    def subset(self, idx) -> "TargetSketch":
        idx = np.asarray(idx)
        return TargetSketch(self.directions.subset(idx), self.values[idx], self.fingerprint)

    def __eq__(self, other):
        if not isinstance(other, TargetSketch):
            return NotImplemented
        return (self.fingerprint == other.fingerprint and self.directions == other.directions
                and np.array_equal(self.values, other.values))


# ----------------------------------------------------------------------------
# fingerprints

def _row_hash_sum(data: np.ndarray) -> int:
    bits = np.ascontiguousarray(data, dtype="<f8").view(np.uint64)
    h = np.zeros(bits.shape[0], dtype=np.uint64)
    for j in range(bits.shape[1]):
        h = mix64(h ^ bits[:, j])
    # summing makes the hash independent of row order and additive over shards
    with np.errstate(over="ignore"):
        return int(np.sum(h, dtype=np.uint64))


def _finalize(row_sum: int, count: int, dim: int, batch=None, seed: int = 0) -> int:
    spec = 0 if batch is None else int(mix64(np.array([batch], dtype=np.uint64))[0]) ^ int(seed)
    words = np.array([row_sum, count, dim, spec], dtype=np.uint64)
    h = np.zeros(1, dtype=np.uint64)
    for w in words:
        h = mix64(h ^ w)
    return int(h[0])


def data_fingerprint(data, batch=None, seed: int = 0) -> int:
    """64-bit, row-order-independent hash of a dataset plus its mini-batch spec."""
    x = np.asarray(data, dtype=np.float64)
    if batch is not None and batch == x.shape[0]:
        batch = None
    return _finalize(_row_hash_sum(x), x.shape[0], x.shape[1], batch, seed)


# ----------------------------------------------------------------------------

def _check_data(data) -> np.ndarray:
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError(f"data must be a non-empty (P, d) matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("data contains non-finite values")
    return x


def build_sketch(data, dirs: DirectionSet, q: int, batch: int | None = None, seed: int = 0,
                 workers: int = 1) -> TargetSketch:
    """Quantile tables of ``data`` projected on every direction of ``dirs``.

    With ``batch`` set, each direction is sketched from its own subset of
    ``batch`` distinct rows, drawn from substream ``("batch", n)`` of
    ``seed``. Directions are processed in chunks; ``workers > 1`` spreads
    the chunks over a thread pool (results do not depend on it).
    """
    x = _check_data(data)
    p, d = x.shape
    if p < 2:
        raise ValueError("need at least 2 data points to sketch")
    if q < 2:
        raise ValueError(f"need q >= 2, got {q}")
    if d != dirs.dim:
        raise ValueError(f"dimension mismatch: data d={d}, directions d={dirs.dim}")
    if batch is not None:
        if batch < 1 or batch > p:
            raise ValueError(f"batch must be in [1, {p}], got {batch}")
        if batch == p:
            batch = None

    theta = dirs.directions
    out = np.empty((dirs.n_theta, q))

    def work(lo):
        hi = min(lo + _CHUNK, dirs.n_theta)
        if batch is None:
            proj = project(x, theta[lo:hi]).T
        else:
            proj = np.empty((hi - lo, batch))
            for n in range(lo, hi):
                idx = stream(seed, "batch", n).choice(p, size=batch, replace=False)
                proj[n - lo] = project(x[idx], theta[n])
        out[lo:hi] = quantile_matrix(proj, q)

    starts = range(0, dirs.n_theta, _CHUNK)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, starts))
    else:
        for lo in starts:
            work(lo)
    return TargetSketch(dirs, out, data_fingerprint(x, batch, seed))


@dataclass(frozen=True, eq=False)
class ShardProjections:
    """Sorted projections of one data shard, ready to be merged."""

    directions: DirectionSet
    projections: np.ndarray  # (n_theta, n_rows), each row sorted
    row_hash_sum: int
    count: int


def shard_projections(data, dirs: DirectionSet) -> ShardProjections:
    x = _check_data(data)
    if x.shape[1] != dirs.dim:
        raise ValueError(f"dimension mismatch: data d={x.shape[1]}, directions d={dirs.dim}")
    proj = np.sort(project(x, dirs).T, axis=1)
    return ShardProjections(dirs, proj, _row_hash_sum(x), x.shape[0])


def merge_shard_sketches(shards, q: int) -> TargetSketch:
    """Combine shard projections into the sketch of their union.

    The merged order statistics are those of the concatenated data, so the
    result equals :func:`build_sketch` on the full dataset bit-for-bit.
    """
    shards = list(shards)
    if not shards:
        raise ValueError("no shards to merge")
    dirs = shards[0].directions
    for i, s in enumerate(shards[1:], start=1):
        if s.directions != dirs:
            raise ValueError(f"shard {i} was projected on a different direction set")
    if sum(s.count for s in shards) < 2:
        raise ValueError("need at least 2 data points to sketch")
    merged = np.sort(np.concatenate([s.projections for s in shards], axis=1), axis=1, kind="stable")
    with np.errstate(over="ignore"):
        row_sum = int(np.sum(np.array([s.row_hash_sum for s in shards], dtype=np.uint64), dtype=np.uint64))
    count = sum(s.count for s in shards)
    fp = _finalize(row_sum, count, dirs.dim)
    return TargetSketch(dirs, quantile_matrix(merged, q, presorted=True), fp)


# ----------------------------------------------------------------------------
# persistence

def save_sketch(sketch: TargetSketch, path) -> None:
    dirs = sketch.directions
    header = MAGIC + struct.pack("<IIIIQQ", VERSION, dirs.dim, sketch.n_theta, sketch.q,
                                 dirs.seed & 0xFFFFFFFFFFFFFFFF, sketch.fingerprint)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(f64_bytes(dirs.directions))
        fh.write(f64_bytes(sketch.values))


def load_sketch(path) -> TargetSketch:
    r = Reader(Path(path).read_bytes(), path)
    r.magic(MAGIC)
    r.version(VERSION)
    d, n_theta, q, seed, fp = r.unpack("IIIQQ")
    if d < 1 or n_theta < 1 or q < 2:
        r.fail(f"invalid header (d={d}, n_theta={n_theta}, q={q})", offset=8)
    dirs = r.f64(n_theta * d).reshape(n_theta, d)
    values = r.f64(n_theta * q).reshape(n_theta, q)
    r.done()
    try:
        return TargetSketch(DirectionSet(dirs, seed), values, fp)
    except ValueError as exc:
        r.fail(f"invalid sketch contents ({exc})", offset=36)
