"""One-dimensional optimal transport on quantile tables.

A :class:`QuantileTable` stores ``Q`` empirical quantiles at the midpoint
levels ``(j + 0.5) / Q``. The quantile function is the piecewise-linear
interpolant of those knots (flat beyond the end knots), and the CDF is its
generalised inverse. With both in hand the 1D optimal map is
``T = F_target^{-1} o F_source`` and the Kantorovich potential derivative is
``psi'(z) = z - T(z)``.

The row-wise helpers (``*_rows``) work on stacks of tables of shape
``(M, Q)`` and are what the sketch, flow and metric code call. The scalar
API is a thin layer on top of them, so both give bit-identical numbers.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=64)
def _levels(q: int) -> np.ndarray:
    lv = (2.0 * np.arange(q) + 1.0) / (2.0 * q)
    lv.setflags(write=False)
    return lv


def levels(q: int) -> np.ndarray:
    """The level grid ``(j + 0.5) / q`` for ``j = 0..q-1``."""
    if q < 2:
        raise ValueError(f"need q >= 2, got {q}")
    return _levels(int(q))


@dataclass(frozen=True, eq=False)
class QuantileTable:
    """Non-decreasing quantile values on the midpoint level grid."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size < 2:
            raise ValueError(f"a quantile table needs a 1-D array of at least 2 values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("quantile table values must be finite")
        if np.any(np.diff(v) < 0):
            raise ValueError("quantile table values must be non-decreasing")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def q(self) -> int:
        return self.values.size

    @property
    def levels(self) -> np.ndarray:
        return levels(self.q)

    def __eq__(self, other):
        if not isinstance(other, QuantileTable):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    def __repr__(self):
        return f"QuantileTable(q={self.q}, min={self.values[0]:.6g}, max={self.values[-1]:.6g})"


# ----------------------------------------------------------------------------
# row-wise kernels

def quantile_matrix(samples, q: int, presorted: bool = False) -> np.ndarray:
    """Quantile values of each row of ``samples`` (shape ``(M, n)``) -> ``(M, q)``.

    The quantile at level ``tau`` interpolates linearly between order
    statistics at the continuous index ``tau * n - 0.5``, clamped to
    ``[0, n - 1]``. Index arithmetic is done in integers so that ``q == n``
    returns the sorted samples exactly.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    m, n = x.shape
    if n < 1:
        raise ValueError("cannot build a quantile table from an empty sample")
    if q < 2:
        raise ValueError(f"need q >= 2, got {q}")
    if np.isnan(x).any():
        raise ValueError("samples contain NaN")
    s = x if presorted else np.sort(x, axis=1)

    # index = ((2j + 1) n - q) / (2q)
    num = (2 * np.arange(q, dtype=np.int64) + 1) * n - q
    den = 2 * q
    lo = np.where(num < 0, 0, num // den)
    frac = np.where(num < 0, 0, num % den) / den
    top = lo >= n - 1
    lo = np.minimum(lo, n - 1)
    frac = np.where(top, 0.0, frac)
    hi = np.minimum(lo + 1, n - 1)

    a = s[:, lo]
    b = s[:, hi]
    out = a + frac * (b - a)
    return np.minimum(np.maximum(out, a), b)


def _as_rows(x, m: int) -> np.ndarray:
    # scalars and 1-D queries are shared by all m rows
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim < 2:
        arr = arr.reshape(1, -1)
    if arr.shape[0] == 1 and m != 1:
        arr = np.broadcast_to(arr, (m, arr.shape[1]))
    elif arr.shape[0] != m:
        raise ValueError(f"query has {arr.shape[0]} rows for {m} tables")
    return arr


def quantile_rows(values, tau) -> np.ndarray:
    """Evaluate the quantile functions row-wise.

    ``values`` is ``(M, Q)``; ``tau`` is ``(M, K)`` (or broadcastable to it).
    Levels below the first knot or above the last clamp to the end values.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim == 1:
        v = v[None, :]
    m, q = v.shape
    lv = levels(q)
    t = _as_rows(tau, m)
    lo = np.clip(np.searchsorted(lv, t, side="right") - 1, 0, q - 2)
    frac = np.clip((t - lv[lo]) / (lv[lo + 1] - lv[lo]), 0.0, 1.0)
    a = np.take_along_axis(v, lo, axis=1)
    b = np.take_along_axis(v, lo + 1, axis=1)
    out = a + frac * (b - a)
    out = np.where(frac >= 1.0, b, out)
    return np.minimum(np.maximum(out, a), b)


def _bracket_rows(v: np.ndarray, z: np.ndarray):
    m, k = z.shape
    if k == 1:
        lo = np.sum(v < z, axis=1, keepdims=True)
        hi = np.sum(v <= z, axis=1, keepdims=True)
        return lo, hi
    lo = np.empty(z.shape, dtype=np.intp)
    hi = np.empty(z.shape, dtype=np.intp)
    for r in range(m):
        lo[r] = np.searchsorted(v[r], z[r], side="left")
        hi[r] = np.searchsorted(v[r], z[r], side="right")
    return lo, hi


def cdf_rows(values, z) -> np.ndarray:
    """Evaluate the CDFs (generalised inverses of :func:`quantile_rows`) row-wise.

    ``values`` is ``(M, Q)``, ``z`` is ``(M, K)``. Values strictly below the
    table map to the first level, strictly above to the last. A value that
    hits a run of equal knots maps to the midpoint of that run's levels.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim == 1:
        v = v[None, :]
    m, q = v.shape
    zz = _as_rows(z, m)
    if np.isnan(zz).any():
        raise ValueError("cannot evaluate a CDF at NaN")
    lv = levels(q)
    lo, hi = _bracket_rows(v, zz)

    tied = hi > lo
    hit = 0.5 * (lv[np.minimum(lo, q - 1)] + lv[np.clip(hi - 1, 0, q - 1)])

    inner = np.clip(lo, 1, q - 1)
    a = np.take_along_axis(v, inner - 1, axis=1)
    b = np.take_along_axis(v, inner, axis=1)
    la = lv[inner - 1]
    lb = lv[inner]
    with np.errstate(invalid="ignore", divide="ignore"):
        between = la + (zz - a) / (b - a) * (lb - la)
    between = np.clip(between, la, lb)

    out = np.where(lo == 0, lv[0], np.where(lo == q, lv[q - 1], between))
    return np.where(tied, hit, out)


def potential_derivative_rows(z, particle_values, target_values) -> np.ndarray:
    """``z - F_target^{-1}(F_particles(z))`` row-wise; all arguments ``(M, .)``."""
    zz = np.asarray(z, dtype=np.float64)
    tau = cdf_rows(particle_values, zz)
    return zz - quantile_rows(target_values, tau)


def resample_rows(values, q: int) -> np.ndarray:
    """Re-tabulate tables onto the level grid of size ``q``."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim == 1:
        v = v[None, :]
    if v.shape[1] == q:
        return v
    return quantile_rows(v, np.broadcast_to(levels(q), (v.shape[0], q)))


def w2_rows(values_a, values_b) -> np.ndarray:
    """Row-wise 1D Wasserstein-2 distances between stacks of tables."""
    a = np.asarray(values_a, dtype=np.float64)
    b = np.asarray(values_b, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if b.ndim == 1:
        b = b[None, :]
    if a.shape[1] != b.shape[1]:
        q = max(a.shape[1], b.shape[1])
        a, b = resample_rows(a, q), resample_rows(b, q)
    diff = a - b
    with np.errstate(over="ignore"):  # far-apart tables give inf, which is the honest answer
        return np.sqrt(np.mean(diff * diff, axis=1))


# ----------------------------------------------------------------------------
# single-table API

def build_quantile_table(samples, q: int) -> QuantileTable:
    """Empirical quantile table of a 1-D sample at ``q`` midpoint levels."""
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise ValueError("cannot build a quantile table from an empty sample")
    return QuantileTable(quantile_matrix(x[None, :], q)[0])


def _as_query(x, what):
    arr = np.asarray(x, dtype=np.float64)
    if np.isnan(arr).any():
        raise ValueError(f"{what} is NaN")
    return arr


def eval_quantile(table: QuantileTable, tau):
    """Quantile function of ``table`` at ``tau`` (scalar or array in [0, 1])."""
    t = _as_query(tau, "tau")
    if np.any((t < 0.0) | (t > 1.0)):
        raise ValueError("tau must lie in [0, 1]")
    out = quantile_rows(table.values[None, :], t.reshape(1, -1))[0]
    return float(out[0]) if t.ndim == 0 else out.reshape(t.shape)


def eval_cdf(table: QuantileTable, z):
    """CDF of ``table`` at ``z``; see :func:`cdf_rows` for tie and tail rules."""
    zz = _as_query(z, "z")
    out = cdf_rows(table.values[None, :], zz.reshape(1, -1))[0]
    return float(out[0]) if zz.ndim == 0 else out.reshape(zz.shape)


def w2_1d(table_a: QuantileTable, table_b: QuantileTable) -> float:
    """Wasserstein-2 distance between two quantile tables.

    Midpoint-rule quadrature of ``(F_a^{-1} - F_b^{-1})^2`` over the level
    grid, square-rooted. Tables with different ``Q`` are both re-tabulated on
    the finer grid first.
    """
    return float(w2_rows(table_a.values, table_b.values)[0])


def potential_derivative(z, particle_table: QuantileTable, target_table: QuantileTable):
    """Derivative of the Kantorovich potential from particles to target at ``z``."""
    zz = _as_query(z, "z")
    out = potential_derivative_rows(zz.reshape(1, -1), particle_table.values[None, :],
                                    target_table.values[None, :])[0]
    return float(out[0]) if zz.ndim == 0 else out.reshape(zz.shape)
