"""Toy Gaussian-mixture data and matrix file I/O.

Two on-disk matrix formats are supported:

* CSV: headerless, one point per row, values written with 17 significant
  digits.
* SWMX: ``"SWMX" u32 version=1 u32 n u32 d`` followed by ``n x d``
  little-endian f64 in row-major order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._binio import Reader, f64_bytes
from .rng import stream

SWMX_MAGIC = b"SWMX"
SWMX_VERSION = 1


@dataclass(frozen=True, eq=False)
class GmmSpec:
    """Gaussian mixture with diagonal covariances.

    ``means`` and ``variances`` are ``(n_components, d)``; ``weights`` sums to one.
    """

    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray
    seed: int = 0

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        var = np.atleast_2d(np.asarray(self.variances, dtype=np.float64))
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if means.shape != var.shape or means.shape[0] != w.size:
            raise ValueError(f"inconsistent GMM shapes: means {means.shape}, variances {var.shape}, weights {w.shape}")
        if not (np.all(np.isfinite(means)) and np.all(np.isfinite(var))):
            raise ValueError("GMM parameters must be finite")
        if np.any(var <= 0):
            raise ValueError("GMM variances must be > 0")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"GMM weights must be non-negative and sum to 1, got sum {w.sum()!r}")
        for name, arr in (("means", means), ("variances", var), ("weights", w)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps({
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "weights": self.weights.tolist(),
            "seed": self.seed,
        }, indent=1))

    @classmethod
    def from_json(cls, path) -> "GmmSpec":
        obj = json.loads(Path(path).read_text())
        return cls(obj["means"], obj["variances"], obj["weights"], obj.get("seed", 0))


def gmm_sample(spec: GmmSpec, p: int, return_labels: bool = False):
    """Draw ``p`` i.i.d. points from the mixture (deterministic given ``spec.seed``)."""
    if p < 1:
        raise ValueError(f"need p >= 1, got {p}")
    rng = stream(spec.seed, "gmm-sample")
    labels = rng.choice(spec.n_components, size=p, p=spec.weights)
    z = rng.standard_normal((p, spec.dim))
    pts = spec.means[labels] + np.sqrt(spec.variances[labels]) * z
    return (pts, labels) if return_labels else pts


def random_gmm_spec(d: int, n_components: int = 10, min_separation: float = 6.0,
                    seed: int = 0) -> GmmSpec:
    """Random mixture whose component means are well separated.

    Standard deviations are uniform in ``[0.5, 1.5]`` per coordinate. Means
    are drawn uniformly in a box and rejected until every pair is at least
    ``min_separation`` times the average component std apart; the box grows
    whenever rejection stalls. Weights are uniform in ``[1, 2]``, normalised.
    """
    if d < 1 or n_components < 1:
        raise ValueError(f"need d >= 1 and n_components >= 1, got d={d}, n_components={n_components}")
    if min_separation < 0:
        raise ValueError("min_separation must be >= 0")
    rng = stream(seed, "gmm-spec")
    std = rng.uniform(0.5, 1.5, size=(n_components, d))
    gap = min_separation * float(std.mean())
    half = max(gap, 1.0) * 0.5 * n_components ** (1.0 / d)

    means = np.empty((n_components, d))
    placed, tries = 0, 0
    while placed < n_components:
        cand = rng.uniform(-half, half, size=d)
        if placed == 0 or np.min(np.linalg.norm(means[:placed] - cand, axis=1)) >= gap:
            means[placed] = cand
            placed += 1
            tries = 0
        else:
            tries += 1
            if tries > 1000:
                half *= 1.25
                tries = 0
    w = rng.uniform(1.0, 2.0, size=n_components)
    w /= w.sum()
    return GmmSpec(means, std ** 2, w, seed)


# ----------------------------------------------------------------------------
# matrix files

def _format_of(path, fmt):
    if fmt is not None:
        fmt = fmt.lower()
    else:
        fmt = "csv" if str(path).lower().endswith(".csv") else "swmx"
    if fmt not in ("csv", "swmx"):
        raise ValueError(f"unknown matrix format {fmt!r} (expected 'csv' or 'swmx')")
    return fmt


def save_matrix(cloud, path, fmt: str | None = None) -> None:
    """Write an ``(n, d)`` matrix; the format follows the extension unless given."""
    x = np.asarray(cloud, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected an (n, d) matrix, got shape {x.shape}")
    if _format_of(path, fmt) == "csv":
        np.savetxt(path, x, delimiter=",", fmt="%.17g")
        return
    with open(path, "wb") as fh:
        fh.write(SWMX_MAGIC + struct.pack("<III", SWMX_VERSION, x.shape[0], x.shape[1]))
        fh.write(f64_bytes(x))


def load_matrix(path, fmt: str | None = None) -> np.ndarray:
    if _format_of(path, fmt) == "csv":
        x = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
        if x.size == 0:
            raise ValueError(f"{path}: empty matrix")
        return x
    r = Reader(Path(path).read_bytes(), path)
    r.magic(SWMX_MAGIC)
    r.version(SWMX_VERSION)
    n, d = r.unpack("II")
    x = r.f64(n * d).reshape(n, d)
    r.done()
    return x
