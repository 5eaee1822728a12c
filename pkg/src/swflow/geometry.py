"""Random directions on the unit sphere and projections onto them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import stream

FIXED = "fixed"
RESAMPLED = "resampled"
_MODES = (FIXED, RESAMPLED)


@dataclass(frozen=True, eq=False)
class DirectionSet:
    """``n_theta`` unit vectors in ``R^d`` (one per row).

    ``mode`` records whether a flow should keep the set for every iteration
    (``"fixed"``) or draw a fresh subset each iteration (``"resampled"``).
    """

    directions: np.ndarray
    seed: int = 0
    mode: str = FIXED

    def __post_init__(self):
        dirs = np.array(self.directions, dtype=np.float64, order="C")
        if dirs.ndim != 2 or dirs.shape[0] < 1 or dirs.shape[1] < 1:
            raise ValueError(f"directions must be a non-empty (n_theta, d) matrix, got {dirs.shape}")
        if not np.all(np.isfinite(dirs)):
            raise ValueError("directions contain non-finite entries")
        norms = np.sqrt(np.sum(dirs * dirs, axis=1))
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise ValueError("every direction must have unit norm")
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}, got {self.mode!r}")
        dirs.setflags(write=False)
        object.__setattr__(self, "directions", dirs)
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def n_theta(self) -> int:
        return self.directions.shape[0]

    @property
    def dim(self) -> int:
        return self.directions.shape[1]

    def __len__(self):
        return self.n_theta

    def __eq__(self, other):
        if not isinstance(other, DirectionSet):
            return NotImplemented
        return (self.seed == other.seed and self.mode == other.mode
                and np.array_equal(self.directions, other.directions))

    def subset(self, idx) -> "DirectionSet":
        return DirectionSet(self.directions[np.asarray(idx)], self.seed, self.mode)


def sample_directions(d: int, n_theta: int, seed: int, mode: str = FIXED,
                      name: str = "directions") -> DirectionSet:
    """Draw ``n_theta`` i.i.d. uniform directions on the sphere ``S^{d-1}``.

    Each direction is a standard Gaussian vector divided by its norm; draws
    with norm below 1e-12 are redrawn. ``name`` selects the substream of
    ``seed``, so e.g. training and monitoring sets can share a master seed.
    """
    if d < 1 or n_theta < 1:
        raise ValueError(f"need d >= 1 and n_theta >= 1, got d={d}, n_theta={n_theta}")
    rng = stream(seed, name)
    g = rng.standard_normal((n_theta, d))
    norms = np.sqrt(np.sum(g * g, axis=1))
    bad = norms < 1e-12
    while np.any(bad):
        g[bad] = rng.standard_normal((int(bad.sum()), d))
        norms[bad] = np.sqrt(np.sum(g[bad] * g[bad], axis=1))
        bad = norms < 1e-12
    dirs = g / norms[:, None]
    # one more normalisation pass pins the norm to within an ulp or two of 1
    dirs /= np.sqrt(np.sum(dirs * dirs, axis=1))[:, None]
    return DirectionSet(dirs, seed, mode)


def project(points, theta) -> np.ndarray:
    """Inner products of each point with ``theta``.

    ``theta`` may be one direction of shape ``(d,)`` (result ``(N,)``) or a
    matrix of directions ``(M, d)`` (result ``(N, M)``). A
    :class:`DirectionSet` is accepted in place of the matrix.

    The sum over coordinates runs in a fixed order, elementwise, so a point's
    projection is bit-identical no matter how many other points it is
    projected with (sharded and monolithic sketches rely on this).
    """
    if isinstance(theta, DirectionSet):
        theta = theta.directions
    x = np.asarray(points, dtype=np.float64)
    t = np.asarray(theta, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError(f"points must be (N, d), got shape {np.shape(points)}")
    single = t.ndim == 1
    t2 = t[None, :] if single else t
    if t2.ndim != 2 or t2.shape[1] != x.shape[1]:
        raise ValueError(f"dimension mismatch: points have d={x.shape[1]}, theta has shape {t.shape}")
    out = np.multiply.outer(x[:, 0], t2[:, 0])
    for j in range(1, x.shape[1]):
        out += np.multiply.outer(x[:, j], t2[:, j])
    out += 0.0  # -0.0 -> 0.0, so sorted projections compare bit-for-bit
    return out[:, 0] if single else out


def circle_directions(m: int) -> DirectionSet:
    """``m`` equispaced directions on the unit circle (a dense quadrature grid in 2-D)."""
    ang = 2.0 * np.pi * np.arange(m) / m
    return DirectionSet(np.column_stack([np.cos(ang), np.sin(ang)]))
