"""Monte-Carlo sliced-Wasserstein distance between point clouds."""

from __future__ import annotations

import numpy as np

from .geometry import DirectionSet, project
from .ot1d import quantile_matrix, w2_rows
from .sketch import TargetSketch

MONITOR_N_THETA = 200


def _tables(cloud, dirs: DirectionSet, q: int) -> np.ndarray:
    x = np.asarray(cloud, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != dirs.dim:
        raise ValueError(f"dimension mismatch: cloud shape {x.shape}, directions d={dirs.dim}")
    return quantile_matrix(project(x, dirs).T, q)


def sliced_w2_terms(a, b, dirs: DirectionSet, q: int = 100) -> np.ndarray:
    """Per-direction 1D W2 distances between the projections of ``a`` and ``b``."""
    return w2_rows(_tables(a, dirs, q), _tables(b, dirs, q))


def sw2_estimate(a, b, dirs: DirectionSet, q: int = 100) -> float:
    """Sliced Wasserstein-2 distance, averaged over the directions in ``dirs``.

    The clouds may have different sizes. With a shared ``dirs`` this is a
    pseudometric: symmetric, zero on identical clouds, and it satisfies the
    triangle inequality.
    """
    return float(np.mean(sliced_w2_terms(a, b, dirs, q)))


def sw2_with_stderr(a, b, dirs: DirectionSet, q: int = 100) -> tuple[float, float]:
    """Estimate and its Monte-Carlo standard error over directions."""
    terms = sliced_w2_terms(a, b, dirs, q)
    se = float(np.std(terms, ddof=1) / np.sqrt(terms.size)) if terms.size > 1 else float("nan")
    return float(np.mean(terms)), se


def sw2_to_sketch(cloud, sketch: TargetSketch, with_stderr: bool = False):
    """Sliced W2 between a cloud and the distribution summarised by ``sketch``."""
    terms = w2_rows(_tables(cloud, sketch.directions, sketch.q), sketch.values)
    est = float(np.mean(terms))
    if not with_stderr:
        return est
    se = float(np.std(terms, ddof=1) / np.sqrt(terms.size)) if terms.size > 1 else float("nan")
    return est, se
