"""Seeded random streams.

Every stochastic operation draws from a named substream of one integer seed,
so that directions, particle initialisation, noise, monitoring and mini-batch
selection never share randomness. Named streams are numpy ``Philox``
generators keyed through ``SeedSequence.spawn_key``.

Diffusion noise uses :class:`CounterNormal`, which maps an
``(iteration, particle, coordinate)`` counter straight to a Gaussian draw.
A particle's noise therefore does not depend on how many other particles
exist or in which order they are processed.
"""

from __future__ import annotations

import zlib

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _name_code(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def stream(seed: int, name: str, *keys: int) -> np.random.Generator:
    """Return the generator for substream ``name`` (optionally sub-keyed) of ``seed``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(int(seed), spawn_key=(_name_code(name), *map(int, keys)))
    return np.random.Generator(np.random.Philox(ss))


def stream_key(seed: int, name: str) -> int:
    """A 64-bit key for counter-based generators derived from ``(seed, name)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(_name_code(name),))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def mix64(x: np.ndarray) -> np.ndarray:
    """SplitMix64 finaliser, applied elementwise to a ``uint64`` array (a bijection)."""
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        x = x + _GOLDEN
        x = (x ^ (x >> np.uint64(30))) * _M1
        x = (x ^ (x >> np.uint64(27))) * _M2
        x = x ^ (x >> np.uint64(31))
    return x


class CounterNormal:
    """Counter-based standard normal generator.

    ``normal(k, n, d)`` returns the ``(n, d)`` block of draws for iteration
    ``k``; entry ``[i, j]`` depends only on ``(key, k, i, j)``.
    """

    def __init__(self, key: int):
        self.key = int(key) & 0xFFFFFFFFFFFFFFFF

    @classmethod
    def from_seed(cls, seed: int, name: str = "noise") -> "CounterNormal":
        return cls(stream_key(seed, name))

    def _bits(self, k: int, rows: np.ndarray, d: int, lane: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            h = mix64(np.array([self.key ^ (int(k) * 0xD1B54A32D192ED03 & 0xFFFFFFFFFFFFFFFF)],
                               dtype=np.uint64))
            h = mix64(h + rows.astype(np.uint64)[:, None] * _GOLDEN)
            cols = np.arange(d, dtype=np.uint64)[None, :] * np.uint64(2) + np.uint64(lane)
            return mix64(h ^ mix64(cols))

    def normal(self, k: int, n: int, d: int, start: int = 0) -> np.ndarray:
        rows = np.arange(start, start + n, dtype=np.uint64)
        # 53-bit uniforms on (0, 1]
        u1 = ((self._bits(k, rows, d, 0) >> np.uint64(11)) + np.uint64(1)) * 2.0 ** -53
        u2 = (self._bits(k, rows, d, 1) >> np.uint64(11)) * 2.0 ** -53
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
