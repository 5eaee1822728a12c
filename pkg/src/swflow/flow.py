"""Sliced-Wasserstein flow: particle updates, training loop and replay.

Each iteration projects the particles on the current directions, tabulates
their quantiles, and moves every particle with the Euler-Maruyama update::

    x <- x + h * v(x) + sqrt(2 * lambda * h) * z
    v(x) = -(1 / M) * sum_n psi'_n(<theta_n, x>) * theta_n

where ``psi'_n`` is the 1D potential derivative from the projected particles
to the projected target on direction ``theta_n``. With this sign, ``h = 1``
in one dimension sends every particle to its increasing-arrangement image.

The per-iteration particle tables can be recorded (``record_maps``) and later
replayed on particles that took no part in training.
"""

from __future__ import annotations

import logging
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._binio import Reader, f64_bytes, u32_bytes
from .geometry import FIXED, RESAMPLED, DirectionSet, project
from .metrics import sw2_to_sketch
from .ot1d import QuantileTable, potential_derivative_rows, quantile_matrix
from .rng import CounterNormal, stream
from .sketch import TargetSketch

log = logging.getLogger(__name__)

RECORD_MAGIC = b"SWTM"
RECORD_VERSION = 1
_CFG_STRUCT = struct.Struct("<IIddIIQBBxx")
_MODE_CODES = {FIXED: 0, RESAMPLED: 1}
EARLY_STOP_WINDOW = 10
EARLY_STOP_RTOL = 1e-4


class NumericalError(FloatingPointError):
    """A particle left the finite reals during an update."""


@dataclass
class FlowConfig:
    n_particles: int = 5000
    n_theta: int = 30
    step_size: float = 1.0
    lam: float = 1e-4
    iterations: int = 200
    quantiles: int = 100
    seed: int = 0
    direction_mode: str = FIXED
    record_maps: bool = False
    early_stop: bool = False

    def validate(self):
        if self.n_particles < 1:
            raise ValueError(f"n_particles must be >= 1, got {self.n_particles}")
        if self.n_theta < 1:
            raise ValueError(f"n_theta must be >= 1, got {self.n_theta}")
        if not self.step_size > 0:
            raise ValueError(f"step size must be > 0, got {self.step_size}")
        if not self.lam >= 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if self.quantiles < 2:
            raise ValueError(f"quantiles must be >= 2, got {self.quantiles}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")
        if self.direction_mode not in _MODE_CODES:
            raise ValueError(f"direction_mode must be 'fixed' or 'resampled', got {self.direction_mode!r}")
        return self

    def check_sketch(self, sketch: TargetSketch):
        if sketch.q != self.quantiles:
            raise ValueError(f"config uses Q={self.quantiles} but the sketch has Q={sketch.q}")
        if self.direction_mode == FIXED and sketch.n_theta != self.n_theta:
            raise ValueError(f"fixed directions: config n_theta={self.n_theta} but the sketch has {sketch.n_theta}")
        if sketch.n_theta < self.n_theta:
            raise ValueError(f"sketch holds {sketch.n_theta} directions, fewer than n_theta={self.n_theta}")


@dataclass
class FlowLog:
    iters: list = field(default_factory=list)
    sw2: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    stopped_early: bool = False

    def append(self, k, sw2, wall_ms):
        self.iters.append(int(k))
        self.sw2.append(float(sw2))
        self.wall_ms.append(float(wall_ms))

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("iter,sw2,wall_ms\n")
            for k, s, w in zip(self.iters, self.sw2, self.wall_ms):
                fh.write(f"{k},{s!r},{w:.3f}\n")

    @classmethod
    def from_csv(cls, path) -> "FlowLog":
        out = cls()
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        for k, s, w in rows:
            out.append(k, s, w)
        return out


def initial_particles(n: int, d: int, seed: int) -> np.ndarray:
    """``n`` standard Gaussian particles in ``R^d`` from the ``"init"`` substream."""
    return CounterNormal.from_seed(seed, "init").normal(0, n, d)


def _check_cloud(cloud, d: int) -> np.ndarray:
    x = np.asarray(cloud, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"particles must be a non-empty (N, d) matrix, got shape {x.shape}")
    if x.shape[1] != d:
        raise ValueError(f"dimension mismatch: particles d={x.shape[1]}, sketch d={d}")
    if not np.all(np.isfinite(x)):
        raise ValueError("particles contain non-finite values")
    return x


def _as_values(tables) -> np.ndarray:
    if isinstance(tables, np.ndarray):
        return np.atleast_2d(tables)
    return np.stack([t.values if isinstance(t, QuantileTable) else np.asarray(t) for t in tables])


def _velocity(proj: np.ndarray, theta: np.ndarray, particle_values, target_values) -> np.ndarray:
    # proj: (N, M) projections of the points on theta (M, d)
    psi = potential_derivative_rows(proj.T, particle_values, target_values)
    v = np.multiply.outer(psi[0], theta[0])
    for n in range(1, theta.shape[0]):
        v += np.multiply.outer(psi[n], theta[n])
    return v * (-1.0 / theta.shape[0])


def drift(x, particle_tables, sketch: TargetSketch) -> np.ndarray:
    """Monte-Carlo drift at ``x`` (one point ``(d,)`` or many ``(N, d)``).

    ``particle_tables`` holds one table per sketch direction, either as
    :class:`QuantileTable` objects or an ``(n_theta, Q)`` array.
    """
    pv = _as_values(particle_tables)
    if pv.shape[0] != sketch.n_theta:
        raise ValueError(f"got {pv.shape[0]} particle tables for {sketch.n_theta} sketch directions")
    pts = np.asarray(x, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != sketch.dim:
        raise ValueError(f"dimension mismatch: x has d={pts.shape[1]}, sketch d={sketch.dim}")
    theta = sketch.directions.directions
    v = _velocity(project(pts, theta), theta, pv, sketch.values)
    return v[0] if single else v


def _advance(cloud, proj, theta, pv, tv, h, lam, noise, k):
    with np.errstate(over="ignore", invalid="ignore"):
        out = cloud + h * _velocity(proj, theta, pv, tv)
        if lam > 0:
            out += np.sqrt(2.0 * lam * h) * noise.normal(k, cloud.shape[0], cloud.shape[1])
    bad = ~np.all(np.isfinite(out), axis=1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NumericalError(f"particle {i} became non-finite at iteration {k}")
    return out


def iteration_directions(sketch: TargetSketch, cfg: FlowConfig, k: int) -> np.ndarray:
    """Indices of the sketch directions used at iteration ``k``."""
    if cfg.direction_mode == FIXED:
        return np.arange(sketch.n_theta)
    rng = stream(cfg.seed, "directions", k)
    return np.sort(rng.choice(sketch.n_theta, size=cfg.n_theta, replace=False))


def euler_step(cloud, sketch: TargetSketch, cfg: FlowConfig, noise: CounterNormal, k: int = 0,
               idx=None):
    """One particle update. Returns ``(new_cloud, particle_table_values)``.

    ``idx`` picks the sketch directions to use (all of them by default). The
    returned ``(len(idx), Q)`` array holds the particle quantile tables the
    step was computed with.
    """
    x = _check_cloud(cloud, sketch.dim)
    idx = np.arange(sketch.n_theta) if idx is None else np.asarray(idx)
    theta = sketch.directions.directions[idx]
    proj = project(x, theta)
    pv = quantile_matrix(proj.T, sketch.q)
    return _advance(x, proj, theta, pv, sketch.values[idx], cfg.step_size, cfg.lam, noise, k), pv


# ----------------------------------------------------------------------------
# transport-map records

@dataclass(eq=False)
class TransportMapRecord:
    """Particle quantile tables of every training iteration.

    ``tables[k]`` is ``(n_theta, Q)``; ``indices[k]`` lists the directions
    (rows of ``directions``) each table belongs to.
    """

    cfg: FlowConfig
    directions: DirectionSet
    tables: np.ndarray
    indices: np.ndarray

    @property
    def n_frames(self) -> int:
        return self.tables.shape[0]

    def frame(self, k: int):
        return self.indices[k], self.tables[k]


class RecordWriter:
    """Appends frames to an SWTM file as the flow runs.

    Layout (little-endian)::

        "SWTM" u32 version=1
        config: u32 n_particles u32 n_theta f64 h f64 lambda u32 iterations
                u32 q u64 seed u8 mode u8 flags 2x pad
        u32 n_frames
        directions: u32 d u32 n_dirs u64 seed, n_dirs x d f64
        n_frames frames: [u32 x n_theta indices, resampled mode only]
                         n_theta x q f64 particle table values
    """

    def __init__(self, path, cfg: FlowConfig, directions: DirectionSet):
        self.path = Path(path)
        self.cfg = cfg
        self.n_frames = 0
        self.fh = open(self.path, "wb")
        flags = int(cfg.record_maps) | (int(cfg.early_stop) << 1)
        self.fh.write(RECORD_MAGIC + struct.pack("<I", RECORD_VERSION))
        self.fh.write(_CFG_STRUCT.pack(cfg.n_particles, cfg.n_theta, cfg.step_size, cfg.lam,
                                       cfg.iterations, cfg.quantiles, cfg.seed,
                                       _MODE_CODES[cfg.direction_mode], flags))
        self._count_at = self.fh.tell()
        self.fh.write(struct.pack("<I", 0))
        self.fh.write(struct.pack("<IIQ", directions.dim, directions.n_theta, directions.seed))
        self.fh.write(f64_bytes(directions.directions))

    def write(self, idx, values):
        if self.cfg.direction_mode == RESAMPLED:
            self.fh.write(u32_bytes(idx))
        self.fh.write(f64_bytes(values))
        self.n_frames += 1

    def close(self):
        self.fh.seek(self._count_at)
        self.fh.write(struct.pack("<I", self.n_frames))
        self.fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def save_record(record: TransportMapRecord, path) -> None:
    with RecordWriter(path, record.cfg, record.directions) as w:
        for k in range(record.n_frames):
            w.write(*record.frame(k))


def load_record(path) -> TransportMapRecord:
    """Read an SWTM file. Frames are memory-mapped, not loaded eagerly."""
    fixed = 8 + _CFG_STRUCT.size + 4 + 16
    with open(path, "rb") as fh:
        head = fh.read(fixed)
        r = Reader(head, path)
        if len(head) == fixed:
            d, n_dirs = struct.unpack_from("<II", head, fixed - 16)
            r = Reader(head + fh.read(8 * d * n_dirs), path)
    r.magic(RECORD_MAGIC)
    r.version(RECORD_VERSION)
    n, m, h, lam, iters, q, seed, mode, flags = r.unpack(_CFG_STRUCT.format[1:])
    modes = {v: k for k, v in _MODE_CODES.items()}
    if mode not in modes:
        r.fail(f"unknown direction mode {mode}", offset=r.pos - 4)
    cfg = FlowConfig(n, m, h, lam, iters, q, seed, modes[mode], bool(flags & 1), bool(flags & 2))
    (n_frames,) = r.unpack("I")
    d, n_dirs, dseed = r.unpack("IIQ")
    dirs = DirectionSet(r.f64(n_dirs * d).reshape(n_dirs, d), dseed)
    start = r.pos
    idx_bytes = 4 * m if cfg.direction_mode == RESAMPLED else 0
    frame_bytes = idx_bytes + 8 * m * q
    size = Path(path).stat().st_size
    if size - start != n_frames * frame_bytes:
        r.pos = start
        r.fail(f"expected {n_frames} frames of {frame_bytes} bytes, found {size - start} bytes")
    if n_frames == 0:
        tables = np.empty((0, m, q))
        indices = np.empty((0, m), dtype=np.int64)
    elif idx_bytes:
        dt = np.dtype([("idx", "<u4", (m,)), ("tab", "<f8", (m, q))])
        mm = np.memmap(path, dtype=dt, mode="r", offset=start, shape=(n_frames,))
        tables, indices = mm["tab"], mm["idx"].astype(np.int64)
    else:
        tables = np.memmap(path, dtype="<f8", mode="r", offset=start, shape=(n_frames, m, q))
        indices = np.broadcast_to(np.arange(m), (n_frames, m))
    if indices.size and indices.max() >= n_dirs:
        r.fail("frame direction index out of range", offset=start)
    return TransportMapRecord(cfg, dirs, tables, indices)


# ----------------------------------------------------------------------------
# training and replay

def _should_stop(sw2: list) -> bool:
    if len(sw2) <= EARLY_STOP_WINDOW:
        return False
    old, new = sw2[-EARLY_STOP_WINDOW - 1], sw2[-1]
    return abs(new - old) <= EARLY_STOP_RTOL * abs(old)


def run_flow(init, sketch: TargetSketch, cfg: FlowConfig, monitor: TargetSketch | None = None,
             record_path=None, callback=None):
    """Run the flow for ``cfg.iterations`` steps starting from ``init``.

    Returns ``(particles, record, log)``. ``record`` is ``None`` unless
    ``cfg.record_maps``; with ``record_path`` the frames are streamed to that
    file as they are produced and the returned record is memory-mapped from
    it. ``log`` holds the sliced W2 distance to ``monitor`` (NaN without a
    monitor) for generations ``0..K``. ``callback(k, particles)`` is called
    for every generation, including the initial one.
    """
    cfg.validate()
    cfg.check_sketch(sketch)
    x = _check_cloud(init, sketch.dim)
    if x.shape[0] != cfg.n_particles:
        raise ValueError(f"init has {x.shape[0]} particles, config says {cfg.n_particles}")
    if cfg.early_stop and monitor is None:
        raise ValueError("early stopping needs a monitor sketch")
    if monitor is not None and monitor.dim != sketch.dim:
        raise ValueError("monitor sketch dimension differs from the training sketch")

    noise = CounterNormal.from_seed(cfg.seed, "noise")
    flog = FlowLog()
    t0 = time.perf_counter()

    def observe(k, pts):
        s = sw2_to_sketch(pts, monitor) if monitor is not None else float("nan")
        flog.append(k, s, 1e3 * (time.perf_counter() - t0))
        if callback is not None:
            callback(k, pts)

    writer = None
    frames = []
    if cfg.record_maps and record_path is not None:
        writer = RecordWriter(record_path, cfg, sketch.directions)
    observe(0, x)
    try:
        for k in range(cfg.iterations):
            idx = iteration_directions(sketch, cfg, k)
            x, pv = euler_step(x, sketch, cfg, noise, k, idx)
            if writer is not None:
                writer.write(idx, pv)
            elif cfg.record_maps:
                frames.append((idx, pv))
            observe(k + 1, x)
            if cfg.early_stop and _should_stop(flog.sw2):
                log.info("early stop at iteration %d (sw2=%.6g)", k + 1, flog.sw2[-1])
                flog.stopped_early = True
                break
    finally:
        if writer is not None:
            writer.close()

    record = None
    if writer is not None:
        record = load_record(record_path)
    elif cfg.record_maps:
        m, q = cfg.n_theta, sketch.q
        tables = np.stack([f[1] for f in frames]) if frames else np.empty((0, m, q))
        indices = np.stack([f[0] for f in frames]) if frames else np.empty((0, m), dtype=np.int64)
        record = TransportMapRecord(cfg, sketch.directions, tables, indices)
    return x, record, flog


def replay_flow(fresh, record: TransportMapRecord, sketch: TargetSketch, seed: int | None = None,
                monitor: TargetSketch | None = None, callback=None):
    """Transport new particles with the tables recorded during training.

    The drift at iteration ``k`` uses the stored particle tables of the
    training run, not tables of ``fresh``. Diffusion noise comes from the
    ``"noise"`` substream of ``seed``; passing the training seed reproduces
    the training noise, while ``seed=None`` draws independent noise.
    Returns ``(particles, log)``.
    """
    cfg = record.cfg
    if not np.array_equal(record.directions.directions, sketch.directions.directions):
        raise ValueError("record and sketch were built on different direction sets")
    if sketch.q != cfg.quantiles:
        raise ValueError(f"record uses Q={cfg.quantiles} but the sketch has Q={sketch.q}")
    x = _check_cloud(fresh, sketch.dim)
    if seed is None:
        noise = CounterNormal.from_seed(cfg.seed, "replay-noise")
    else:
        noise = CounterNormal.from_seed(seed, "noise")

    flog = FlowLog()
    t0 = time.perf_counter()

    def observe(k, pts):
        s = sw2_to_sketch(pts, monitor) if monitor is not None else float("nan")
        flog.append(k, s, 1e3 * (time.perf_counter() - t0))
        if callback is not None:
            callback(k, pts)

    observe(0, x)
    theta_all = sketch.directions.directions
    for k in range(record.n_frames):
        idx, pv = record.frame(k)
        idx = np.asarray(idx)
        pv = np.asarray(pv, dtype=np.float64)
        theta = theta_all[idx]
        proj = project(x, theta)
        x = _advance(x, proj, theta, pv, sketch.values[idx], cfg.step_size, cfg.lam, noise, k)
        observe(k + 1, x)
    return x, flog
