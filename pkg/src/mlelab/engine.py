"""Monte Carlo driver for the normalized MLE error.

For every sample size ``n`` and replicate ``r`` a fresh sample is drawn
from its own substream keyed by ``(master_seed, r, j)`` where ``j`` indexes
the n-grid, so the output depends only on the configuration and never on
how replicates are scheduled across workers.

The binary cache layout (all little-endian)::

    b"ZNMX"             magic
    u16                 format version (1)
    u16                 flags, bit 0 set when smoothed values follow
    u64 R, u64 J        replicates, n-grid length
    f64                 epsilon
    32 bytes            config digest (sha256, zero-filled when absent)
    J x i64             n-grid
    R x J f64           Z_n values, row-major, NaN for failed cells
    R x J f64           boundary flags as 0.0/1.0
    R x J f64           smoothed values (if flag bit 0)
"""
from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mlelab import models, solver
from mlelab.models import ModelSpec
from mlelab.solver import SolverSettings

MAGIC = b"ZNMX"
VERSION = 1
_HEADER = struct.Struct("<4sHHQQd32s")


class CacheError(ValueError):
    """Malformed or incompatible ZNMX cache file."""


@dataclass
class SeededStream:
    """Reproducible random substream.

    Distinct ``(stream_id, substream)`` pairs under one ``master_seed`` give
    statistically independent generators (numpy ``SeedSequence`` spawn keys).
    """

    master_seed: int
    stream_id: int
    substream: int = 0
    rng: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        seq = np.random.SeedSequence(
            entropy=int(self.master_seed) & (2**64 - 1),
            spawn_key=(int(self.stream_id), int(self.substream)),
        )
        self.rng = np.random.Generator(np.random.PCG64(seq))


@dataclass
class ZnMatrix:
    n_grid: np.ndarray
    replicates: int
    values: np.ndarray
    boundary_flags: np.ndarray
    epsilon: float
    smoothed_values: np.ndarray | None = None

    def __post_init__(self):
        self.n_grid = np.asarray(self.n_grid, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=float)
        self.boundary_flags = np.asarray(self.boundary_flags, dtype=bool)
        if self.smoothed_values is not None:
            self.smoothed_values = np.asarray(self.smoothed_values, dtype=float)
        shape = (self.replicates, self.n_grid.shape[0])
        if self.values.shape != shape or self.boundary_flags.shape != shape:
            raise ValueError(f"matrix shape mismatch, expected {shape}")

    def column(self, j: int) -> np.ndarray:
        v = self.values[:, j]
        return v[np.isfinite(v)]

    def smoothed_column(self, j: int) -> np.ndarray:
        src = self.values if self.smoothed_values is None else self.smoothed_values
        v = src[:, j]
        return v[np.isfinite(v)]

    def failures(self, j: int) -> int:
        return int(np.count_nonzero(~np.isfinite(self.values[:, j])))

    def boundary_rate(self, j: int) -> float:
        ok = np.isfinite(self.values[:, j])
        return float(np.count_nonzero(self.boundary_flags[ok, j])) / max(1, int(ok.sum()))

    def boundary_hits(self, j: int) -> int:
        return int(np.count_nonzero(self.boundary_flags[:, j]))


def smooth(values, epsilon: float, stream) -> np.ndarray:
    """``sqrt(1-eps) v + sqrt(eps) g`` with fresh standard normals ``g``."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    v = np.asarray(values, dtype=float)
    rng = stream.rng if hasattr(stream, "rng") else stream
    g = rng.standard_normal(v.shape)
    return math.sqrt(1.0 - epsilon) * v + math.sqrt(epsilon) * g


def _cell(model, master_seed, r, j, n):
    stream = SeededStream(master_seed, r, j)
    data = models.sample(model, stream, n)
    g = stream.rng.standard_normal()
    return data, g


def _run_chunk(model, n, j, rows, master_seed, settings, backend):
    data = np.empty((len(rows), n))
    g = np.empty(len(rows))
    for i, r in enumerate(rows):
        data[i], g[i] = _cell(model, master_seed, r, j, n)
    theta, _, _, bd, _, status = solver.solve_batch(model, data, settings, backend)
    return theta, bd.astype(bool), status, g


def simulate_zn(model: ModelSpec, n_grid, replicates: int, epsilon: float,
                master_seed: int, settings: SolverSettings | None = None,
                workers: int = 1, backend=None, chunk_cells: int = 1 << 18,
                progress=None) -> ZnMatrix:
    """Simulate ``Z_n = sqrt(I n) (theta_hat - theta0)`` on an n-grid.

    Solver failures are recorded as NaN cells; :attr:`failures` counts them.
    """
    settings = settings or SolverSettings()
    n_grid = [int(n) for n in n_grid]
    if replicates < 100:
        raise ValueError(f"replicates must be >= 100, got {replicates}")
    if any(n < 2 for n in n_grid):
        raise ValueError(f"every n must be >= 2, got {n_grid}")
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"epsilon must lie in [0, 1), got {epsilon}")

    info = models.fisher_information(model)
    R, J = replicates, len(n_grid)
    values = np.full((R, J), np.nan)
    smoothed = np.full((R, J), np.nan)
    boundary = np.zeros((R, J), dtype=bool)
    a, b = math.sqrt(1.0 - epsilon), math.sqrt(epsilon)

    with ThreadPoolExecutor(max_workers=max(1, int(workers))) as pool:
        for j, n in enumerate(n_grid):
            per = max(1, chunk_cells // n)
            chunks = [range(s, min(s + per, R)) for s in range(0, R, per)]
            jobs = [pool.submit(_run_chunk, model, n, j, rows, master_seed, settings, backend)
                    for rows in chunks]
            scale = math.sqrt(info * n)
            for rows, job in zip(chunks, jobs):
                theta, bd, status, g = job.result()
                z = scale * (theta - model.theta0)
                z[status != 0] = np.nan
                sl = slice(rows.start, rows.stop)
                values[sl, j] = z
                boundary[sl, j] = bd & (status == 0)
                smoothed[sl, j] = a * z + b * g
            if progress is not None:
                progress(j, n)
    return ZnMatrix(np.array(n_grid), R, values, boundary, float(epsilon), smoothed)


def write_cache(path, matrix: ZnMatrix, digest: bytes = b"") -> None:
    digest = bytes(digest)[:32].ljust(32, b"\0")
    has_smooth = matrix.smoothed_values is not None
    R, J = matrix.values.shape
    header = _HEADER.pack(MAGIC, VERSION, 1 if has_smooth else 0, R, J,
                          float(matrix.epsilon), digest)
    blocks = [
        header,
        matrix.n_grid.astype("<i8").tobytes(),
        np.ascontiguousarray(matrix.values, dtype="<f8").tobytes(),
        np.ascontiguousarray(matrix.boundary_flags, dtype="<f8").tobytes(),
    ]
    if has_smooth:
        blocks.append(np.ascontiguousarray(matrix.smoothed_values, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(blocks))


def read_cache(path) -> tuple[ZnMatrix, bytes]:
    """Load a ZNMX file; returns the matrix and the stored config digest."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CacheError("truncated header")
    magic, version, flags, R, J, eps, digest = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise CacheError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CacheError(f"unsupported version {version}")
    nblocks = 3 if flags & 1 else 2
    expected = _HEADER.size + 8 * J + 8 * R * J * nblocks
    if len(raw) != expected:
        raise CacheError(f"size {len(raw)} does not match header (expected {expected})")
    off = _HEADER.size
    n_grid = np.frombuffer(raw, "<i8", J, off).astype(np.int64)
    off += 8 * J

    def block():
        nonlocal off
        out = np.frombuffer(raw, "<f8", R * J, off).reshape(R, J).astype(float)
        off += 8 * R * J
        return out

    values = block()
    bflags = block()
    smoothed = block() if flags & 1 else None
    if not np.all((bflags == 0.0) | (bflags == 1.0)):
        raise CacheError("boundary block holds values other than 0/1")
    return ZnMatrix(n_grid, int(R), values, bflags == 1.0, float(eps), smoothed), digest
