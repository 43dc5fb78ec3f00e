"""Time grids, keyed random streams, Brownian ensembles and grid stochastic calculus.

Every path draws its Gaussian increments from its own Philox counter range,
keyed by ``(seed, stream)`` and indexed by the path number, so any subset of
paths (or any chunking of the work across threads) reproduces bit-identically.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

THREADS_ENV = "PROGEXP_THREADS"
DRIVER_STREAM = 0
_CHUNK_PATHS = 4096
_U64 = (1 << 64) - 1


def thread_count() -> int:
    """Worker count from ``PROGEXP_THREADS`` (default 1)."""
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_0 = 0 < ... < t_K = T``."""

    T: float
    K: int
    nodes: np.ndarray = field(repr=False, compare=False)

    @property
    def dt(self) -> float:
        return self.T / self.K

    @property
    def shape(self) -> int:
        return self.K + 1

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        """Node index of a time that must lie on the grid."""
        j = int(round(t / self.dt))
        if j < 0 or j > self.K or abs(self.nodes[j] - t) > tol * max(1.0, self.T):
            raise ValueError(f"time {t} is not a grid node (dt={self.dt})")
        return j

    def snap(self, tau: np.ndarray) -> np.ndarray:
        """Index of the first node ``>= tau``; ``K + 1`` when ``tau > T``.

        This is the bookkeeping convention for random times: node ``t_i``
        counts as "after tau" iff ``t_i >= tau``.
        """
        tau = np.asarray(tau, dtype=np.float64)
        idx = np.searchsorted(self.nodes, tau, side="left")
        return np.where(tau > self.T, self.K + 1, idx).astype(np.int64)


def make_grid(T: float, K: int) -> TimeGrid:
    if not np.isfinite(T) or T <= 0:
        raise ValueError(f"horizon T must be positive, got {T}")
    if int(K) != K or K < 2:
        raise ValueError(f"step count K must be an integer >= 2, got {K}")
    K = int(K)
    nodes = np.arange(K + 1, dtype=np.float64) * (T / K)
    nodes[-1] = T
    return TimeGrid(float(T), K, _frozen(nodes))


@dataclass(frozen=True)
class GridProcess:
    """Real process sampled on a grid, one row per path."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != self.grid.K + 1:
            raise ValueError(
                f"values must have shape (n_paths, {self.grid.K + 1}), got {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("grid process values must be finite")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=1)

    def at(self, t: float) -> np.ndarray:
        return self.values[:, self.grid.index_of(t)]

    def __add__(self, other: GridProcess) -> GridProcess:
        _check_aligned(self, other)
        return GridProcess(self.grid, self.values + other.values)

    def __sub__(self, other: GridProcess) -> GridProcess:
        _check_aligned(self, other)
        return GridProcess(self.grid, self.values - other.values)

    def subset(self, paths) -> GridProcess:
        return GridProcess(self.grid, self.values[paths])

    @classmethod
    def zeros(cls, grid: TimeGrid, n_paths: int) -> GridProcess:
        return cls(grid, np.zeros((n_paths, grid.K + 1)))

    @classmethod
    def deterministic(cls, grid: TimeGrid, n_paths: int, fn) -> GridProcess:
        """Broadcast a deterministic function of time to every path."""
        row = np.broadcast_to(np.asarray(fn(grid.nodes), dtype=np.float64), grid.nodes.shape)
        return cls(grid, np.broadcast_to(row, (n_paths, grid.K + 1)))


@dataclass(frozen=True)
class PathEnsemble:
    """Brownian driver paths, ``values[path, node, component]``."""

    grid: TimeGrid
    values: np.ndarray
    seed: int
    stream_offset: int = 0

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def component(self, c: int = 0) -> GridProcess:
        if not 0 <= c < self.dim:
            raise ValueError(f"component {c} out of range for dim={self.dim}")
        return GridProcess(self.grid, self.values[:, :, c])

    def terminal(self, c: int = 0) -> np.ndarray:
        return self.values[:, -1, c]


def _check_aligned(x: GridProcess, y: GridProcess) -> None:
    if x.grid.K != y.grid.K or x.grid.T != y.grid.T:
        raise ValueError("grid processes live on different grids")
    if x.n_paths != y.n_paths:
        raise ValueError(f"path counts differ: {x.n_paths} vs {y.n_paths}")


def _philox_key(seed: int, stream: int) -> int:
    return (int(seed) & _U64) | ((int(stream) & _U64) << 64)


def _chunk_uniforms(key: int, first: int, count: int, draws: int) -> np.ndarray:
    stride = -(-draws // 4)  # Philox4x64 emits 4 words per counter value
    bitgen = np.random.Philox(key=key, counter=first * stride)
    raw = bitgen.random_raw(count * stride * 4).reshape(count, stride * 4)[:, :draws]
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def _keyed(seed, stream, n_paths, draws, path_offset, transform) -> np.ndarray:
    if n_paths < 1 or draws < 1:
        raise ValueError("need n_paths >= 1 and draws >= 1")
    key = _philox_key(seed, stream)
    out = np.empty((n_paths, draws))
    starts = range(0, n_paths, _CHUNK_PATHS)

    def work(start):
        count = min(_CHUNK_PATHS, n_paths - start)
        u = _chunk_uniforms(key, path_offset + start, count, draws)
        out[start : start + count] = transform(u)

    workers = thread_count()
    if workers == 1:
        for s in starts:
            work(s)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, starts))
    return out


def keyed_normals(
    seed: int, stream: int, n_paths: int, draws: int, path_offset: int = 0
) -> np.ndarray:
    """Standard normals ``(n_paths, draws)``; row ``p`` depends only on
    ``(seed, stream, path_offset + p)``."""
    return _keyed(seed, stream, n_paths, draws, path_offset, ndtri)


def keyed_uniforms(
    seed: int, stream: int, n_paths: int, draws: int, path_offset: int = 0
) -> np.ndarray:
    """Uniforms on (0, 1), keyed like :func:`keyed_normals`."""
    return _keyed(seed, stream, n_paths, draws, path_offset, lambda u: u)


def simulate_brownian(
    grid: TimeGrid, dim: int, n_paths: int, seed: int, stream_offset: int = 0
) -> PathEnsemble:
    """Independent ``dim``-dimensional Brownian paths started at zero."""
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if n_paths < 1:
        raise ValueError(f"n_paths must be >= 1, got {n_paths}")
    z = keyed_normals(seed, DRIVER_STREAM, n_paths, grid.K * dim, stream_offset)
    z = z.reshape(n_paths, grid.K, dim)
    z *= np.sqrt(grid.dt)
    values = np.zeros((n_paths, grid.K + 1, dim))
    np.cumsum(z, axis=1, out=values[:, 1:, :])
    return PathEnsemble(grid, values, int(seed), int(stream_offset))


def ito_integrate(integrand: GridProcess, integrator: GridProcess) -> GridProcess:
    """Left-point sums ``sum_{i<j} h(t_i) (X(t_{i+1}) - X(t_i))``."""
    _check_aligned(integrand, integrator)
    n = integrand.n_paths
    out = np.zeros((n, integrand.grid.K + 1))
    np.cumsum(integrand.values[:, :-1] * integrator.increments(), axis=1, out=out[:, 1:])
    return GridProcess(integrand.grid, out)


def covariation(X: GridProcess, Y: GridProcess) -> GridProcess:
    """Realized covariation ``sum_{i<j} dX_i dY_i``."""
    _check_aligned(X, Y)
    out = np.zeros((X.n_paths, X.grid.K + 1))
    np.cumsum(X.increments() * Y.increments(), axis=1, out=out[:, 1:])
    return GridProcess(X.grid, out)
