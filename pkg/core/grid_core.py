"""Time/space grids, trajectories, forcing paths and the norms used across the solvers.

States are plain float64 numpy vectors over the interior nodes of a SpaceGrid;
Dirichlet boundary values are implicit zeros.
"""

import csv
import io
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist

from core.errors import DimensionError, DomainError, ParameterError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TimeGrid:
    b: float
    n_steps: int

    def __post_init__(self) -> None:
        if not (self.b > 0 and math.isfinite(self.b)):
            raise ParameterError(f"period b must be positive, got {self.b}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 2:
            raise ParameterError(f"n_steps must be an integer >= 2, got {self.n_steps}")

    @property
    def tau(self) -> float:
        return self.b / self.n_steps

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.b, self.n_steps + 1)

    def index_of(self, t: float) -> int:
        k = int(round(t / self.tau))
        if abs(k * self.tau - t) > 1e-9 * max(1.0, self.b) or not 0 <= k <= self.n_steps:
            raise ParameterError(f"time {t} is not aligned with the grid (tau={self.tau})")
        return k

    def refined(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.b, self.n_steps * factor)


@dataclass(frozen=True)
class SpaceGrid:
    """Uniform grid of interior nodes. dim=0 is plain R^n with unit weights."""

    dim: int
    extent: tuple[float, ...]
    nodes: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.dim not in (0, 1, 2):
            raise ParameterError(f"space dimension must be 0, 1 or 2, got {self.dim}")
        if len(self.nodes) != max(self.dim, 1) or any(int(n) != n or n < 1 for n in self.nodes):
            raise ParameterError(f"invalid interior node counts {self.nodes}")
        if len(self.extent) != self.dim or any(not (e > 0) for e in self.extent):
            raise ParameterError(f"invalid extent {self.extent} for dim={self.dim}")

    @classmethod
    def euclidean(cls, n: int = 1) -> "SpaceGrid":
        return cls(0, (), (int(n),))

    @classmethod
    def interval(cls, length: float, nodes: int) -> "SpaceGrid":
        return cls(1, (float(length),), (int(nodes),))

    @classmethod
    def rectangle(cls, extent: tuple[float, float], nodes: tuple[int, int]) -> "SpaceGrid":
        return cls(2, (float(extent[0]), float(extent[1])), (int(nodes[0]), int(nodes[1])))

    @property
    def size(self) -> int:
        return int(np.prod(self.nodes))

    @property
    def h(self) -> tuple[float, ...]:
        return tuple(e / (n + 1) for e, n in zip(self.extent, self.nodes))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h)) if self.dim > 0 else 1.0

    @property
    def volume(self) -> float:
        return self.cell_volume * self.size

    def coordinates(self) -> np.ndarray:
        if self.dim == 0:
            return np.zeros((self.size, 0))
        axes = [(np.arange(n) + 1) * hk for n, hk in zip(self.nodes, self.h)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.size)


def as_state(values, space: SpaceGrid) -> np.ndarray:
    x = np.asarray(values, dtype=float).ravel()
    if x.shape[0] != space.size:
        raise DimensionError(f"state has {x.shape[0]} entries, grid has {space.size} interior nodes")
    if not np.all(np.isfinite(x)):
        raise DomainError("state contains non-finite entries")
    return x


@dataclass(frozen=True, eq=False)
class Trajectory:
    grid: TimeGrid
    space: SpaceGrid
    states: np.ndarray

    def __post_init__(self) -> None:
        shape = (self.grid.n_steps + 1, self.space.size)
        if self.states.shape != shape:
            raise DimensionError(f"trajectory states have shape {self.states.shape}, expected {shape}")

    @property
    def initial(self) -> np.ndarray:
        return self.states[0]

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def scaled(self, factor: float) -> "Trajectory":
        return Trajectory(self.grid, self.space, self.states * factor)


@dataclass(frozen=True, eq=False)
class ForcingPath:
    """Piecewise-constant forcing: values[k] acts on (t_k, t_{k+1}]."""

    grid: TimeGrid
    space: SpaceGrid
    values: np.ndarray
    controls: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        shape = (self.grid.n_steps, self.space.size)
        if self.values.shape != shape:
            raise DimensionError(f"forcing values have shape {self.values.shape}, expected {shape}")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("forcing contains non-finite entries")

    @classmethod
    def zeros(cls, grid: TimeGrid, space: SpaceGrid) -> "ForcingPath":
        return cls(grid, space, np.zeros((grid.n_steps, space.size)))

    @classmethod
    def constant(cls, grid: TimeGrid, space: SpaceGrid, value) -> "ForcingPath":
        row = np.broadcast_to(np.asarray(value, dtype=float), (space.size,))
        return cls(grid, space, np.tile(row, (grid.n_steps, 1)))

    @classmethod
    def from_function(
        cls, grid: TimeGrid, space: SpaceGrid, fn: Callable[[float, np.ndarray], np.ndarray]
    ) -> "ForcingPath":
        # sampled at right endpoints, matching the implicit step
        coords = space.coordinates()
        times = grid.times()[1:]
        rows = [np.broadcast_to(np.asarray(fn(float(t), coords), dtype=float), (space.size,)) for t in times]
        return cls(grid, space, np.array(rows))

    def at(self, t: float) -> np.ndarray:
        k = int(math.ceil(t / self.grid.tau - 1e-9)) - 1
        return self.values[min(max(k, 0), self.grid.n_steps - 1)]

    def _check_compatible(self, other: "ForcingPath") -> None:
        if self.grid != other.grid or self.space != other.space:
            raise DimensionError("forcing paths live on different grids")

    def __add__(self, other: "ForcingPath") -> "ForcingPath":
        self._check_compatible(other)
        return ForcingPath(self.grid, self.space, self.values + other.values)

    def __sub__(self, other: "ForcingPath") -> "ForcingPath":
        self._check_compatible(other)
        return ForcingPath(self.grid, self.space, self.values - other.values)

    def __mul__(self, factor: float) -> "ForcingPath":
        return ForcingPath(self.grid, self.space, self.values * float(factor))

    __rmul__ = __mul__


def inner(x: np.ndarray, y: np.ndarray, space: SpaceGrid) -> float:
    if x.shape[-1] != space.size or y.shape[-1] != space.size:
        raise DimensionError(f"expected vectors of length {space.size}")
    return float(space.cell_volume * np.dot(x, y))


def h_norm(x: np.ndarray, space: SpaceGrid) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != space.size:
        raise DimensionError(f"state has shape {x.shape}, grid has {space.size} interior nodes")
    return math.sqrt(space.cell_volume * float(np.dot(x, x)))


@lru_cache(maxsize=32)
def gradient_matrices(space: SpaceGrid) -> tuple[sp.csr_matrix, ...]:
    """One-sided difference operators per axis, zero extension at the boundary."""
    if space.dim == 0:
        return ()

    def diff(n: int, hk: float) -> sp.csr_matrix:
        return (sp.diags([1.0, -1.0], [0, -1], shape=(n + 1, n)) / hk).tocsr()

    if space.dim == 1:
        return (diff(space.nodes[0], space.h[0]),)
    nx, ny = space.nodes
    gx = sp.kron(diff(nx, space.h[0]), sp.identity(ny)).tocsr()
    gy = sp.kron(sp.identity(nx), diff(ny, space.h[1])).tocsr()
    return gx, gy


def discrete_gradient(x: np.ndarray, space: SpaceGrid) -> list[np.ndarray]:
    return [g @ x for g in gradient_matrices(space)]


def x_norm(x: np.ndarray, space: SpaceGrid, p: float) -> float:
    if p < 2:
        raise ParameterError(f"p must be >= 2, got {p}")
    if space.dim == 0:
        return h_norm(x, space)
    x = as_state(x, space)
    total = sum(float(np.sum(np.abs(g) ** p)) for g in discrete_gradient(x, space))
    return (space.cell_volume * total) ** (1.0 / p)


def sup_distance(u: Trajectory, v: Trajectory) -> float:
    if u.grid != v.grid or u.space != v.space:
        raise DimensionError("trajectories live on different grids")
    diff = u.states - v.states
    return float(np.sqrt(u.space.cell_volume * np.max(np.sum(diff * diff, axis=1))))


def _prefix_integrals(h: ForcingPath) -> np.ndarray:
    prefix = np.zeros((h.grid.n_steps + 1, h.space.size))
    np.cumsum(h.values * h.grid.tau, axis=0, out=prefix[1:])
    return prefix


_WEAK_NORM_BLOCK = 512


def weak_norm(h: ForcingPath) -> float:
    """max over grid pairs s <= t of |int_s^t h| in H."""
    prefix = _prefix_integrals(h)
    scale = math.sqrt(h.space.cell_volume)
    if h.space.size == 1:
        col = prefix[:, 0]
        return float(scale * (col.max() - col.min()))
    # |P_t - P_s| is symmetric in (s, t), so the sup is the diameter of the prefix points
    best = 0.0
    for start in range(0, prefix.shape[0], _WEAK_NORM_BLOCK):
        best = max(best, float(cdist(prefix[start : start + _WEAK_NORM_BLOCK], prefix).max()))
    return scale * best


def weak_norm_prefix(h: ForcingPath) -> float:
    """One-parameter variant: max over t of |int_0^t h|."""
    prefix = _prefix_integrals(h)
    return float(math.sqrt(h.space.cell_volume) * np.sqrt(np.max(np.sum(prefix * prefix, axis=1))))


def pointwise_norms(h: ForcingPath) -> np.ndarray:
    return np.sqrt(h.space.cell_volume * np.sum(h.values * h.values, axis=1))


def l1_norm(h: ForcingPath) -> float:
    return float(h.grid.tau * np.sum(pointwise_norms(h)))


def lp_norm(h: ForcingPath, q: float) -> float:
    if q < 1:
        raise ParameterError(f"exponent must be >= 1, got {q}")
    return float((h.grid.tau * np.sum(pointwise_norms(h) ** q)) ** (1.0 / q))


def hausdorff_finite(C, E) -> float:
    c = np.asarray(C, dtype=float)
    e = np.asarray(E, dtype=float)
    if c.size == 0 or e.size == 0:
        raise DomainError("Hausdorff distance needs two nonempty sets")
    c = c.reshape(-1, 1) if c.ndim <= 1 else c
    e = e.reshape(-1, 1) if e.ndim <= 1 else e
    if c.shape[1] != e.shape[1]:
        raise DimensionError(f"point dimensions differ: {c.shape[1]} vs {e.shape[1]}")
    d = cdist(c, e)
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def _rows_to_csv(times: np.ndarray, rows: np.ndarray) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t"] + [f"node_{i}" for i in range(rows.shape[1])])
    for t, row in zip(times, rows):
        writer.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])
    return buf.getvalue()


def trajectory_to_csv(traj: Trajectory) -> str:
    return _rows_to_csv(traj.grid.times(), traj.states)


def forcing_to_csv(h: ForcingPath) -> str:
    return _rows_to_csv(h.grid.times()[1:], h.values)
