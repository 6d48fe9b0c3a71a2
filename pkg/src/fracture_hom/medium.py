"""Discrete geometry, heterogeneous media, fields and cracks.

Displacements live on grid nodes, cracks live on grid edges.  A cracked
edge drops out of every gradient it participates in and is charged
``toughness * measure`` as surface energy.  Dirichlet conditions are
enforced through ghost edges: a Dirichlet node may be *released*, which
is bookkept like a cracked boundary face.

Node numbering in 2D is ``index = j * nx + i`` (``i`` along x).  Edges are
numbered x-edges first (row by row), then y-edges.  An x-edge has a
vertical dual face, hence normal ``e1``; a y-edge has normal ``e2``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np

FACES_1D = ("left", "right")
FACES_2D = ("left", "right", "bottom", "top")


def _frozen(arr, dtype=float) -> np.ndarray:
    out = np.array(arr, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform tensor grid on a box ``origin + [0, extents]``."""

    dimension: int
    extents: tuple[float, ...]
    counts: tuple[int, ...]
    dirichlet: tuple[int, ...] = ()
    origin: tuple[float, ...] = ()

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.dimension}")
        if len(self.extents) != self.dimension or len(self.counts) != self.dimension:
            raise ValueError("extents and counts must have one entry per axis")
        if any(c < 2 for c in self.counts):
            raise ValueError(f"node counts must be >= 2 per axis, got {self.counts}")
        if any(not (e > 0) for e in self.extents):
            raise ValueError(f"extents must be positive, got {self.extents}")
        if not self.origin:
            object.__setattr__(self, "origin", (0.0,) * self.dimension)
        d = tuple(sorted(set(int(k) for k in self.dirichlet)))
        bnd = set(self.boundary_nodes.tolist())
        if any(k not in bnd for k in d):
            raise ValueError("Dirichlet nodes must be boundary nodes")
        object.__setattr__(self, "dirichlet", d)

    # identity by value so grids can key caches
    def _key(self):
        return (self.dimension, self.extents, self.counts, self.dirichlet, self.origin)

    def __eq__(self, other):
        return isinstance(other, Grid) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(e / (c - 1) for e, c in zip(self.extents, self.counts))

    @property
    def h(self) -> float:
        """Largest cell size."""
        return max(self.spacing)

    @property
    def n_nodes(self) -> int:
        return math.prod(self.counts)

    @property
    def n_cells(self) -> int:
        return math.prod(c - 1 for c in self.counts)

    @property
    def n_edges(self) -> int:
        return len(self.edge_nodes)

    @property
    def n_dirichlet(self) -> int:
        return len(self.dirichlet)

    @cached_property
    def node_coords(self) -> np.ndarray:
        axes = [o + np.arange(c) * s for o, c, s in zip(self.origin, self.counts, self.spacing)]
        if self.dimension == 1:
            return _frozen(axes[0][:, None])
        X, Y = np.meshgrid(axes[0], axes[1], indexing="xy")
        return _frozen(np.column_stack([X.ravel(), Y.ravel()]))

    @cached_property
    def edge_nodes(self) -> np.ndarray:
        if self.dimension == 1:
            k = np.arange(self.counts[0] - 1)
            return _frozen(np.column_stack([k, k + 1]), int)
        nx, ny = self.counts
        idx = np.arange(nx * ny).reshape(ny, nx)
        ex = np.column_stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()])
        ey = np.column_stack([idx[:-1, :].ravel(), idx[1:, :].ravel()])
        return _frozen(np.vstack([ex, ey]), int)

    @cached_property
    def edge_axis(self) -> np.ndarray:
        """Axis of each edge, which is also the axis of its crack normal."""
        if self.dimension == 1:
            return _frozen(np.zeros(self.counts[0] - 1), int)
        nx, ny = self.counts
        return _frozen(np.r_[np.zeros((nx - 1) * ny), np.ones(nx * (ny - 1))], int)

    @cached_property
    def edge_midpoints(self) -> np.ndarray:
        c = self.node_coords
        e = self.edge_nodes
        return _frozen(0.5 * (c[e[:, 0]] + c[e[:, 1]]))

    @cached_property
    def edge_on_boundary(self) -> np.ndarray:
        if self.dimension == 1:
            return _frozen(np.zeros(self.n_edges, bool), bool)
        nx, ny = self.counts
        i, j = self.node_ij(self.edge_nodes[:, 0])
        i2, j2 = self.node_ij(self.edge_nodes[:, 1])
        on = ((j == 0) & (j2 == 0)) | ((j == ny - 1) & (j2 == ny - 1))
        on |= ((i == 0) & (i2 == 0)) | ((i == nx - 1) & (i2 == nx - 1))
        return _frozen(on, bool)

    @cached_property
    def edge_measure(self) -> np.ndarray:
        """Surface measure of each edge's dual face inside the domain."""
        if self.dimension == 1:
            return _frozen(np.ones(self.n_edges))
        hx, hy = self.spacing
        m = np.where(self.edge_axis == 0, hy, hx)
        return _frozen(np.where(self.edge_on_boundary, 0.5 * m, m))

    @cached_property
    def cell_centers(self) -> np.ndarray:
        axes = [o + (np.arange(c - 1) + 0.5) * s
                for o, c, s in zip(self.origin, self.counts, self.spacing)]
        if self.dimension == 1:
            return _frozen(axes[0][:, None])
        X, Y = np.meshgrid(axes[0], axes[1], indexing="xy")
        return _frozen(np.column_stack([X.ravel(), Y.ravel()]))

    @cached_property
    def cell_volume(self) -> float:
        return math.prod(self.spacing)

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        if self.dimension == 1:
            return _frozen([0, self.counts[0] - 1], int)
        nx, ny = self.counts
        i, j = self.node_ij(np.arange(nx * ny))
        return _frozen(np.flatnonzero((i == 0) | (i == nx - 1) | (j == 0) | (j == ny - 1)), int)

    def node_ij(self, k):
        nx = self.counts[0]
        k = np.asarray(k)
        return k % nx, k // nx

    def face_nodes(self, face: str) -> np.ndarray:
        if self.dimension == 1:
            if face not in FACES_1D:
                raise ValueError(f"unknown 1D face {face!r}")
            return np.array([0 if face == "left" else self.counts[0] - 1])
        if face not in FACES_2D:
            raise ValueError(f"unknown 2D face {face!r}")
        nx, ny = self.counts
        idx = np.arange(nx * ny).reshape(ny, nx)
        return {"left": idx[:, 0], "right": idx[:, -1],
                "bottom": idx[0, :], "top": idx[-1, :]}[face].copy()

    @cached_property
    def release_measure(self) -> np.ndarray:
        """Boundary measure carried by each Dirichlet node's ghost edge."""
        if self.dimension == 1:
            return _frozen(np.ones(self.n_dirichlet))
        dset = set(self.dirichlet)
        length = np.where(self.edge_axis == 0, self.spacing[0], self.spacing[1])
        out = []
        for k in self.dirichlet:
            inc = np.flatnonzero(((self.edge_nodes[:, 0] == k) | (self.edge_nodes[:, 1] == k))
                                 & self.edge_on_boundary)
            m = 0.0
            for e in inc:
                other = self.edge_nodes[e, 1] if self.edge_nodes[e, 0] == k else self.edge_nodes[e, 0]
                if other in dset:
                    m += 0.5 * length[e]
            if m == 0.0:
                m = 0.5 * length[inc].max()
            out.append(m)
        return _frozen(out)

    @cached_property
    def dirichlet_position(self) -> dict[int, int]:
        return {k: n for n, k in enumerate(self.dirichlet)}


def build_grid(dimension: int, extents: Sequence[float], counts: Sequence[int],
               dirichlet_spec: Iterable = (), origin: Sequence[float] | None = None,
               expect_evolution: bool = False) -> Grid:
    """Build a grid; ``dirichlet_spec`` mixes face names and node indices."""
    extents = tuple(float(e) for e in np.atleast_1d(extents))
    counts = tuple(int(c) for c in np.atleast_1d(counts))
    if len(extents) != dimension or len(counts) != dimension:
        raise ValueError("extents and counts must have one entry per axis")
    if any(not (e > 0) for e in extents):
        raise ValueError(f"extents must be positive, got {extents}")
    if any(c < 2 for c in counts):
        raise ValueError(f"node counts must be >= 2 per axis, got {counts}")
    origin = tuple(float(o) for o in origin) if origin is not None else (0.0,) * dimension
    probe = Grid(dimension, extents, counts, (), origin)
    nodes: set[int] = set()
    for item in dirichlet_spec:
        if isinstance(item, str):
            nodes.update(int(k) for k in probe.face_nodes(item))
        else:
            nodes.add(int(item))
    if expect_evolution and not nodes:
        warnings.warn("empty Dirichlet set: every evolution will be trivial", stacklevel=2)
    return Grid(dimension, extents, counts, tuple(sorted(nodes)), origin)


@dataclass(frozen=True, eq=False)
class Medium:
    """Bulk density ``a(x)|xi|^p`` per cell and toughness per edge.

    ``boundary_toughness`` is the toughness of each Dirichlet node's ghost
    edge; it defaults to the smallest toughness among the node's edges.
    """

    bulk: np.ndarray
    toughness: np.ndarray
    alpha: float
    beta: float
    p: float = 2.0
    boundary_toughness: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "bulk", _frozen(self.bulk))
        object.__setattr__(self, "toughness", _frozen(self.toughness))
        if not (0 < self.alpha <= self.beta):
            raise ValueError(f"need 0 < alpha <= beta, got {self.alpha}, {self.beta}")
        if self.p < 1:
            raise ValueError(f"growth exponent p must be >= 1, got {self.p}")
        self._check_bounds("bulk", self.bulk)
        self._check_bounds("toughness", self.toughness)
        if self.boundary_toughness is not None:
            object.__setattr__(self, "boundary_toughness", _frozen(self.boundary_toughness))
            self._check_bounds("boundary toughness", self.boundary_toughness)

    def _check_bounds(self, name, arr):
        # relative slack absorbs the rounding of scaled media
        lo, hi = self.alpha * (1 - 1e-12), self.beta * (1 + 1e-12)
        if arr.size and (arr.min() < lo or arr.max() > hi or not np.all(np.isfinite(arr))):
            raise ValueError(f"{name} values must lie in [{self.alpha}, {self.beta}], "
                             f"got range [{arr.min()}, {arr.max()}]")

    def check_grid(self, grid: Grid) -> None:
        if self.bulk.shape != (grid.n_cells,):
            raise ValueError(f"bulk has {self.bulk.shape} entries, grid has {grid.n_cells} cells")
        if self.toughness.shape != (grid.n_edges,):
            raise ValueError(f"toughness has {self.toughness.shape} entries, grid has {grid.n_edges} edges")
        if self.boundary_toughness is not None and self.boundary_toughness.shape != (grid.n_dirichlet,):
            raise ValueError("boundary_toughness needs one value per Dirichlet node")

    def release_toughness(self, grid: Grid) -> np.ndarray:
        if self.boundary_toughness is not None:
            return self.boundary_toughness
        en = grid.edge_nodes
        out = np.empty(grid.n_dirichlet)
        for n, k in enumerate(grid.dirichlet):
            inc = (en[:, 0] == k) | (en[:, 1] == k)
            out[n] = self.toughness[inc].min()
        return out

    def scaled(self, bulk_factor: float = 1.0, toughness_factor: float = 1.0) -> "Medium":
        lo = min(bulk_factor, toughness_factor)
        hi = max(bulk_factor, toughness_factor)
        bt = None if self.boundary_toughness is None else self.boundary_toughness * toughness_factor
        return Medium(self.bulk * bulk_factor, self.toughness * toughness_factor,
                      self.alpha * lo, self.beta * hi, self.p, bt)

    @classmethod
    def constant(cls, grid: Grid, bulk: float = 1.0, toughness: float = 1.0, p: float = 2.0):
        lo, hi = min(bulk, toughness), max(bulk, toughness)
        return cls(np.full(grid.n_cells, float(bulk)), np.full(grid.n_edges, float(toughness)),
                   lo, hi, p)


# -- unit cells -----------------------------------------------------------

@dataclass(frozen=True)
class CellField:
    """A 1-periodic scalar field on the unit cell ``[0, 1)^d``.

    kinds: ``constant`` (values[0]), ``layered`` (piecewise constant in
    coordinate ``axis`` with breakpoints ``fractions``), ``checkerboard``
    (values[0] where the two half-indices agree, values[1] elsewhere),
    ``table`` (piecewise constant on a uniform array ``table``).
    """

    kind: str
    values: tuple[float, ...] = (1.0,)
    axis: int = 0
    fractions: tuple[float, ...] = ()
    table: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "layered", "checkerboard", "table"):
            raise ValueError(f"unknown cell field kind {self.kind!r}")
        if self.kind == "layered":
            fr = self.fractions or tuple(np.arange(1, len(self.values)) / len(self.values))
            if len(fr) != len(self.values) - 1 or any(np.diff((0.0,) + tuple(fr) + (1.0,)) <= 0):
                raise ValueError("layered field needs len(values)-1 increasing breakpoints in (0,1)")
            object.__setattr__(self, "fractions", tuple(float(f) for f in fr))
        if self.kind == "checkerboard" and len(self.values) != 2:
            raise ValueError("checkerboard needs exactly two values")
        if self.kind == "table":
            if self.table is None:
                raise ValueError("table field needs an array")
            object.__setattr__(self, "table", _frozen(self.table))

    def __call__(self, y: np.ndarray) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, float))
        # snap to the lattice of representable cell coordinates before wrapping
        y = np.mod(np.round(y, 12), 1.0)
        if self.kind == "constant":
            return np.full(len(y), float(self.values[0]))
        if self.kind == "layered":
            k = np.searchsorted(np.asarray(self.fractions), y[:, self.axis], side="right")
            return np.asarray(self.values, float)[k]
        if self.kind == "checkerboard":
            parity = np.sum(np.floor(2 * y).astype(int), axis=1) % 2
            return np.where(parity == 0, self.values[0], self.values[1]).astype(float)
        t = self.table
        shape = t.shape
        if t.ndim == 1:
            return t[np.minimum((y[:, 0] * shape[0]).astype(int), shape[0] - 1)]
        # table rows index y, columns index x
        ix = np.minimum((y[:, 0] * shape[1]).astype(int), shape[1] - 1)
        iy = np.minimum((y[:, 1] * shape[0]).astype(int), shape[0] - 1)
        return t[iy, ix]

    @property
    def bounds(self) -> tuple[float, float]:
        v = np.asarray(self.table if self.kind == "table" else self.values, float)
        if self.kind == "constant":
            v = v[:1]
        return float(v.min()), float(v.max())

    def scaled(self, c: float) -> "CellField":
        if self.kind == "table":
            return CellField("table", table=self.table * c)
        return CellField(self.kind, tuple(c * v for v in self.values), self.axis, self.fractions)


@dataclass(frozen=True)
class UnitCell:
    """Periodic microstructure: bulk coefficient and toughness on the unit cell."""

    dimension: int
    bulk: CellField
    toughness: CellField
    p: float = 2.0

    @property
    def alpha(self) -> float:
        return min(self.bulk.bounds[0], self.toughness.bounds[0])

    @property
    def beta(self) -> float:
        return max(self.bulk.bounds[1], self.toughness.bounds[1])

    def scaled(self, bulk_factor: float = 1.0, toughness_factor: float = 1.0) -> "UnitCell":
        return UnitCell(self.dimension, self.bulk.scaled(bulk_factor),
                        self.toughness.scaled(toughness_factor), self.p)


@dataclass(frozen=True)
class PeriodicMedium:
    cell: UnitCell
    eps: float

    def __post_init__(self):
        if not (self.eps > 0):
            raise ValueError(f"eps must be positive, got {self.eps}")


def sample_periodic(pm: PeriodicMedium, grid: Grid) -> Medium:
    """Sample ``a(x/eps)`` at cell centers and ``kappa(x/eps)`` at edge midpoints."""
    if pm.cell.dimension != grid.dimension:
        raise ValueError("unit cell and grid dimensions differ")
    a = pm.cell.bulk(grid.cell_centers / pm.eps)
    k = pm.cell.toughness(grid.edge_midpoints / pm.eps)
    return Medium(a, k, pm.cell.alpha, pm.cell.beta, pm.cell.p)


# -- fields, cracks, energies --------------------------------------------

@dataclass(frozen=True, eq=False)
class ScalarField:
    """Nodal values plus the edges across which the field may jump."""

    values: np.ndarray
    open_edges: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))

    def jump_edges(self, grid: Grid, tol: float = 0.0) -> frozenset:
        """Open edges across which the values actually differ."""
        if not self.open_edges:
            return frozenset()
        e = np.array(sorted(self.open_edges))
        d = np.abs(self.values[grid.edge_nodes[e, 1]] - self.values[grid.edge_nodes[e, 0]])
        return frozenset(int(x) for x in e[d > tol])


@dataclass(frozen=True)
class EnergyBreakdown:
    bulk: float
    surface: float

    @property
    def total(self) -> float:
        return self.bulk + self.surface


@dataclass(frozen=True)
class CrackState:
    """Cracked edges and released Dirichlet nodes with cached surface energy.

    Crack *elements* number edges ``0..E-1`` and the ghost edge of the
    ``k``-th Dirichlet node as ``E + k``; this is also the lexicographic
    order used for tie-breaking.
    """

    edges: frozenset = frozenset()
    released: frozenset = frozenset()
    surface_energy: float = 0.0
    path: tuple = ()

    @classmethod
    def build(cls, grid: Grid, medium: Medium, edges=(), released=(), path=()) -> "CrackState":
        edges = frozenset(int(e) for e in edges)
        released = frozenset(int(k) for k in released)
        return cls(edges, released, surface_energy(grid, medium, edges, released), tuple(path))

    @classmethod
    def from_elements(cls, grid: Grid, medium: Medium, elements, path=()) -> "CrackState":
        E = grid.n_edges
        el = [int(x) for x in elements]
        return cls.build(grid, medium, [x for x in el if x < E],
                         [grid.dirichlet[x - E] for x in el if x >= E], path)

    def elements(self, grid: Grid) -> tuple[int, ...]:
        pos = grid.dirichlet_position
        return tuple(sorted(self.edges) + sorted(grid.n_edges + pos[k] for k in self.released))

    def __le__(self, other: "CrackState") -> bool:
        return self.edges <= other.edges and self.released <= other.released

    @property
    def size(self) -> int:
        return len(self.edges) + len(self.released)

    def check(self, grid: Grid, medium: Medium, rtol: float = 1e-12) -> None:
        s = surface_energy(grid, medium, self.edges, self.released)
        if abs(s - self.surface_energy) > rtol * max(1.0, abs(s)):
            raise AssertionError(f"cached surface energy {self.surface_energy} != recomputed {s}")


def element_costs(grid: Grid, medium: Medium) -> np.ndarray:
    """Surface cost ``toughness * measure`` of every crack element."""
    return np.r_[medium.toughness * grid.edge_measure,
                 medium.release_toughness(grid) * grid.release_measure]


def surface_energy(grid: Grid, medium: Medium, edges, released=()) -> float:
    cost = element_costs(grid, medium)
    pos = grid.dirichlet_position
    idx = sorted(int(e) for e in edges) + sorted(grid.n_edges + pos[int(k)] for k in released)
    return math.fsum(cost[idx]) if idx else 0.0


# -- boundary data --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BoundaryDatum:
    """Dirichlet values ``values[i, k]`` at time ``times[i]`` on Dirichlet node ``k``.

    ``profile`` is set for ramps ``psi(t) = profile * t``; it is then also
    the exact time derivative.
    """

    times: np.ndarray
    values: np.ndarray
    bound: float
    profile: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "times", _frozen(self.times))
        object.__setattr__(self, "values", _frozen(np.atleast_2d(self.values)))
        if self.times.ndim != 1 or len(self.times) < 1:
            raise ValueError("time grid must be a non-empty 1-D array")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("time grid must be strictly increasing")
        if self.values.shape[0] != len(self.times):
            raise ValueError("need one row of boundary values per time")
        if self.values.size and np.abs(self.values).max() > self.bound * (1 + 1e-12):
            raise ValueError(f"boundary datum exceeds declared bound {self.bound}")
        if self.profile is not None:
            object.__setattr__(self, "profile", _frozen(self.profile))

    @classmethod
    def ramp(cls, grid: Grid, profile, times, bound: float | None = None) -> "BoundaryDatum":
        """``profile`` is an array over Dirichlet nodes or a callable of node coordinates."""
        if callable(profile):
            prof = np.asarray(profile(grid.node_coords[list(grid.dirichlet)]), float).reshape(-1)
        else:
            prof = np.asarray(profile, float).reshape(-1)
        if prof.shape != (grid.n_dirichlet,):
            raise ValueError("ramp profile needs one value per Dirichlet node")
        times = np.asarray(times, float)
        vals = times[:, None] * prof[None, :]
        if bound is None:
            bound = float(np.abs(vals).max()) if vals.size else 0.0
        return cls(times, vals, bound, prof)

    @classmethod
    def uniform_ramp(cls, grid: Grid, profile, t_end: float, dt: float, bound=None):
        n = int(round(t_end / dt))
        return cls.ramp(grid, profile, np.arange(n + 1) * dt, bound)

    @property
    def n_steps(self) -> int:
        return len(self.times)

    @property
    def max_step(self) -> float:
        return float(np.diff(self.times).max()) if len(self.times) > 1 else 0.0

    def rate(self, i: int) -> np.ndarray:
        """Time derivative of the datum at step ``i`` (backward difference)."""
        if self.profile is not None:
            return self.profile.copy()
        if len(self.times) == 1:
            return np.zeros(self.values.shape[1])
        j = max(i, 1)
        return (self.values[j] - self.values[j - 1]) / (self.times[j] - self.times[j - 1])


def profile_from_faces(grid: Grid, face_values: dict[str, float], default: float = 0.0):
    """Ramp profile taking a constant value on each named face."""
    prof = {k: default for k in grid.dirichlet}
    for face, v in face_values.items():
        for k in grid.face_nodes(face):
            if int(k) in prof:
                prof[int(k)] = float(v)
    return np.array([prof[k] for k in grid.dirichlet])


def linear_profile(slope: Sequence[float]) -> Callable[[np.ndarray], np.ndarray]:
    s = np.asarray(slope, float)
    return lambda x: np.asarray(x) @ s


@dataclass(frozen=True)
class RampSpec:
    """Grid-independent ramp: face values (or a linear slope) times ``t`` on a uniform time grid.

    Exactly one of ``faces`` and ``slope`` is used; ``faces`` wins when both
    are given.  Kept as plain data so it can be shipped to worker processes.
    """

    t_end: float
    dt: float
    faces: tuple = ()          # ((face name, value), ...)
    slope: tuple = ()

    def build(self, grid: Grid) -> BoundaryDatum:
        if self.faces:
            prof = profile_from_faces(grid, dict(self.faces))
        elif self.slope:
            prof = linear_profile(self.slope)
        else:
            raise ValueError("ramp needs face values or a slope")
        return BoundaryDatum.uniform_ramp(grid, prof, self.t_end, self.dt)

    def direction(self, dimension: int) -> np.ndarray:
        """Unit direction of the gradient the ramp imposes on a homogeneous body."""
        if self.slope:
            v = np.asarray(self.slope, float)
        else:
            f = dict(self.faces)
            v = np.array([f.get("right", 0.0) - f.get("left", 0.0),
                          f.get("top", 0.0) - f.get("bottom", 0.0)][:dimension])
        n = np.linalg.norm(v)
        if n == 0:
            v, n = np.eye(dimension)[0], 1.0
        return v / n
