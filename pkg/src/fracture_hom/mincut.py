"""Crack-discounted surface functionals via minimum cuts.

A two-valued field on a window is a graph cut; its discounted perimeter is
the total weight of cut edges, with edges on the current crack weighing
zero.  Minimizing over fields that equal 1 on one side of the window and
0 on the opposite side gives a min-cut problem, whose cost per unit
cross-section estimates the relaxed density ``h^-(x, nu)``.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order, maximum_flow

from .medium import Grid, build_grid

FLOW_SCALE = 2 ** 20
INT32_MAX = 2 ** 31 - 1


@dataclass(frozen=True, eq=False)
class CutProblem:
    n_nodes: int
    edge_nodes: np.ndarray
    weights: np.ndarray
    source: np.ndarray
    sink: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, float)
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("cut weights must be finite and nonnegative")
        if np.intersect1d(self.source, self.sink).size:
            raise ValueError("source and sink overlap")


@dataclass(frozen=True, eq=False)
class CutResult:
    cost: float               # sum of float weights over the cut edges
    cut_edges: np.ndarray
    source_side: np.ndarray   # boolean per node
    flow_value: float         # integer max-flow value / scale
    flow_int: int
    cut_int: int
    scale: int
    degenerate: bool = False  # empty source or sink

    @property
    def exact(self) -> bool:
        """Integer duality certificate: max-flow value equals cut capacity."""
        return self.flow_int == self.cut_int

    @property
    def gap(self) -> float:
        return abs(self.cost - self.flow_value) / max(abs(self.cost), 1e-300) if self.cost else abs(self.flow_value)


def min_cut(problem: CutProblem, scale: int = FLOW_SCALE) -> CutResult:
    """Minimum source/sink cut with a max-flow certificate.

    Weights are scaled to integers (``round(w * scale)``) for the flow
    computation; the reported ``cost`` sums the unscaled weights of the
    returned cut.  The scale is halved until capacities fit in int32.
    """
    en = np.asarray(problem.edge_nodes, int).reshape(-1, 2)
    w = np.asarray(problem.weights, float)
    N = problem.n_nodes
    src = np.unique(np.asarray(problem.source, int))
    snk = np.unique(np.asarray(problem.sink, int))
    if len(src) == 0 or len(snk) == 0:
        side = np.zeros(N, bool)
        side[src] = True
        return CutResult(0.0, np.zeros(0, int), side, 0.0, 0, 0, scale, degenerate=True)
    while scale > 1 and round(w.sum() * scale) > INT32_MAX:
        scale //= 2
    wi = np.rint(w * scale).astype(np.int64)

    # contract each terminal set to one vertex: S = 0, T = 1
    label = np.full(N, -1, np.int64)
    label[src] = 0
    label[snk] = 1
    others = np.flatnonzero(label < 0)
    label[others] = np.arange(2, 2 + len(others))
    a, b = label[en[:, 0]], label[en[:, 1]]
    keep = (a != b) & (wi > 0)
    M = 2 + len(others)
    rows = np.r_[a[keep], b[keep]]
    cols = np.r_[b[keep], a[keep]]
    caps = np.r_[wi[keep], wi[keep]]
    G = sp.csr_matrix((caps, (rows, cols)), shape=(M, M), dtype=np.int64)
    G.sum_duplicates()
    if G.data.size and G.data.max() > INT32_MAX:
        raise OverflowError("edge capacity exceeds int32 after scaling")
    G = G.astype(np.int32)
    res = maximum_flow(G, 0, 1, method="dinic")
    F = res.flow.tocsr().astype(np.int64)
    R = (G.astype(np.int64) - F).tocsr()
    R.data[R.data < 0] = 0
    R.eliminate_zeros()
    reach = breadth_first_order(R, 0, directed=True, return_predecessors=False)
    side_c = np.zeros(M, bool)
    side_c[reach] = True
    side = side_c[label]
    cut = np.flatnonzero(side[en[:, 0]] != side[en[:, 1]])
    cost = math.fsum(w[cut])
    return CutResult(cost, cut, side, int(res.flow_value) / scale, int(res.flow_value),
                     int(wi[cut].sum()), scale)


# -- grid windows and crack rasterization ---------------------------------

Segment = tuple  # (x0, y0, x1, y1), axis aligned


def rasterize(grid: Grid, segments: Iterable[Segment], tol: float = 1e-9) -> np.ndarray:
    """Edges whose dual faces make up a union of axis-aligned segments.

    A horizontal segment at height ``y`` lives on the dual line of the row
    gap containing ``y`` and covers y-edges whose node x lies in
    ``[x0, x1)``, closed on the right when ``x1`` is the domain boundary;
    vertical segments are handled symmetrically with x-edges.
    """
    if grid.dimension != 2:
        raise ValueError("rasterization needs a 2D grid")
    nx, ny = grid.counts
    hx, hy = grid.spacing
    ox, oy = grid.origin
    n_ex = (nx - 1) * ny
    out: set[int] = set()
    for x0, y0, x1, y1 in segments:
        if abs(y1 - y0) <= tol:  # horizontal: cuts y-edges
            j = int(math.floor((y0 - oy) / hy + tol))
            if not 0 <= j < ny - 1:
                continue
            lo, hi = min(x0, x1), max(x0, x1)
            xs = ox + np.arange(nx) * hx
            top = hi + tol if hi >= xs[-1] - tol else hi - tol
            cols = np.flatnonzero((xs >= lo - tol) & (xs < top))
            out.update((n_ex + j * nx + cols).tolist())
        elif abs(x1 - x0) <= tol:  # vertical: cuts x-edges
            i = int(math.floor((x0 - ox) / hx + tol))
            if not 0 <= i < nx - 1:
                continue
            lo, hi = min(y0, y1), max(y0, y1)
            ys = oy + np.arange(ny) * hy
            top = hi + tol if hi >= ys[-1] - tol else hi - tol
            rows = np.flatnonzero((ys >= lo - tol) & (ys < top))
            out.update((rows * (nx - 1) + i).tolist())
        else:
            raise ValueError(f"segment {(x0, y0, x1, y1)} is not axis aligned")
    return np.array(sorted(out), int)


@dataclass(frozen=True)
class Window:
    """Node index box ``[i0, i1] x [j0, j1]`` of a parent grid."""

    i0: int
    i1: int
    j0: int
    j1: int

    @classmethod
    def around(cls, grid: Grid, center, rho: float) -> "Window":
        hx, hy = grid.spacing
        if rho < 4 * max(hx, hy):
            raise ValueError(f"window radius rho={rho} is below 4h={4 * max(hx, hy)}")
        ox, oy = grid.origin
        nx, ny = grid.counts
        i0 = int(round((center[0] - rho - ox) / hx))
        i1 = int(round((center[0] + rho - ox) / hx))
        j0 = int(round((center[1] - rho - oy) / hy))
        j1 = int(round((center[1] + rho - oy) / hy))
        if i0 < 0 or j0 < 0 or i1 > nx - 1 or j1 > ny - 1:
            raise ValueError(f"window of radius {rho} around {tuple(center)} leaves the grid")
        return cls(i0, i1, j0, j1)

    def local_grid(self, grid: Grid) -> Grid:
        hx, hy = grid.spacing
        ox, oy = grid.origin
        return Grid(2, ((self.i1 - self.i0) * hx, (self.j1 - self.j0) * hy),
                    (self.i1 - self.i0 + 1, self.j1 - self.j0 + 1), (),
                    (ox + self.i0 * hx, oy + self.j0 * hy))

    def global_edges(self, grid: Grid) -> np.ndarray:
        """Parent edge id of every local edge, in local edge order."""
        nx, ny = grid.counts
        n_ex = (nx - 1) * ny
        ii, jj = np.meshgrid(np.arange(self.i0, self.i1), np.arange(self.j0, self.j1 + 1), indexing="xy")
        ex = jj.ravel() * (nx - 1) + ii.ravel()
        ii, jj = np.meshgrid(np.arange(self.i0, self.i1 + 1), np.arange(self.j0, self.j1), indexing="xy")
        ey = n_ex + jj.ravel() * nx + ii.ravel()
        return np.r_[ex, ey]


def window_problem(grid: Grid, window: Window, axis: int, discount=(), toughness=None):
    """Cut problem separating the two window sides normal to ``axis``.

    ``axis = 1`` (normal e2) separates top from bottom; ``axis = 0``
    separates left from right.  Returns ``(problem, cross_section)``.
    """
    loc = window.local_grid(grid)
    gids = window.global_edges(grid)
    kappa = np.ones(grid.n_edges) if toughness is None else np.asarray(toughness, float)
    w = kappa[gids] * loc.edge_measure
    disc = np.zeros(grid.n_edges, bool)
    disc[np.asarray(discount, int)] = True
    w = np.where(disc[gids], 0.0, w)
    if axis == 1:
        src, snk = loc.face_nodes("top"), loc.face_nodes("bottom")
        cross = loc.extents[0]
    elif axis == 0:
        src, snk = loc.face_nodes("left"), loc.face_nodes("right")
        cross = loc.extents[1]
    else:
        raise ValueError("probe directions are axis normals only (axis 0 or 1)")
    return CutProblem(loc.n_nodes, loc.edge_nodes, w, src, snk), cross


def surface_functional(grid: Grid, u, discount=(), toughness=None, window: Window | None = None) -> float:
    """Discounted, toughness-weighted jump measure of a two-valued field."""
    u = np.asarray(u, float)
    if window is not None:
        loc = window.local_grid(grid)
        gids = window.global_edges(grid)
        nx = grid.counts[0]
        ii, jj = np.meshgrid(np.arange(window.i0, window.i1 + 1), np.arange(window.j0, window.j1 + 1), indexing="xy")
        vals = u[(jj * nx + ii).ravel()]
        en, meas = loc.edge_nodes, loc.edge_measure
    else:
        gids = np.arange(grid.n_edges)
        vals, en, meas = u, grid.edge_nodes, grid.edge_measure
    if len(np.unique(vals)) > 2:
        raise ValueError("surface functional needs a two-valued field")
    kappa = np.ones(grid.n_edges) if toughness is None else np.asarray(toughness, float)
    disc = np.zeros(grid.n_edges, bool)
    disc[np.asarray(discount, int)] = True
    jump = (vals[en[:, 0]] != vals[en[:, 1]]) & ~disc[gids]
    return math.fsum((kappa[gids] * meas)[jump])


# -- crack sequences -------------------------------------------------------

@dataclass(frozen=True)
class SequenceDescriptor:
    """Named generator of crack sets ``K_n`` in ``(-1, 1)^2``.

    kinds: ``teeth`` (vertical teeth ``{i/n} x [-1/n, 1/n]``), ``fraction``
    (segments covering a fraction ``a`` of the midline), ``fixed-line``
    (the midline for every n), ``edges`` (a fixed explicit edge list).
    """

    kind: str
    a: float = 0.5
    edges: tuple = ()

    def segments(self, n: int) -> list:
        if self.kind == "teeth":
            return [(i / n, -1 / n, i / n, 1 / n) for i in range(-n, n + 1)]
        if self.kind == "fraction":
            return [(i / n, 0.0, i / n + self.a / n, 0.0) for i in range(-n, n)]
        if self.kind == "fixed-line":
            return [(-1.0, 0.0, 1.0, 0.0)]
        if self.kind == "edges":
            return []
        raise ValueError(f"unknown sequence kind {self.kind!r}")

    def crack_edges(self, grid: Grid, n: int) -> np.ndarray:
        if self.kind == "edges":
            return np.array(sorted(self.edges), int)
        return rasterize(grid, self.segments(n))

    @property
    def name(self) -> str:
        return f"fraction({self.a:g})" if self.kind == "fraction" else self.kind


@dataclass(frozen=True)
class SigmaProbeReport:
    generator: str
    n: int
    center: tuple
    rho: float
    axis: int
    density: float


def diagonal_n(rho: float) -> int:
    return int(math.ceil(1.0 / rho ** 2 - 1e-9))


def probe_density(grid: Grid, descriptor: SequenceDescriptor, n: int, center, rho: float,
                  axis: int, toughness=None) -> float:
    win = Window.around(grid, center, rho)
    prob, cross = window_problem(grid, win, axis, descriptor.crack_edges(grid, n), toughness)
    return min_cut(prob).cost / cross


def _probe_task(args):
    grid, desc, n, center, rho, axis, tough = args
    return SigmaProbeReport(desc.name, n, tuple(center), rho, axis,
                            probe_density(grid, desc, n, center, rho, axis, tough))


def sigma_probe(grid: Grid, descriptor: SequenceDescriptor, centers: Sequence, radii: Sequence[float],
                n_list: Sequence[int] = (), axes: Sequence[int] = (1,), toughness=None,
                diagonal: bool = True, jobs: int = 1) -> list[SigmaProbeReport]:
    """Density estimates for every (center, radius, axis, n).

    With ``diagonal`` each radius is also probed at ``n = ceil(1/rho^2)``.
    Output order is deterministic whatever ``jobs`` is.
    """
    for rho in radii:
        if rho < 4 * grid.h:
            raise ValueError(f"window radius rho={rho} is below 4h={4 * grid.h}")
    tasks = []
    for c in centers:
        for rho in radii:
            ns = sorted(set(int(n) for n in n_list) | ({diagonal_n(rho)} if diagonal else set()))
            for ax in axes:
                for n in ns:
                    tasks.append((grid, descriptor, n, tuple(float(x) for x in c), float(rho), int(ax), toughness))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_probe_task, tasks))
    return [_probe_task(t) for t in tasks]


def classify(reports: Sequence[SigmaProbeReport], alpha: float = 1.0, tau_factor: float = 0.05):
    """Mark ``(center, axis)`` as in the sigma-limit when the diagonal
    estimate at the smallest radius falls below ``tau = 0.05 * alpha``."""
    tau = tau_factor * alpha
    best: dict = {}
    for r in reports:
        if r.n != diagonal_n(r.rho):
            continue
        key = (r.center, r.axis)
        if key not in best or r.rho < best[key].rho:
            best[key] = r
    return {k: v.density < tau for k, v in sorted(best.items())}


def default_probe_grid(count: int = 513) -> Grid:
    """Grid on the reference window ``(-1, 1)^2``."""
    return build_grid(2, (2.0, 2.0), (count, count), (), origin=(-1.0, -1.0))
