"""Bulk minimization for a fixed crack.

The bulk energy ``sum_cells a |grad u|^p`` is discretized with corner
gradients: each 2D cell contributes four quadrature points, each built
from one x-edge difference and one y-edge difference of the cell, with
weight ``a * |cell| / 4``.  For ``p = 2`` this is exactly the weighted
graph Laplacian; for other ``p`` the density stays isotropic in the
gradient.  A cracked edge contributes zero to every gradient it enters.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .medium import CrackState, Grid, Medium, ScalarField

NEWTON_TOL = 1e-10
NEWTON_MAXITER = 200


class ConvergenceError(RuntimeError):
    """Inner convex solver did not reach its stopping tolerance."""

    def __init__(self, msg, residual):
        super().__init__(f"{msg} (residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True, eq=False)
class GradientOperators:
    ops: tuple            # one sparse (Q x N) difference operator per axis
    q_cell: np.ndarray    # cell of each quadrature point
    q_edge: np.ndarray    # (Q, dim) edge used for each gradient component
    geom_weight: np.ndarray

    @property
    def n_quad(self) -> int:
        return len(self.q_cell)


def _difference_op(edge_nodes, q_edge_d, h, n_nodes):
    Q = len(q_edge_d)
    rows = np.repeat(np.arange(Q), 2)
    cols = edge_nodes[q_edge_d].ravel()
    vals = np.tile([-1.0 / h, 1.0 / h], Q)
    return sp.csr_matrix((vals, (rows, cols)), shape=(Q, n_nodes))


def corner_quadrature(nx: int, ny: int, periodic: bool = False):
    """Per-cell corner combinations of x-edges and y-edges.

    Returns ``(q_cell, q_edge)`` for a grid whose x-edges are numbered
    row-major first and y-edges after them.  With ``periodic`` the grid
    wraps in both directions and has ``nx * ny`` cells.
    """
    cx, cy = (nx, ny) if periodic else (nx - 1, ny - 1)
    ex_row = nx if periodic else nx - 1
    n_ex = ex_row * ny
    ci, cj = np.meshgrid(np.arange(cx), np.arange(cy), indexing="xy")
    ci, cj = ci.ravel(), cj.ravel()
    jt = (cj + 1) % ny if periodic else cj + 1
    it = (ci + 1) % nx if periodic else ci + 1
    bottom = cj * ex_row + ci
    top = jt * ex_row + ci
    left = n_ex + cj * nx + ci
    right = n_ex + cj * nx + it
    cells = np.arange(cx * cy)
    q_cell = np.repeat(cells, 4)
    q_edge = np.stack([np.column_stack([bottom, left]), np.column_stack([bottom, right]),
                       np.column_stack([top, left]), np.column_stack([top, right])], axis=1)
    return q_cell, q_edge.reshape(-1, 2)


@lru_cache(maxsize=32)
def gradient_operators(grid: Grid) -> GradientOperators:
    en = grid.edge_nodes
    if grid.dimension == 1:
        q_cell = np.arange(grid.n_cells)
        q_edge = q_cell[:, None]
        geom = np.full(grid.n_cells, grid.cell_volume)
    else:
        q_cell, q_edge = corner_quadrature(*grid.counts)
        geom = np.full(len(q_cell), grid.cell_volume / 4)
    ops = tuple(_difference_op(en, q_edge[:, d], grid.spacing[d], grid.n_nodes)
                for d in range(grid.dimension))
    return GradientOperators(ops, q_cell, q_edge, geom)


# -- convex core ----------------------------------------------------------

def _energy_terms(ops, mask, weights, p, u, offset):
    g = np.column_stack([op @ u for op in ops]) * mask
    if offset is not None:
        g = g + offset
    n = np.sqrt(np.einsum("qd,qd->q", g, g))
    return g, n, float(math.fsum(weights * n ** p))


def _laplacian(ops, mask, weights):
    L = None
    for d, op in enumerate(ops):
        term = op.T @ sp.diags(weights * mask[:, d]) @ op
        L = term if L is None else L + term
    L = L.tocsr()
    # csgraph treats stored zeros as edges
    L.eliminate_zeros()
    return L


_FACTOR_CACHE: "OrderedDict" = OrderedDict()
_FACTOR_CACHE_SIZE = 8


def _factorization(ops, mask, weights, fixed):
    """Laplacian, component labels, free nodes and LU factor, memoized on the inputs."""
    key = (id(ops), mask.tobytes(), weights.tobytes(), fixed.tobytes())
    hit = _FACTOR_CACHE.get(key)
    if hit is not None and hit[0] is ops:
        _FACTOR_CACHE.move_to_end(key)
        return hit[1:]
    N = ops[0].shape[1]
    L = _laplacian(ops, mask, weights)
    ncomp, labels = connected_components(L, directed=False)
    anchored = np.zeros(ncomp, bool)
    anchored[labels[fixed]] = True
    is_fixed = np.zeros(N, bool)
    is_fixed[fixed] = True
    free = np.flatnonzero(anchored[labels] & ~is_fixed)
    Lfx = L[free][:, fixed] if len(free) else None
    lu = splu(L[free][:, free].tocsc()) if len(free) else None
    out = (ncomp, labels, anchored, free, Lfx, lu)
    _FACTOR_CACHE[key] = (ops,) + out
    if len(_FACTOR_CACHE) > _FACTOR_CACHE_SIZE:
        _FACTOR_CACHE.popitem(last=False)
    return out


def minimize_energy(ops, mask, weights, p, fixed, fixed_values, offset=None,
                    fill=None, x0=None, tol=NEWTON_TOL, maxiter=NEWTON_MAXITER):
    """Minimize ``sum_q w_q |mask * D u + offset|^p`` with ``u[fixed] = fixed_values``.

    Nodes in connected components without a fixed node take ``fill``
    (zero by default), which is optimal since the energy only sees
    differences there.  Returns ``(u, energy, quad_gradients)``.
    """
    N = ops[0].shape[1]
    fixed = np.asarray(fixed, int)
    mask = np.ascontiguousarray(mask, float)
    weights = np.ascontiguousarray(weights, float)
    ncomp, labels, anchored, free, Lfx, lu = _factorization(ops, mask, weights, fixed)
    u = np.zeros(N)
    if fill is not None:
        means = np.bincount(labels, np.asarray(fill, float), ncomp) / np.bincount(labels, None, ncomp)
        floating = ~anchored[labels]
        u[floating] = means[labels[floating]]
    u[fixed] = fixed_values
    if len(free):
        rhs = -(Lfx @ u[fixed])
        if offset is not None:
            for d, op in enumerate(ops):
                rhs -= op[:, free].T @ (weights * mask[:, d] * offset[:, d])
        u[free] = lu.solve(rhs)
        if p != 2:
            if x0 is not None:
                u[free] = np.asarray(x0, float)[free]
            _newton(ops, mask, weights, p, u, free, offset, tol, maxiter)
    g, _, energy = _energy_terms(ops, mask, weights, p, u, offset)
    return u, energy, g


def _gradient_hessian(ops, mask, weights, p, u, free, offset):
    g, n, energy = _energy_terms(ops, mask, weights, p, u, offset)
    dim = len(ops)
    tiny = 1e-14
    nn = np.maximum(n, tiny)
    coef = weights * p * nn ** (p - 2)
    sub = [op[:, free].multiply(mask[:, [d]]).tocsr() for d, op in enumerate(ops)]
    grad = sum(sub[d].T @ (coef * g[:, d]) for d in range(dim))
    H = None
    for d in range(dim):
        for e in range(dim):
            c = weights * p * (p - 2) * nn ** (p - 4) * g[:, d] * g[:, e]
            if d == e:
                c = c + coef
            term = sub[d].T @ sp.diags(c) @ sub[e]
            H = term if H is None else H + term
    return energy, np.asarray(grad).ravel(), H.tocsc()


def _newton(ops, mask, weights, p, u, free, offset, tol, maxiter):
    energy, grad, H = _gradient_hessian(ops, mask, weights, p, u, free, offset)
    g0 = max(1.0, np.linalg.norm(grad))
    for _ in range(maxiter):
        res = np.linalg.norm(grad)
        if res <= tol * g0:
            return
        shift = 1e-12 * max(1.0, abs(H.diagonal()).max())
        while True:
            try:
                step = -splu((H + shift * sp.identity(len(free), format="csc")).tocsc()).solve(grad)
                break
            except RuntimeError:
                shift *= 100
        slope = grad @ step
        if slope >= 0:
            step, slope = -grad, -(grad @ grad)
        s = 1.0
        base = u[free].copy()
        while True:
            u[free] = base + s * step
            trial = _energy_terms(ops, mask, weights, p, u, offset)[2]
            if trial <= energy + 1e-4 * s * slope or s < 1e-12:
                break
            s *= 0.5
        energy, grad, H = _gradient_hessian(ops, mask, weights, p, u, free, offset)
    res = np.linalg.norm(grad)
    if res > tol * g0:
        raise ConvergenceError("damped Newton hit the iteration cap", res)


# -- elastic problem on a grid --------------------------------------------

@dataclass(frozen=True, eq=False)
class ElasticSolution:
    field: ScalarField
    bulk_energy: float
    quad_gradients: np.ndarray   # (Q, dim)
    cell_gradients: np.ndarray   # (cells, dim) average of corner gradients
    grid: Grid
    medium: Medium
    crack: CrackState
    theta: float | None = None

    @property
    def u(self) -> np.ndarray:
        return self.field.values


def crack_mask(grid: Grid, crack: CrackState) -> np.ndarray:
    go = gradient_operators(grid)
    cracked = np.zeros(grid.n_edges, bool)
    if crack.edges:
        cracked[list(crack.edges)] = True
    return (~cracked[go.q_edge]).astype(float)


def active_dirichlet(grid: Grid, crack: CrackState) -> np.ndarray:
    """Positions (into ``grid.dirichlet``) of non-released Dirichlet nodes."""
    return np.array([n for n, k in enumerate(grid.dirichlet) if k not in crack.released], int)


def solve_elastic(grid: Grid, medium: Medium, crack: CrackState, datum, fill=None,
                  truncate: float | None = None) -> ElasticSolution:
    """Global minimizer of the bulk energy for a fixed crack.

    ``datum`` holds one value per Dirichlet node; released nodes ignore it.
    ``fill`` gives values for components carrying no datum (default zero).
    ``truncate`` clips the field to ``[-truncate, truncate]``.
    """
    medium.check_grid(grid)
    datum = np.asarray(datum, float).reshape(-1)
    if datum.shape != (grid.n_dirichlet,) or not np.all(np.isfinite(datum)):
        raise ValueError("datum needs one finite value per Dirichlet node")
    go = gradient_operators(grid)
    mask = crack_mask(grid, crack)
    w = medium.bulk[go.q_cell] * go.geom_weight
    act = active_dirichlet(grid, crack)
    fixed = np.array(grid.dirichlet, int)[act] if len(act) else np.zeros(0, int)
    u, energy, g = minimize_energy(go.ops, mask, w, medium.p, fixed, datum[act], fill=fill)
    if truncate is not None:
        clipped = np.clip(u, -truncate, truncate)
        if not np.array_equal(clipped, u):
            u = clipped
            g, _, energy = _energy_terms(go.ops, mask, w, medium.p, u, None)
    cells = np.zeros((grid.n_cells, grid.dimension))
    np.add.at(cells, go.q_cell, g)
    cells /= np.bincount(go.q_cell, minlength=grid.n_cells)[:, None]
    fld = ScalarField(u, frozenset(crack.edges))
    return ElasticSolution(fld, energy, g, cells, grid, medium, crack)


def bulk_energy(grid: Grid, medium: Medium, crack: CrackState, u) -> float:
    """Bulk energy of an arbitrary nodal field with the given crack."""
    go = gradient_operators(grid)
    w = medium.bulk[go.q_cell] * go.geom_weight
    return _energy_terms(go.ops, crack_mask(grid, crack), w, medium.p, np.asarray(u, float), None)[2]


def gradient_p_norm(grid: Grid, crack: CrackState, u, p: float) -> float:
    """``sum |grad u|^p`` with unit coefficient."""
    go = gradient_operators(grid)
    return _energy_terms(go.ops, crack_mask(grid, crack), go.geom_weight, p,
                         np.asarray(u, float), None)[2]


def rate_extension(sol: ElasticSolution, datum_rate) -> np.ndarray:
    """Energy-minimal extension of the datum rate with the solution's crack."""
    rate_sol = solve_elastic(sol.grid, sol.medium, sol.crack, datum_rate)
    return rate_sol.u


def work_integrand(sol: ElasticSolution, datum_rate) -> float:
    """``sum_q w_q p |g|^(p-2) g . grad(rate extension)``."""
    grid, medium = sol.grid, sol.medium
    go = gradient_operators(grid)
    v = rate_extension(sol, datum_rate)
    mask = crack_mask(grid, sol.crack)
    dv = np.column_stack([op @ v for op in go.ops]) * mask
    g = sol.quad_gradients
    w = medium.bulk[go.q_cell] * go.geom_weight
    n = np.sqrt(np.einsum("qd,qd->q", g, g))
    p = medium.p
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(n > 0, w * p * n ** (p - 2), 0.0) if p < 2 else w * p * n ** (p - 2)
    return float(math.fsum(coef * np.einsum("qd,qd->q", g, dv)))


def first_order_residual(sol: ElasticSolution) -> float:
    """Max |discrete divergence| of the flux at free anchored nodes."""
    grid, medium = sol.grid, sol.medium
    go = gradient_operators(grid)
    mask = crack_mask(grid, sol.crack)
    g = sol.quad_gradients
    w = medium.bulk[go.q_cell] * go.geom_weight
    n = np.sqrt(np.einsum("qd,qd->q", g, g))
    p = medium.p
    coef = w * p * np.where(n > 0, n, 1.0) ** (p - 2)
    r = sum(op.T @ (coef * mask[:, d] * g[:, d]) for d, op in enumerate(go.ops))
    act = active_dirichlet(grid, sol.crack)
    fixed = np.zeros(grid.n_nodes, bool)
    if len(act):
        fixed[np.array(grid.dirichlet)[act]] = True
    return float(np.abs(r[~fixed]).max()) if (~fixed).any() else 0.0


def closed_form_1d_energy(grid: Grid, medium: Medium, left: float, right: float) -> float:
    """Exact minimal energy of an uncracked 1D bar between two data."""
    p = medium.p
    h = grid.spacing[0]
    if p == 1:
        return abs(right - left) * float(medium.bulk.min())
    H = math.fsum(h * medium.bulk ** (-1.0 / (p - 1)))
    return abs(right - left) ** p / H ** (p - 1)


# -- batched p = 2 energies for small enumerations ------------------------

def batch_bulk_energies(grid: Grid, medium: Medium, element_masks: np.ndarray, datum) -> np.ndarray:
    """Minimal p=2 bulk energies for many crack element sets at once.

    ``element_masks`` is ``(B, E + n_dirichlet)`` boolean.  Uses dense
    Schur complements with a pseudo-inverse, so components without datum
    contribute zero, matching :func:`solve_elastic`.
    """
    if medium.p != 2:
        raise ValueError("batched energies are only available for p = 2")
    masks = np.asarray(element_masks, bool)
    E = grid.n_edges
    go = gradient_operators(grid)
    dense = [op.toarray() for op in go.ops]
    w = medium.bulk[go.q_cell] * go.geom_weight
    edge_ok = ~masks[:, :E]
    datum = np.asarray(datum, float)
    out = np.empty(len(masks))
    release = masks[:, E:]
    patterns, inverse = np.unique(release, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    diri = np.array(grid.dirichlet, int)
    for k, pat in enumerate(patterns):
        sel = np.flatnonzero(inverse == k)
        fixed = diri[~pat]
        vals = datum[~pat]
        free = np.setdiff1d(np.arange(grid.n_nodes), fixed)
        L = 0.0
        for d, D in enumerate(dense):
            wm = w[None, :] * edge_ok[sel][:, go.q_edge[:, d]]
            L = L + np.einsum("qi,bq,qj->bij", D, wm, D, optimize=True)
        if len(fixed) == 0:
            out[sel] = 0.0
            continue
        Ldd = L[:, fixed][:, :, fixed]
        Lfd = L[:, free][:, :, fixed]
        Lff = L[:, free][:, :, free]
        e = np.einsum("i,bij,j->b", vals, Ldd, vals)
        if len(free):
            r = np.einsum("bij,j->bi", Lfd, vals)
            x = np.einsum("bij,bj->bi", np.linalg.pinv(Lff, rcond=1e-10, hermitian=True), r)
            e = e - np.einsum("bi,bi->b", r, x)
        out[sel] = np.maximum(e, 0.0)
    return out
