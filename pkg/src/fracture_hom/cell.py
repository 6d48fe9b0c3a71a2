"""Effective bulk and surface densities of a periodic microstructure.

``f_hom(xi)`` is the minimum over periodic correctors ``phi`` of the cell
average of ``a(y) |xi + grad phi|^p``, discretized with the same corner
gradients as the elastic solver.  ``g_hom(nu)`` is the cheapest periodic
cut with mean normal ``nu`` across a strip of whole periods, per unit
length of its mean line.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .elastic import _difference_op, corner_quadrature, minimize_energy
from .medium import CellField, UnitCell
from .mincut import CutProblem, min_cut

MIN_RESOLUTION = 16
MAX_SLOPE_DENOMINATOR = 8


@lru_cache(maxsize=16)
def _periodic_operators(dimension: int, R: int):
    h = 1.0 / R
    if dimension == 1:
        k = np.arange(R)
        en = np.column_stack([k, (k + 1) % R])
        q_cell = k
        q_edge = k[:, None]
        geom = np.full(R, h)
        centers = ((k + 0.5) * h)[:, None]
        n_nodes = R
    else:
        idx = np.arange(R * R).reshape(R, R)
        ex = np.column_stack([idx.ravel(), np.roll(idx, -1, axis=1).ravel()])
        ey = np.column_stack([idx.ravel(), np.roll(idx, -1, axis=0).ravel()])
        en = np.vstack([ex, ey])
        q_cell, q_edge = corner_quadrature(R, R, periodic=True)
        geom = np.full(len(q_cell), h * h / 4)
        ci, cj = np.meshgrid(np.arange(R), np.arange(R), indexing="xy")
        centers = np.column_stack([(ci.ravel() + 0.5) * h, (cj.ravel() + 0.5) * h])
        n_nodes = R * R
    ops = tuple(_difference_op(en, q_edge[:, d], h, n_nodes) for d in range(dimension))
    return ops, q_cell, geom, centers


def cell_corrector(cell: UnitCell, xi, resolution: int):
    """Return ``(f_hom(xi), corrector)`` with a mean-zero corrector."""
    if resolution < MIN_RESOLUTION:
        raise ValueError(f"cell resolution must be >= {MIN_RESOLUTION}, got {resolution}")
    xi = np.atleast_1d(np.asarray(xi, float))
    if xi.shape != (cell.dimension,) or not np.all(np.isfinite(xi)):
        raise ValueError("xi must be a finite vector of the cell dimension")
    ops, q_cell, geom, centers = _periodic_operators(cell.dimension, resolution)
    a = cell.bulk(centers)
    w = a[q_cell] * geom
    mask = np.ones((len(q_cell), cell.dimension))
    offset = np.broadcast_to(xi, mask.shape)
    phi, energy, _ = minimize_energy(ops, mask, w, cell.p, [0], [0.0], offset=offset)
    return energy, phi - phi.mean()


def f_hom_cell(cell: UnitCell, xi, resolution: int = 64) -> float:
    return cell_corrector(cell, xi, resolution)[0]


def effective_tensor(cell: UnitCell, resolution: int = 64) -> np.ndarray:
    """Effective coefficient matrix for ``p = 2`` (``f_hom(xi) = xi . A xi``)."""
    if cell.p != 2:
        raise ValueError("effective tensor exists only for p = 2")
    d = cell.dimension
    A = np.empty((d, d))
    for i in range(d):
        A[i, i] = f_hom_cell(cell, np.eye(d)[i], resolution)
    if d == 2:
        s = f_hom_cell(cell, np.array([1.0, 1.0]), resolution)
        A[0, 1] = A[1, 0] = 0.5 * (s - A[0, 0] - A[1, 1])
    return A


def phase_means(cell: UnitCell, resolution: int = 64) -> tuple[float, float]:
    """(harmonic, arithmetic) mean of the sampled bulk coefficient."""
    _, _, _, centers = _periodic_operators(cell.dimension, resolution)
    a = cell.bulk(centers)
    return float(1.0 / np.mean(1.0 / a)), float(np.mean(a))


# -- surface density -------------------------------------------------------

def _slope(nu) -> tuple[bool, Fraction]:
    """Tangent slope of the mean cut line, and whether axes must be swapped."""
    tx, ty = nu[1], -nu[0]
    if abs(tx) >= abs(ty):
        return False, Fraction(ty / tx).limit_denominator(MAX_SLOPE_DENOMINATOR)
    return True, Fraction(tx / ty).limit_denominator(MAX_SLOPE_DENOMINATOR)


def _swapped(f: CellField):
    return lambda y: f(np.asarray(y)[:, ::-1])


def strip_cut_problem(kappa, R: int, M: int, Q: int) -> CutProblem:
    """Sheared periodic strip of ``M`` periods whose ends are glued with a
    vertical offset of ``Q`` periods; bands of rows at bottom and top are
    source and sink."""
    h = 1.0 / R
    W = M * R
    band = abs(Q) * R + 1
    Hn = 2 * band + (abs(Q) + 1) * R
    idx = np.arange(W * Hn).reshape(Hn, W)
    jj, ii = np.meshgrid(np.arange(Hn), np.arange(W - 1), indexing="ij")
    ex = np.column_stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()])
    ex_mid = np.column_stack([(ii.ravel() + 0.5) * h, jj.ravel() * h])
    # wrap edges (W-1, j) -- (0, j - Q R): node (W, j) is identified with (0, j - Q R)
    j = np.arange(Hn)
    jw = j - Q * R
    ok = (jw >= 0) & (jw < Hn)
    wrap = np.column_stack([idx[j[ok], W - 1], idx[jw[ok], 0]])
    wrap_mid = np.column_stack([np.full(ok.sum(), (W - 0.5) * h), j[ok] * h])
    jj, ii = np.meshgrid(np.arange(Hn - 1), np.arange(W), indexing="ij")
    ey = np.column_stack([idx[:-1, :].ravel(), idx[1:, :].ravel()])
    ey_mid = np.column_stack([ii.ravel() * h, (jj.ravel() + 0.5) * h])
    en = np.vstack([ex, wrap, ey])
    mid = np.vstack([ex_mid, wrap_mid, ey_mid])
    w = kappa(mid) * h
    return CutProblem(W * Hn, en, w, idx[:band].ravel(), idx[-band:].ravel())


def g_hom_cell(cell: UnitCell, nu, resolution: int = 32, m: int = 1) -> float:
    """Cheapest periodic cut with mean normal ``nu`` per unit length.

    Oblique normals are rounded to the nearest tangent slope ``q/m0`` with
    ``m0 <= 8``; the strip then spans a multiple of ``m0`` periods that is
    at least ``m``.  In 1D the crack is a point and the value is the
    smallest sampled toughness.
    """
    if m < 1:
        raise ValueError("strip width m must be >= 1")
    if cell.dimension == 1:
        _, _, _, centers = _periodic_operators(1, resolution)
        return float(cell.toughness(centers).min())
    nu = np.asarray(nu, float)
    nrm = np.linalg.norm(nu)
    if nrm == 0:
        raise ValueError("nu must be nonzero")
    nu = nu / nrm
    swap, s = _slope(nu)
    kappa = _swapped(cell.toughness) if swap else cell.toughness
    m0 = s.denominator
    M = m0 * math.ceil(m / m0)
    Q = s.numerator * (M // m0)
    cut = min_cut(strip_cut_problem(kappa, resolution, M, Q))
    return cut.cost / math.hypot(M, Q)


def lattice_factor(nu) -> float:
    """``|nu_1| + |nu_2|``: surface density of a unit-toughness lattice cut."""
    nu = np.asarray(nu, float)
    nu = nu / np.linalg.norm(nu)
    return float(np.abs(nu).sum())


# -- tables ----------------------------------------------------------------

DEFAULT_NORMALS = ((1, 0), (2, 1), (1, 1), (1, 2), (0, 1), (-1, 2), (-1, 1), (-2, 1))


@dataclass
class EffectiveDensityTable:
    """Sampled ``f_hom`` and ``g_hom`` with refinement diagnostics.

    ``diagnostics`` maps each sample key to ``|value(R) - value(R/2)|``
    (``R/2`` is replaced by ``2R`` when it would drop below the minimum
    resolution).
    """

    bulk: list = field(default_factory=list)      # [(xi tuple, value)]
    surface: list = field(default_factory=list)   # [(nu tuple, value)]
    resolution: int = 64
    p: float = 2.0
    diagnostics: dict = field(default_factory=dict)

    def f(self, xi) -> float:
        """Lookup using p-homogeneity along sampled directions."""
        xi = np.atleast_1d(np.asarray(xi, float))
        r = np.linalg.norm(xi)
        if r == 0:
            return 0.0
        best, val = None, None
        for key, v in self.bulk:
            k = np.asarray(key, float)
            c = float(k @ xi) / (np.linalg.norm(k) * r)
            if best is None or c > best + 1e-12:
                best, val = c, v * (r / np.linalg.norm(k)) ** self.p
        if best < 1 - 1e-9:
            raise KeyError(f"direction of {tuple(xi)} is not sampled")
        return val

    def g(self, nu) -> float:
        nu = np.atleast_1d(np.asarray(nu, float))
        nu = nu / np.linalg.norm(nu)
        for key, v in self.surface:
            k = np.asarray(key, float)
            k = k / np.linalg.norm(k)
            if abs(abs(float(k @ nu)) - 1) < 1e-9:
                return v
        raise KeyError(f"normal {tuple(nu)} is not sampled")

    def scaled(self, bulk_factor=1.0, surface_factor=1.0) -> "EffectiveDensityTable":
        return EffectiveDensityTable([(k, v * bulk_factor) for k, v in self.bulk],
                                     [(k, v * surface_factor) for k, v in self.surface],
                                     self.resolution, self.p, dict(self.diagnostics))

    def rows(self):
        """CSV rows ``(kind, c1, c2, value, resolution, diagnostic)``."""
        out = []
        for kind, items in (("bulk", self.bulk), ("surface", self.surface)):
            for key, v in items:
                k = tuple(key) + (0.0,) * (2 - len(key))
                out.append((kind, k[0], k[1], v, self.resolution,
                            self.diagnostics.get((kind, tuple(key)), float("nan"))))
        return out

    @classmethod
    def from_rows(cls, rows, dimension: int, p: float = 2.0) -> "EffectiveDensityTable":
        t = cls(p=p)
        for kind, c1, c2, v, res, diag in rows:
            key = (float(c1),) if dimension == 1 else (float(c1), float(c2))
            getattr(t, kind).append((key, float(v)))
            t.resolution = int(res)
            t.diagnostics[(kind, key)] = float(diag)
        return t


def _companion(R: int) -> int:
    """Resolution compared against ``R`` for the refinement diagnostic."""
    return R // 2 if R // 2 >= MIN_RESOLUTION else 2 * R


def _bulk_task(args):
    cell, xi, R = args
    return f_hom_cell(cell, xi, R), f_hom_cell(cell, xi, _companion(R))


def _surface_task(args):
    cell, nu, R, m = args
    return g_hom_cell(cell, nu, R, m), g_hom_cell(cell, nu, max(R // 2, 2), m)


def bulk_directions(dimension: int, n: int = 16) -> list[tuple]:
    if dimension == 1:
        return [(1.0,)]
    ang = np.arange(n) * (np.pi / n)  # f_hom is even, half circle suffices
    return [(float(np.cos(a)), float(np.sin(a))) for a in ang]


def compute_table(cell: UnitCell, resolution: int = 64, n_directions: int = 16,
                  magnitudes: Sequence[float] = (0.5, 1.0, 1.5, 2.0),
                  normals: Sequence = DEFAULT_NORMALS, surface_resolution: int = 32,
                  strip: int = 1, power_family: bool = True, jobs: int = 1) -> EffectiveDensityTable:
    """Effective density table with refinement diagnostics.

    With ``power_family`` only unit-magnitude directions are solved and the
    other magnitudes follow from p-homogeneity.
    """
    dirs = bulk_directions(cell.dimension, n_directions)
    mags = (1.0,) if power_family else tuple(magnitudes)
    xis = [tuple(c * x for x in d) for d in dirs for c in mags]
    if cell.dimension == 1:
        nus = [(1.0,)]
    else:
        nus = [tuple(float(x) / math.hypot(*n) for x in n) for n in normals]
    btasks = [(cell, np.array(x), resolution) for x in xis]
    stasks = [(cell, np.array(n), surface_resolution, strip) for n in nus]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            bvals = list(ex.map(_bulk_task, btasks))
            svals = list(ex.map(_surface_task, stasks))
    else:
        bvals = [_bulk_task(t) for t in btasks]
        svals = [_surface_task(t) for t in stasks]
    table = EffectiveDensityTable(resolution=resolution, p=cell.p)
    for x, (v, vc) in zip(xis, bvals):
        table.bulk.append((x, v))
        table.diagnostics[("bulk", x)] = abs(v - vc)
    if power_family:
        for d in dirs:
            v = dict(table.bulk)[d]
            for c in magnitudes:
                if c != 1.0:
                    key = tuple(c * x for x in d)
                    table.bulk.append((key, v * c ** cell.p))
                    table.diagnostics[("bulk", key)] = table.diagnostics[("bulk", d)] * c ** cell.p
    for n, (v, vc) in zip(nus, svals):
        table.surface.append((n, v))
        table.diagnostics[("surface", n)] = abs(v - vc)
    return table


def check_table(table: EffectiveDensityTable, cell: UnitCell, tol: float = 1e-8) -> list[str]:
    """Invariant violations of a table (empty list when all hold)."""
    problems = []
    a_lo, a_hi = cell.bulk.bounds
    k_lo, k_hi = cell.toughness.bounds
    p = table.p
    for xi, v in table.bulk:
        r = np.linalg.norm(xi) ** p
        if not (a_lo * r * (1 - tol) <= v <= a_hi * r * (1 + tol)):
            problems.append(f"f_hom{xi}={v} outside [{a_lo * r}, {a_hi * r}]")
    for nu, v in table.surface:
        lf = lattice_factor(nu) if len(nu) == 2 else 1.0
        if not (k_lo * (1 - tol) <= v <= k_hi * lf * (1 + tol)):
            problems.append(f"g_hom{nu}={v} outside [{k_lo}, {k_hi * lf}]")
    return problems


# -- scaling ---------------------------------------------------------------

@dataclass
class ScalingReport:
    c1: float
    c2: float
    rows: list   # (kind, sample, base, scaled, relative error)
    rtol: float

    @property
    def ok(self) -> bool:
        return all(r[4] <= self.rtol for r in self.rows)

    def failures(self):
        return [r for r in self.rows if r[4] > self.rtol]


def scaling_check(c1: float, c2: float, cell: UnitCell, xis=None, normals=None,
                  resolution: int = 32, surface_resolution: int = 16, rtol: float = 1e-10,
                  raise_on_failure: bool = False) -> ScalingReport:
    """Check that scaling bulk by ``c1`` and toughness by ``c2`` scales
    ``f_hom`` by ``c1`` and ``g_hom`` by ``c2`` independently."""
    if not (c1 > 0 and c2 > 0):
        raise ValueError("scaling factors must be positive")
    d = cell.dimension
    if xis is None:
        xis = [np.eye(d)[0]] if d == 1 else [np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([0.6, 0.8])]
    if normals is None:
        normals = [(1.0,)] if d == 1 else [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
    scaled = cell.scaled(c1, c2)
    rows = []
    for xi in xis:
        b = f_hom_cell(cell, xi, resolution)
        s = f_hom_cell(scaled, xi, resolution)
        rows.append(("bulk", tuple(np.atleast_1d(xi)), b, s, abs(s - c1 * b) / abs(c1 * b)))
    for nu in normals:
        b = g_hom_cell(cell, nu, surface_resolution)
        s = g_hom_cell(scaled, nu, surface_resolution)
        rows.append(("surface", tuple(nu), b, s, abs(s - c2 * b) / abs(c2 * b)))
    rep = ScalingReport(c1, c2, rows, rtol)
    if raise_on_failure and not rep.ok:
        raise AssertionError(f"scaling check failed: {rep.failures()}")
    return rep
