"""Time-discrete quasistatic crack evolution.

Each step takes the argmin of bulk + surface energy over the cracks of a
backend's candidate family that contain the previous crack.  Ties are
broken by smaller surface energy, then by the lexicographically smallest
element tuple, so runs are deterministic.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .elastic import (ElasticSolution, batch_bulk_energies, bulk_energy, closed_form_1d_energy,
                      solve_elastic, work_integrand)
from .medium import BoundaryDatum, CrackState, EnergyBreakdown, Grid, Medium, element_costs

TIE_RTOL = 1e-12
VERIFY_TOL = 1e-10
EXHAUSTIVE_LIMIT = 14


class MinimalityError(RuntimeError):
    pass


class InvariantViolation(AssertionError):
    def __init__(self, problems):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


@dataclass(frozen=True)
class Candidate:
    elements: tuple
    path: tuple = ()


def _surface_of(costs, elements) -> float:
    return math.fsum(costs[list(elements)]) if elements else 0.0


def select_minimizer(cands: Sequence[Candidate], bulk, surface) -> int:
    """Index of the argmin of bulk + surface with the documented tie-break."""
    bulk = np.asarray(bulk, float)
    surface = np.asarray(surface, float)
    total = bulk + surface
    best = total.min()
    tol = TIE_RTOL * max(1.0, abs(best))
    tied = np.flatnonzero(total <= best + tol)
    smin = surface[tied].min()
    tied = tied[surface[tied] <= smin + TIE_RTOL * max(1.0, abs(smin))]
    return int(min(tied, key=lambda k: cands[k].elements))


# -- backends ----------------------------------------------------------------

class Backend:
    """Candidate crack family plus a bulk-energy evaluator for it."""

    name = "base"
    exhaustive = False

    def candidates(self, grid: Grid, medium: Medium, prev: CrackState) -> list[Candidate]:
        raise NotImplementedError

    def bulk_energies(self, grid, medium, cands, datum) -> np.ndarray:
        out = np.empty(len(cands))
        for k, c in enumerate(cands):
            crack = CrackState.from_elements(grid, medium, c.elements)
            out[k] = solve_elastic(grid, medium, crack, datum).bulk_energy
        return out

    def challenges(self, grid, medium, crack, rng=None, budget=0) -> list[Candidate]:
        """Supersets of ``crack`` inside the family, for minimality checks."""
        return self.candidates(grid, medium, crack)

    def is_exhaustive_for(self, grid, crack) -> bool:
        """Whether :meth:`challenges` enumerates the whole family above ``crack``."""
        return self.exhaustive

    def describe(self) -> str:
        return self.name

    def select(self, grid, medium, prev, datum):
        """Minimizing candidate, its certified energy, and the family size."""
        cands = self.candidates(grid, medium, prev)
        if not cands or cands[0].elements != prev.elements(grid):
            raise MinimalityError("backend family must contain the previous crack first")
        bulk = self.bulk_energies(grid, medium, cands, datum)
        costs = element_costs(grid, medium)
        surf = np.array([_surface_of(costs, c.elements) for c in cands])
        k = select_minimizer(cands, bulk, surf)
        return cands[k], bulk[k] + surf[k], len(cands)


def _pool(grid: Grid, allow_release: bool):
    n = grid.n_edges + (grid.n_dirichlet if allow_release else 0)
    return list(range(n))


class Exhaustive1D(Backend):
    """All cracks with at most ``max_points`` crack points, with exact 1D energies."""

    name = "exhaustive-1d"
    exhaustive = True

    def __init__(self, max_points: int = 2, allow_release: bool = True):
        self.max_points = max_points
        self.allow_release = allow_release

    def describe(self):
        return f"{self.name}(max_points={self.max_points}, release={self.allow_release})"

    def candidates(self, grid, medium, prev):
        if grid.dimension != 1:
            raise ValueError("exhaustive-1d backend needs a 1D grid")
        base = prev.elements(grid)
        out = [Candidate(base)]
        room = self.max_points - len(base)
        rest = [e for e in _pool(grid, self.allow_release) if e not in set(base)]
        for r in range(1, room + 1):
            for extra in itertools.combinations(rest, r):
                out.append(Candidate(tuple(sorted(base + extra))))
        return out

    def _element_array(self, grid, prev):
        """Candidates as rows of sorted element ids padded with -1; row 0 is ``prev``."""
        base = np.array(prev.elements(grid), int)
        room = self.max_points - len(base)
        rest = np.setdiff1d(np.array(_pool(grid, self.allow_release), int), base)
        width = max(self.max_points, len(base), 1)
        blocks = [np.array([np.r_[base, -np.ones(width - len(base), int)]])]
        n = len(rest)
        if room >= 1 and n:
            blocks.append(np.column_stack([np.tile(base, (n, 1)), rest,
                                           -np.ones((n, width - len(base) - 1), int)]))
        if room >= 2 and n > 1:
            i, j = np.triu_indices(n, 1)
            blocks.append(np.column_stack([np.tile(base, (len(i), 1)), rest[i], rest[j],
                                           -np.ones((len(i), width - len(base) - 2), int)]))
        if room > 2:
            extra = [np.r_[base, list(c), -np.ones(width - len(base) - r, int)]
                     for r in range(3, room + 1) for c in itertools.combinations(rest, r)]
            if extra:
                blocks.append(np.array(extra, int))
        el = np.vstack(blocks).astype(int)
        # keep each row sorted with the padding last
        key = np.where(el < 0, np.iinfo(np.int64).max, el)
        el = np.take_along_axis(el, np.argsort(key, axis=1), axis=1)
        return el

    def _plan(self, grid, prev):
        """Candidate rows plus, per release pattern, which bar segments each row breaks.

        Depends only on the previous crack, so it is reused across the many
        steps that share one.
        """
        key = (grid, prev.elements(grid))
        cache = self.__dict__.setdefault("_plans", {})
        if key in cache:
            return cache[key]
        el = self._element_array(grid, prev)
        cache.clear()
        cache[key] = (el, self._segment_plan(grid, el))
        return cache[key]

    def _segment_plan(self, grid, el):
        E = grid.n_edges
        edges = np.where(el < E, el, -1)
        rel = np.where(el >= E, el - E, -1)
        diri = np.array(grid.dirichlet, int)
        bits = np.where(rel >= 0, np.left_shift(1, np.maximum(rel, 0)), 0).sum(axis=1)
        codes, inverse = np.unique(bits, return_inverse=True)
        plan = []
        for g, code in enumerate(codes):
            sel = np.flatnonzero(inverse == g)
            pat = np.flatnonzero((int(code) >> np.arange(len(diri))) & 1)
            keep = np.setdiff1d(np.arange(len(diri)), pat)
            keep = keep[np.argsort(diri[keep])]
            segs = []
            for ia, ib in zip(keep[:-1], keep[1:]):
                a, b = diri[ia], diri[ib]
                broken = np.any((edges[sel] >= a) & (edges[sel] < b), axis=1)
                segs.append((int(a), int(b), int(ia), int(ib), ~broken))
            plan.append((sel, segs))
        return plan

    def select(self, grid, medium, prev, datum):
        el, plan = self._plan(grid, prev)
        bulk = self._bulk_from_plan(grid, medium, len(el), plan, datum)
        costs = element_costs(grid, medium)
        surf = np.where(el >= 0, costs[np.maximum(el, 0)], 0.0).sum(axis=1)
        total = bulk + surf
        best = total.min()
        tied = np.flatnonzero(total <= best + TIE_RTOL * max(1.0, abs(best)))
        smin = surf[tied].min()
        tied = tied[surf[tied] <= smin + TIE_RTOL * max(1.0, abs(smin))]
        sub = el[tied]
        k = tied[np.lexsort(sub.T[::-1])[0]]
        elements = tuple(int(e) for e in el[k] if e >= 0)
        return Candidate(elements), bulk[k] + surf[k], len(el)

    def bulk_energies(self, grid, medium, cands, datum):
        width = max(len(c.elements) for c in cands) if cands else 0
        el = np.full((len(cands), max(width, 1)), -1, int)
        for k, c in enumerate(cands):
            el[k, :len(c.elements)] = c.elements
        return self._bulk_from_plan(grid, medium, len(el), self._segment_plan(grid, el), datum)

    def _bulk_from_plan(self, grid, medium, n, plan, datum):
        datum = np.asarray(datum, float)
        out = np.zeros(n)
        h = grid.spacing[0]
        p = medium.p
        inv = medium.bulk ** (-1.0 / (p - 1)) if p > 1 else None
        for sel, segs in plan:
            for a, b, ia, ib, intact in segs:
                jump = abs(datum[ib] - datum[ia])
                if p > 1:
                    H = math.fsum(h * inv[a:b])
                    pair = jump ** p / H ** (p - 1)
                else:
                    pair = jump * float(medium.bulk[a:b].min())
                out[sel] += np.where(intact, pair, 0.0)
        return out


class SubsetBackend(Backend):
    """Every subset of a pool of crack elements (optionally size-capped).

    ``method`` picks the bulk evaluator: ``solve`` (one sparse solve per
    candidate), ``batch`` (dense batched Schur complements, p = 2) or
    ``auto``.
    """

    name = "subsets"

    def __init__(self, pool=None, max_size: int | None = None, allow_release: bool = True,
                 method: str = "auto"):
        self.pool = None if pool is None else tuple(sorted(int(e) for e in pool))
        self.max_size = max_size
        self.allow_release = allow_release
        self.method = method

    @property
    def exhaustive(self):
        return True

    def describe(self):
        return f"{self.name}(max_size={self.max_size}, release={self.allow_release})"

    def is_exhaustive_for(self, grid, crack):
        free = len(self.pool_for(grid)) - crack.size
        return self.max_size is not None or free <= EXHAUSTIVE_LIMIT

    def challenges(self, grid, medium, crack, rng=None, budget=0):
        if self.is_exhaustive_for(grid, crack):
            return self.candidates(grid, medium, crack)
        base = crack.elements(grid)
        rest = np.array([e for e in self.pool_for(grid) if e not in set(base)])
        rng = rng or np.random.default_rng(0)
        out = [Candidate(base)]
        for _ in range(budget):
            k = int(rng.integers(1, len(rest) + 1))
            extra = rng.choice(rest, size=k, replace=False)
            out.append(Candidate(tuple(sorted(base + tuple(int(e) for e in extra)))))
        return out

    def pool_for(self, grid):
        return list(self.pool) if self.pool is not None else _pool(grid, self.allow_release)

    def candidates(self, grid, medium, prev):
        base = prev.elements(grid)
        rest = [e for e in self.pool_for(grid) if e not in set(base)]
        cap = len(base) + len(rest) if self.max_size is None else self.max_size
        if self.max_size is None and len(rest) > 22:
            raise ValueError(f"refusing to enumerate 2^{len(rest)} crack subsets")
        out = [Candidate(base)]
        for r in range(1, cap - len(base) + 1):
            for extra in itertools.combinations(rest, r):
                out.append(Candidate(tuple(sorted(base + extra))))
        return out

    def bulk_energies(self, grid, medium, cands, datum):
        use_batch = self.method == "batch" or (
            self.method == "auto" and medium.p == 2 and grid.n_nodes <= 64)
        if not use_batch:
            return super().bulk_energies(grid, medium, cands, datum)
        masks = np.zeros((len(cands), grid.n_edges + grid.n_dirichlet), bool)
        for k, c in enumerate(cands):
            masks[k, list(c.elements)] = True
        out = np.empty(len(cands))
        chunk = 4096
        for s in range(0, len(cands), chunk):
            out[s:s + chunk] = batch_bulk_energies(grid, medium, masks[s:s + chunk], datum)
        return out


class PathBackend(Backend):
    """Cracks that are monotone dual-lattice paths grown from one side.

    ``orientation = "horizontal"`` grows paths column by column from the
    left side, each column cut at one row gap, with gap changes of at most
    ``max_jump`` between neighbouring columns.  Per step the candidates are
    the previous crack and, for each frontier column, its surface-cheapest
    extension found by dynamic programming.
    """

    name = "path"

    def __init__(self, orientation: str = "horizontal", max_jump: int = 1):
        if orientation not in ("horizontal", "vertical"):
            raise ValueError("orientation must be horizontal or vertical")
        self.orientation = orientation
        self.max_jump = max_jump

    def describe(self):
        return f"{self.name}({self.orientation}, max_jump={self.max_jump})"

    # geometry helpers in (column, gap) coordinates
    def _shape(self, grid):
        nx, ny = grid.counts
        return (nx, ny - 1) if self.orientation == "horizontal" else (ny, nx - 1)

    def _cross_edge(self, grid, col, gap):
        nx, ny = grid.counts
        if self.orientation == "horizontal":
            return (nx - 1) * ny + gap * nx + col
        return col * (nx - 1) + gap

    def _step_edges(self, grid, col, g_prev, g):
        nx, ny = grid.counts
        lo, hi = sorted((g_prev, g))
        rows = range(lo + 1, hi + 1)
        if self.orientation == "horizontal":
            return [r * (nx - 1) + (col - 1) for r in rows]
        return [(nx - 1) * ny + (col - 1) * nx + r for r in rows]

    def path_elements(self, grid, path) -> tuple:
        el = []
        for c, g in enumerate(path):
            el.append(self._cross_edge(grid, c, g))
            if c > 0:
                el.extend(self._step_edges(grid, c, path[c - 1], g))
        return tuple(sorted(el))

    def candidates(self, grid, medium, prev):
        if grid.dimension != 2:
            raise ValueError("path backend needs a 2D grid")
        base = prev.elements(grid)
        out = [Candidate(base, prev.path)]
        if prev.size and not prev.path:
            return out
        costs = element_costs(grid, medium)
        ncol, ngap = self._shape(grid)
        start = len(prev.path)
        if start >= ncol:
            return out
        INF = math.inf
        cost = np.full(ngap, INF)
        back = []
        if start == 0:
            for g in range(ngap):
                cost[g] = costs[self._cross_edge(grid, 0, g)]
            frontier = [(0, cost.copy())]
        else:
            last = prev.path[-1]
            cost[last] = 0.0
            frontier = []
        for col in range(max(start, 1), ncol):
            new = np.full(ngap, INF)
            arg = np.full(ngap, -1)
            for g in range(ngap):
                for gp in range(max(0, g - self.max_jump), min(ngap, g + self.max_jump + 1)):
                    if cost[gp] == INF:
                        continue
                    c = cost[gp] + _surface_of(costs, self._step_edges(grid, col, gp, g))
                    if c < new[g] - 1e-15:
                        new[g], arg[g] = c, gp
                new[g] += costs[self._cross_edge(grid, col, g)]
            back.append(arg)
            cost = new
            frontier.append((col, cost.copy()))
        for col, cst in frontier:
            g = int(np.argmin(cst))
            ext = [g]
            for k in range(col - max(start, 1), -1, -1):
                ext.append(int(back[k][ext[-1]]))
            ext.reverse()
            if start == 0 and col > 0:
                path = tuple(ext)
            elif start == 0:
                path = (g,)
            else:
                path = prev.path + tuple(ext[1:])
            out.append(Candidate(self.path_elements(grid, path), path))
        return out

    def challenges(self, grid, medium, crack, rng=None, budget=0):
        out = self.candidates(grid, medium, crack)
        if rng is None or budget <= 0:
            return out
        ncol, ngap = self._shape(grid)
        start = len(crack.path)
        if crack.size and not crack.path or start >= ncol:
            return out
        for _ in range(budget):
            path = list(crack.path) if start else [int(rng.integers(ngap))]
            end = int(rng.integers(len(path), ncol))
            while len(path) <= end:
                g = path[-1] + int(rng.integers(-self.max_jump, self.max_jump + 1))
                path.append(min(max(g, 0), ngap - 1))
            path = tuple(path[:max(end + 1, 1)])
            out.append(Candidate(self.path_elements(grid, path), path))
        return out


BACKENDS = {"exhaustive-1d": Exhaustive1D, "subsets": SubsetBackend, "path": PathBackend}


def make_backend(name: str, **kw) -> Backend:
    try:
        return BACKENDS[name](**kw)
    except KeyError:
        raise ValueError(f"unknown backend {name!r}; choose from {sorted(BACKENDS)}") from None


# -- evolution -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class StepRecord:
    index: int
    t: float
    crack: CrackState
    solution: ElasticSolution
    energy: EnergyBreakdown
    theta: float
    work: float
    n_candidates: int = 0


@dataclass(eq=False)
class EvolutionTrace:
    steps: list
    delta: float
    backend: str

    @property
    def times(self):
        return np.array([s.t for s in self.steps])

    @property
    def bulk(self):
        return np.array([s.energy.bulk for s in self.steps])

    @property
    def surface(self):
        return np.array([s.energy.surface for s in self.steps])

    @property
    def total(self):
        return np.array([s.energy.total for s in self.steps])

    @property
    def theta(self):
        return np.array([s.theta for s in self.steps])

    @property
    def work(self):
        return np.array([s.work for s in self.steps])

    def first_crack_step(self):
        for s in self.steps:
            if s.crack.size:
                return s.index
        return None

    def rows(self):
        return [(s.index, s.t, s.energy.bulk, s.energy.surface, s.energy.total, s.theta, s.work,
                 len(s.crack.edges)) for s in self.steps]

    def crack_log(self, grid: Grid):
        """(step, element id) for every element added at that step."""
        out, prev = [], set()
        for s in self.steps:
            cur = set(s.crack.elements(grid))
            out.extend((s.index, e) for e in sorted(cur - prev))
            prev = cur
        return out


def incremental_step(grid: Grid, medium: Medium, prev_u, prev_crack: CrackState, datum_values,
                     backend: Backend, bound: float | None = None):
    """One minimization step; returns ``(solution, crack, n_candidates)``."""
    cand, certified, n = backend.select(grid, medium, prev_crack, datum_values)
    if cand.elements == prev_crack.elements(grid):
        crack = prev_crack
    else:
        crack = CrackState.from_elements(grid, medium, cand.elements, cand.path)
    if bound is None:
        bound = float(np.abs(datum_values).max()) if len(datum_values) else 0.0
    sol = solve_elastic(grid, medium, crack, datum_values, fill=prev_u, truncate=bound)
    if backend.exhaustive and sol.bulk_energy + crack.surface_energy > certified + 1e-9 * max(1.0, certified):
        raise MinimalityError(f"selected state energy {sol.bulk_energy + crack.surface_energy} "
                              f"exceeds its certified value {certified}")
    return sol, crack, n


def run_evolution(grid: Grid, medium: Medium, datum: BoundaryDatum, backend: Backend,
                  initial: CrackState | None = None) -> EvolutionTrace:
    medium.check_grid(grid)
    crack = initial or CrackState()
    u = np.zeros(grid.n_nodes)
    steps = []
    work = 0.0
    for i, t in enumerate(datum.times):
        vals = datum.values[i]
        bound = float(np.abs(vals).max()) if vals.size else 0.0
        sol, crack, nc = incremental_step(grid, medium, u, crack, vals, backend, bound)
        theta = work_integrand(sol, datum.rate(i))
        if i > 0:
            work += theta * (t - datum.times[i - 1])
        steps.append(StepRecord(i, float(t), crack, sol,
                                EnergyBreakdown(sol.bulk_energy, crack.surface_energy), theta, work, nc))
        u = sol.u
    return EvolutionTrace(steps, datum.max_step, backend.describe())


# -- checks ----------------------------------------------------------------

@dataclass
class MinimalityReport:
    n_checked: int
    worst_margin: float
    witness: tuple | None
    violations: list = field(default_factory=list)
    exhaustive: bool = True

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_unilateral_minimality(grid: Grid, medium: Medium, crack: CrackState, u, datum_values,
                                 backend: Backend, budget: int = 2000, seed: int = 0,
                                 tol: float = VERIFY_TOL) -> MinimalityReport:
    """Compare ``bulk(u)`` against ``bulk(v_H) + surface(H minus K)`` for
    supersets ``H`` of ``K`` in the backend family, ``v_H`` optimal for ``H``.

    Enumerable families (at most 14 free elements, or size-capped) are
    checked completely; otherwise the backend's own candidates plus
    ``budget`` random supersets are checked.
    """
    u = np.asarray(u, float)
    base = set(crack.elements(grid))
    exhaustive = backend.is_exhaustive_for(grid, crack)
    chal = backend.challenges(grid, medium, crack, np.random.default_rng(seed), budget)
    chal = [c for c in chal if base <= set(c.elements)]
    bulk_u = bulk_energy(grid, medium, crack, u)
    bulk_h = backend.bulk_energies(grid, medium, chal, datum_values)
    costs = element_costs(grid, medium)
    extra = np.array([_surface_of(costs, sorted(set(c.elements) - base)) for c in chal])
    margins = bulk_h + extra - bulk_u
    order = sorted(range(len(chal)), key=lambda k: (margins[k], chal[k].elements))
    worst = order[0] if order else None
    viol = [(chal[k].elements, float(margins[k])) for k in order if margins[k] < -tol]
    return MinimalityReport(len(chal), float(margins[worst]) if worst is not None else math.inf,
                            chal[worst].elements if worst is not None else None, viol, exhaustive)


@dataclass
class AuditReport:
    residuals: np.ndarray
    delta: float

    @property
    def max_abs(self) -> float:
        return float(np.abs(self.residuals).max()) if len(self.residuals) else 0.0

    @property
    def ratio(self) -> float:
        """Max residual in units of the time step."""
        return self.max_abs / self.delta if self.delta else 0.0


def energy_balance_audit(trace: EvolutionTrace) -> AuditReport:
    """Residuals ``E_i - E_0 - W_i`` of the discrete energy balance."""
    tot = trace.total
    return AuditReport(tot - tot[0] - trace.work, trace.delta)


def check_trace(trace: EvolutionTrace, grid: Grid, medium: Medium, datum: BoundaryDatum,
                comparison: bool = True, tol: float = 1e-10) -> list[str]:
    """Invariant violations along a trace (empty when everything holds).

    Checks irreversibility, nondecreasing surface energy, admissibility
    (jumps only on cracked edges, datum attained on kept Dirichlet nodes),
    the sup bound by the datum, the cached surface energies and, with
    ``comparison``, that the step's crack never raises the optimal bulk
    energy relative to the previous crack at the same datum.
    """
    problems = []
    diri = np.array(grid.dirichlet, int)
    prev = None
    for s in trace.steps:
        vals = datum.values[s.index]
        try:
            s.crack.check(grid, medium)
        except AssertionError as exc:
            problems.append(f"step {s.index}: {exc}")
        if prev is not None:
            if not prev.crack <= s.crack:
                problems.append(f"step {s.index}: crack shrank")
            if s.energy.surface < prev.energy.surface - tol:
                problems.append(f"step {s.index}: surface energy decreased")
        u = s.solution.u
        if not s.solution.field.jump_edges(grid) <= s.crack.edges:
            problems.append(f"step {s.index}: jump outside crack")
        kept = [n for n, k in enumerate(grid.dirichlet) if k not in s.crack.released]
        if kept and not np.array_equal(u[diri[kept]], vals[kept]):
            problems.append(f"step {s.index}: datum not attained")
        bound = float(np.abs(vals).max()) if vals.size else 0.0
        if np.abs(u).max() > bound + tol * max(1.0, bound):
            problems.append(f"step {s.index}: |u| exceeds |psi|")
        if comparison and prev is not None:
            before = solve_elastic(grid, medium, prev.crack, vals).bulk_energy
            if s.energy.bulk > before + tol * max(1.0, before):
                problems.append(f"step {s.index}: enlarging the crack raised bulk energy")
        prev = s
    return problems


def assert_trace(trace, grid, medium, datum, comparison=True):
    problems = check_trace(trace, grid, medium, datum, comparison)
    if problems:
        raise InvariantViolation(problems)
