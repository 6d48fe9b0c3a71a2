import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fracture_hom.evolution import (Candidate, Exhaustive1D, MinimalityError, PathBackend, SubsetBackend,
                                    assert_trace, check_trace, energy_balance_audit, incremental_step,
                                    make_backend, run_evolution, select_minimizer,
                                    verify_unilateral_minimality)
from fracture_hom.elastic import solve_elastic
from fracture_hom.medium import BoundaryDatum, CrackState, Medium, build_grid


def bar(n, a=None, k=None):
    g = build_grid(1, [1.0], [n], ["left", "right"])
    x = g.cell_centers[:, 0]
    bulk = np.ones(g.n_cells) if a is None else a(x)
    tough = np.ones(g.n_edges) if k is None else k(g.edge_midpoints[:, 0])
    vals = np.r_[bulk, tough]
    return g, Medium(bulk, tough, vals.min(), vals.max())


def two_phase_a(x):
    return np.where(x < 0.5, 1.0, 4.0)


def two_phase_k(x):
    return np.where(x <= 0.5, 2.0, 1.0)


def brute_force_1d(g, m, datum):
    """Independent oracle: direct energy formula over all cracks with at most 2 elements."""
    h = g.spacing[0]
    E = g.n_edges
    H = h * np.sum(1.0 / m.bulk)
    kappa = np.r_[m.toughness, m.release_toughness(g)]
    n_el = E + 2
    best = None
    for r in range(3):
        for el in itertools.combinations(range(n_el), r):
            cut = any(e < E for e in el) or len(el) > 0
            bulk = 0.0 if cut else (datum[1] - datum[0]) ** 2 / H
            surf = sum(kappa[e] for e in el)
            key = (bulk + surf, surf, el)
            if best is None or key[0] < best[0] - 1e-12 * max(1, abs(key[0])) or (
                    abs(key[0] - best[0]) <= 1e-12 * max(1, abs(best[0])) and key[1:] < best[1:]):
                best = key
    return best


def test_homogeneous_bar_crack_time_and_energy():
    g, m = bar(201)
    d = BoundaryDatum.uniform_ramp(g, [0.0, 1.0], 2.0, 0.01)
    tr = run_evolution(g, m, d, Exhaustive1D())
    k = tr.first_crack_step()
    assert k == 101 and tr.steps[k].t == pytest.approx(1.01)
    assert tr.steps[100].crack.size == 0   # tie at t = 1 keeps the uncracked state
    assert tr.steps[k].crack.edges == frozenset({0})
    assert np.abs(tr.total - np.minimum(tr.times ** 2, 1)).max() <= 2 * 0.01
    assert_trace(tr, g, m, d)


def test_heterogeneous_bar_crack_time():
    g, m = bar(201, two_phase_a, two_phase_k)
    d = BoundaryDatum.uniform_ramp(g, [0.0, 1.0], 1.2, 0.01)
    tr = run_evolution(g, m, d, Exhaustive1D())
    s = tr.steps[tr.first_crack_step()]
    assert abs(s.t - math.sqrt(0.625)) <= 0.01
    (e,) = s.crack.edges
    assert g.edge_midpoints[e, 0] > 0.5


@given(st.integers(0, 500))
def test_exhaustive_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    g = build_grid(1, [1.0], [8], ["left", "right"])
    m = Medium(rng.uniform(1, 3, g.n_cells), rng.uniform(1, 3, g.n_edges), 1.0, 3.0)
    datum = np.array([0.0, rng.uniform(0, 3)])
    cand, energy, _ = Exhaustive1D().select(g, m, CrackState(), datum)
    ref = brute_force_1d(g, m, datum)
    assert energy == pytest.approx(ref[0], rel=1e-12)
    assert cand.elements == ref[2]


def test_backend_agreement_1d():
    g, m = bar(11, two_phase_a, two_phase_k)
    d = BoundaryDatum.uniform_ramp(g, [0.0, 1.0], 1.2, 0.02)
    a = run_evolution(g, m, d, Exhaustive1D())
    b = run_evolution(g, m, d, SubsetBackend(max_size=2, method="solve"))
    assert a.rows() == b.rows()
    assert a.crack_log(g) == b.crack_log(g)


def test_fully_cut_state_unchanged():
    g, m = bar(6)
    full = CrackState.build(g, m, range(g.n_edges))
    sol, crack, _ = incremental_step(g, m, np.zeros(6), full, np.array([0.0, 5.0]), Exhaustive1D(max_points=5))
    assert crack is full
    assert sol.bulk_energy == 0.0


def test_zero_datum():
    g, m = bar(21)
    d = BoundaryDatum.uniform_ramp(g, [0.0, 0.0], 1.0, 0.1)
    tr = run_evolution(g, m, d, Exhaustive1D())
    assert tr.first_crack_step() is None
    assert np.all(tr.total == 0)
    assert np.all(energy_balance_audit(tr).residuals == 0)


def test_energy_balance_first_order():
    g, m = bar(51)
    res = []
    for dt in (0.02, 0.01, 0.005):
        d = BoundaryDatum.uniform_ramp(g, [0.0, 1.0], 2.0, dt)
        a = energy_balance_audit(run_evolution(g, m, d, Exhaustive1D()))
        assert a.max_abs <= 3 * dt
        res.append(a.max_abs)
    assert res[1] == pytest.approx(res[0] / 2, rel=0.1)
    assert res[2] == pytest.approx(res[1] / 2, rel=0.1)


@pytest.mark.parametrize("kmin,H", [(1.0, 1.0), (0.5, 1.0), (1.0, 0.625), (2.0, 0.625)])
def test_crack_time_closed_form(kmin, H):
    a = (lambda x: np.ones_like(x)) if H == 1.0 else two_phase_a
    g, m = bar(41, a, lambda x: np.full_like(x, kmin))
    d = BoundaryDatum.uniform_ramp(g, [0.0, 1.0], 2.0, 0.01)
    tr = run_evolution(g, m, d, Exhaustive1D())
    tc = math.sqrt(H * kmin)
    t = tr.steps[tr.first_crack_step()].t
    assert tc < t <= tc + 0.01 + 1e-12


def test_crack_time_monotone_in_toughness():
    times = []
    for kmin in (0.5, 1.0, 1.5):
        g, m = bar(21, two_phase_a, lambda x: np.full_like(x, kmin))
        d = BoundaryDatum.uniform_ramp(g, [0.0, 1.0], 2.0, 0.01)
        tr = run_evolution(g, m, d, Exhaustive1D())
        times.append(tr.steps[tr.first_crack_step()].t)
    assert times == sorted(times)


def test_verify_post_step_and_perturbed():
    g, m = bar(21, two_phase_a, two_phase_k)
    d = BoundaryDatum.uniform_ramp(g, [0.0, 1.0], 1.2, 0.05)
    tr = run_evolution(g, m, d, Exhaustive1D())
    for s in tr.steps:
        rep = verify_unilateral_minimality(g, m, s.crack, s.solution.u, d.values[s.index], Exhaustive1D())
        assert rep.ok and rep.worst_margin >= -1e-10
    # uncracked state after t_c: adding the first weak edge is the witness
    i = len(tr.steps) - 1
    sol = solve_elastic(g, m, CrackState(), d.values[i])
    rep = verify_unilateral_minimality(g, m, CrackState(), sol.u, d.values[i], Exhaustive1D())
    assert not rep.ok
    weak = int(np.flatnonzero(m.toughness == 1.0)[0])
    assert rep.witness == (weak,)


def test_superfluous_crack_still_minimal():
    g, m = bar(11)
    crack = CrackState.build(g, m, [2, 7])
    d = np.array([0.0, 0.3])
    sol = solve_elastic(g, m, crack, d)
    rep = verify_unilateral_minimality(g, m, crack, sol.u, d, SubsetBackend(max_size=4))
    assert rep.ok


def test_tie_break_surface_then_lexicographic():
    cands = [Candidate(()), Candidate((3,)), Candidate((1,)), Candidate((0, 5))]
    bulk = np.array([1.0, 0.0, 0.0, 0.0])
    surf = np.array([0.0, 1.0, 1.0, 0.5])
    assert select_minimizer(cands, bulk, surf) == 3
    surf = np.array([0.0, 1.0, 1.0, 1.0])
    assert select_minimizer(cands, bulk, surf) == 0
    bulk = np.array([2.0, 0.0, 0.0, 0.0])
    assert select_minimizer(cands, bulk, surf) == 3    # (0, 5) < (1,) < (3,)


def small_plate(seed, counts=(3, 3), faces=("bottom", "top")):
    rng = np.random.default_rng(seed)
    g = build_grid(2, [1.0, 1.0], list(counts), list(faces))
    m = Medium(rng.uniform(1, 4, g.n_cells), rng.uniform(0.3, 1.2, g.n_edges), 0.3, 4.0)
    return g, m


@pytest.mark.parametrize("seed", range(3))
def test_static_equilibrium_exhaustive_2d(seed):
    g, m = small_plate(seed)
    d = BoundaryDatum.uniform_ramp(g, lambda x: x[:, 1], 1.0, 0.25)
    be = SubsetBackend(allow_release=False)
    tr = run_evolution(g, m, d, be)
    assert_trace(tr, g, m, d)
    for s in tr.steps:
        rep = verify_unilateral_minimality(g, m, s.crack, s.solution.u, d.values[s.index], be)
        assert rep.exhaustive and rep.ok


def test_subset_batch_matches_solve():
    g, m = small_plate(7, (2, 3), ("left", "right"))
    d = BoundaryDatum.uniform_ramp(g, lambda x: x[:, 0], 1.5, 0.5)
    a = run_evolution(g, m, d, SubsetBackend(allow_release=False, method="batch"))
    b = run_evolution(g, m, d, SubsetBackend(allow_release=False, method="solve"))
    assert [s.crack.elements(g) for s in a.steps] == [s.crack.elements(g) for s in b.steps]
    assert np.allclose(a.total, b.total, rtol=1e-9, atol=1e-12)


def test_subset_refuses_huge_enumeration():
    g = build_grid(2, [1.0, 1.0], [6, 6], ["left"])
    with pytest.raises(ValueError):
        SubsetBackend().candidates(g, Medium.constant(g), CrackState())


def test_path_backend_follows_weak_stripe():
    g = build_grid(2, [1.0, 1.0], [9, 9], ["bottom", "top"])
    mid = g.edge_midpoints
    weak = (g.edge_axis == 1) & (np.abs(mid[:, 1] - 0.6875) < 1e-9)
    kappa = np.where(weak, 1.0, 2.0)
    m = Medium(np.ones(g.n_cells), kappa, 1.0, 2.0)
    d = BoundaryDatum.uniform_ramp(g, lambda x: x[:, 1], 2.0, 0.1)
    tr = run_evolution(g, m, d, PathBackend("horizontal"))
    final = tr.steps[-1].crack
    assert final.edges and all(weak[e] for e in final.edges)
    assert final.surface_energy == pytest.approx(1.0 * 1.0, rel=1e-12)
    assert_trace(tr, g, m, d)
    assert "path" in tr.backend


def test_trace_checker_catches_tampering():
    g, m = bar(11)
    d = BoundaryDatum.uniform_ramp(g, [0.0, 1.0], 1.5, 0.1)
    tr = run_evolution(g, m, d, Exhaustive1D())
    assert check_trace(tr, g, m, d) == []
    s = tr.steps[-1]
    tr.steps[-1] = type(s)(s.index, s.t, CrackState(), s.solution, s.energy, s.theta, s.work)
    assert any("shrank" in p for p in check_trace(tr, g, m, d))


def test_make_backend():
    assert isinstance(make_backend("path"), PathBackend)
    with pytest.raises(ValueError):
        make_backend("annealing")


def test_deterministic_traces():
    g, m = bar(31, two_phase_a, two_phase_k)
    d = BoundaryDatum.uniform_ramp(g, [0.0, 1.0], 1.2, 0.01)
    a = run_evolution(g, m, d, Exhaustive1D())
    b = run_evolution(g, m, d, Exhaustive1D())
    assert a.rows() == b.rows()
