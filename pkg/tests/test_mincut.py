import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, strategies as st

from fracture_hom.medium import build_grid
from fracture_hom.mincut import (CutProblem, SequenceDescriptor, Window, classify, default_probe_grid,
                                 diagonal_n, min_cut, probe_density, rasterize, sigma_probe,
                                 surface_functional, window_problem)


def nx_cut_value(prob: CutProblem, scale: int) -> int:
    """Independent oracle: integer max-flow on the contracted graph with networkx."""
    G = nx.Graph()
    lab = {int(s): "S" for s in prob.source}
    lab.update({int(t): "T" for t in prob.sink})
    G.add_nodes_from(["S", "T"])
    for (a, b), w in zip(prob.edge_nodes, prob.weights):
        u, v = lab.get(int(a), int(a)), lab.get(int(b), int(b))
        c = int(round(w * scale))
        if u == v or c == 0:
            continue
        if G.has_edge(u, v):
            G[u][v]["capacity"] += c
        else:
            G.add_edge(u, v, capacity=c)
    return nx.maximum_flow_value(G, "S", "T")


def random_grid_problem(rng, n):
    g = build_grid(2, [1.0, 1.0], [n, n], [])
    w = rng.uniform(0.0, 2.0, g.n_edges) * (rng.random(g.n_edges) > 0.1)
    return CutProblem(g.n_nodes, g.edge_nodes, w, g.face_nodes("top"), g.face_nodes("bottom"))


@given(st.integers(0, 10_000), st.integers(3, 14))
def test_min_cut_matches_networkx(seed, n):
    prob = random_grid_problem(np.random.default_rng(seed), n)
    res = min_cut(prob)
    assert res.exact
    assert res.flow_int == nx_cut_value(prob, res.scale)
    # the returned cut really separates the terminals
    assert res.source_side[prob.source].all() and not res.source_side[prob.sink].any()
    assert res.gap <= 1e-6


def test_min_cut_path_graph():
    prob = CutProblem(4, np.array([[0, 1], [1, 2], [2, 3]]), np.array([3.0, 0.5, 2.0]), [0], [3])
    res = min_cut(prob)
    assert res.cost == 0.5 and res.cut_edges.tolist() == [1]


def test_degenerate_terminals():
    prob = CutProblem(3, np.array([[0, 1], [1, 2]]), np.ones(2), [], [2])
    assert min_cut(prob).degenerate


def test_rejects_negative_weights():
    with pytest.raises(ValueError):
        CutProblem(2, np.array([[0, 1]]), np.array([-1.0]), [0], [1])


def test_surface_functional_examples():
    g = default_probe_grid(33)
    y = g.node_coords[:, 1]
    assert surface_functional(g, np.zeros(g.n_nodes)) == 0.0
    u = (y > 0).astype(float)
    assert surface_functional(g, u) == pytest.approx(2.0, rel=1e-12)
    line = SequenceDescriptor("fixed-line").crack_edges(g, 1)
    assert surface_functional(g, u, discount=line) == 0.0
    with pytest.raises(ValueError):
        surface_functional(g, y)


@given(st.integers(0, 1000))
def test_discount_monotone(seed):
    rng = np.random.default_rng(seed)
    g = build_grid(2, [1.0, 1.0], [9, 9], [])
    win = Window(0, 8, 0, 8)
    k = rng.uniform(1, 2, g.n_edges)
    small = rng.choice(g.n_edges, 10, replace=False)
    big = np.union1d(small, rng.choice(g.n_edges, 10, replace=False))
    for axis in (0, 1):
        a = min_cut(window_problem(g, win, axis, small, k)[0]).cost
        b = min_cut(window_problem(g, win, axis, big, k)[0]).cost
        assert b <= a + 1e-12


def test_rasterize_horizontal_line():
    g = default_probe_grid(9)
    e = rasterize(g, [(-1.0, 0.0, 1.0, 0.0)])
    assert len(e) == 9
    assert np.all(g.edge_axis[e] == 1)
    with pytest.raises(ValueError):
        rasterize(g, [(0, 0, 1, 1)])


def test_window_too_small_rejected():
    g = default_probe_grid(65)
    with pytest.raises(ValueError, match="4h"):
        Window.around(g, (0, 0), 3 * g.h)
    with pytest.raises(ValueError):
        sigma_probe(g, SequenceDescriptor("teeth"), [(0, 0)], [g.h], [4])


def test_probe_examples_coarse():
    g = default_probe_grid(129)
    assert probe_density(g, SequenceDescriptor("teeth"), 16, (0, 0), 1.0, 1) == pytest.approx(1.0)
    assert probe_density(g, SequenceDescriptor("fixed-line"), 16, (0, 0), 1.0, 1) < 0.02
    off = probe_density(g, SequenceDescriptor("fixed-line"), 16, (0, 0.5), 0.25, 1)
    assert off == pytest.approx(1.0)
    frac = probe_density(g, SequenceDescriptor("fraction", 0.5), 16, (0, 0), 1.0, 1)
    assert 0.45 <= frac <= 0.55


def test_diagonal_and_classification():
    assert diagonal_n(0.5) == 4 and diagonal_n(1.0) == 1
    g = default_probe_grid(129)
    for kind, expect in (("teeth", False), ("fixed-line", True), ("fraction", False)):
        reps = sigma_probe(g, SequenceDescriptor(kind, 0.5), [(0.0, 0.0)], [0.5, 0.25], [8])
        verdict = classify(reps)
        assert verdict[((0.0, 0.0), 1)] is expect


def test_probe_jobs_do_not_change_output():
    g = default_probe_grid(65)
    args = (g, SequenceDescriptor("fraction", 0.5), [(0.0, 0.0), (0.25, 0.0)], [0.5], [4, 8])
    assert sigma_probe(*args, jobs=1) == sigma_probe(*args, jobs=2)


def _sigma_limit_measure(g, desc, xs):
    """Length of the classified sigma-limit along the midline, from probes at points xs."""
    reps = sigma_probe(g, desc, [(x, 0.0) for x in xs], [0.25], [], diagonal=True)
    v = classify(reps)
    spacing = xs[1] - xs[0]
    return spacing * sum(v[((x, 0.0), 1)] for x in xs)


@pytest.mark.parametrize("kind", ["teeth", "fraction", "fixed-line"])
def test_liminf_and_lsc_inequalities(kind):
    g = default_probe_grid(129)
    desc = SequenceDescriptor(kind, 0.5)
    xs = [-0.5, -0.25, 0.0, 0.25, 0.5]
    measure = _sigma_limit_measure(g, desc, xs)
    # grid measure of K_n restricted to the probed stretch |x| <= 0.625, tail of n
    lengths = []
    for n in (16, 32, 64):
        e = desc.crack_edges(g, n)
        mid = g.edge_midpoints[e]
        lengths.append(float(np.sum(g.edge_measure[e][np.abs(mid[:, 0]) <= 0.625])))
    assert measure <= min(lengths) * 1.05 + 1e-12
    # toughness-weighted version with kappa = 2 on the upper half plane edges
    kappa = np.where(g.edge_midpoints[:, 1] >= 0, 2.0, 1.0)
    wl = [float(np.sum((kappa * g.edge_measure)[e][np.abs(g.edge_midpoints[e, 0]) <= 0.625]))
          for e in (desc.crack_edges(g, n) for n in (16, 32, 64))]
    assert measure * kappa.min() <= min(wl) * 1.05 + 1e-12


def test_jump_containment_fixed_line():
    g = default_probe_grid(65)
    desc = SequenceDescriptor("fixed-line")
    y = g.node_coords[:, 1]
    u = (y > 0).astype(float)
    vals = [surface_functional(g, u, discount=desc.crack_edges(g, n)) for n in (4, 8, 16)]
    assert vals[-1] == 0.0
    jumps = np.flatnonzero(u[g.edge_nodes[:, 0]] != u[g.edge_nodes[:, 1]])
    xs = sorted({round(float(x), 12) for x in g.edge_midpoints[jumps, 0]})[8:-8:8]
    reps = sigma_probe(g, desc, [(x, 0.0) for x in xs], [0.25], [], diagonal=True)
    assert all(classify(reps).values())
