import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fracture_hom.cell import (EffectiveDensityTable, cell_corrector, check_table, compute_table,
                               effective_tensor, f_hom_cell, g_hom_cell, phase_means, scaling_check)
from fracture_hom.medium import CellField, UnitCell

CHECKER = UnitCell(2, CellField("checkerboard", (1.0, 4.0)), CellField("constant", (1.0,)))
LAYERS = UnitCell(2, CellField("layered", (1.0, 4.0), axis=1),
                  CellField("layered", (1.0, 2.0), axis=1))


def test_constant_cell():
    cell = UnitCell(2, CellField("constant", (3.0,)), CellField("constant", (2.0,)))
    xi = np.array([0.3, -1.2])
    assert f_hom_cell(cell, xi, 16) == pytest.approx(3.0 * xi @ xi, rel=1e-12)
    assert g_hom_cell(cell, (0, 1), 16) == pytest.approx(2.0, rel=1e-12)
    assert g_hom_cell(cell, (1, 0), 16) == pytest.approx(2.0, rel=1e-12)
    e, phi = cell_corrector(cell, xi, 16)
    assert np.abs(phi).max() < 1e-12


def test_1d_harmonic_mean():
    cell = UnitCell(1, CellField("layered", (1.0, 4.0)), CellField("layered", (2.0, 1.0)))
    assert f_hom_cell(cell, [1.0], 32) == pytest.approx(1.6, rel=1e-12)
    assert f_hom_cell(cell, [2.0], 32) == pytest.approx(6.4, rel=1e-12)
    assert g_hom_cell(cell, (1.0,), 32) == 1.0


def test_layered_2d_means():
    A = effective_tensor(LAYERS, 32)
    assert A[0, 0] == pytest.approx(2.5, rel=1e-10)
    assert A[1, 1] == pytest.approx(1.6, rel=1e-10)
    assert abs(A[0, 1]) < 1e-10


def test_checkerboard_between_bounds_and_converging():
    harm, arith = phase_means(CHECKER, 32)
    vals = [f_hom_cell(CHECKER, [1.0, 0.0], R) for R in (16, 32, 64)]
    for v in vals:
        assert harm <= v <= arith
    d1, d2 = abs(vals[1] - vals[0]), abs(vals[2] - vals[1])
    assert d2 < d1
    assert vals[-1] == pytest.approx(2.0, rel=0.03)


def test_g_layered_benchmarks():
    assert g_hom_cell(LAYERS, (0.0, 1.0), 16) == pytest.approx(1.0, rel=1e-12)
    for m in (1, 2, 3, 4):
        assert g_hom_cell(LAYERS, (1.0, 0.0), 16, m) == pytest.approx(1.5, rel=1e-12)


def test_g_strip_width_nonincreasing():
    cell = UnitCell(2, CellField("constant"), CellField("checkerboard", (1.0, 2.0)))
    vals = [g_hom_cell(cell, (1.0, 2.0), 16, m) for m in (1, 2, 4)]
    assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))


@given(st.floats(0.1, 5.0), st.sampled_from([2.0, 3.0]))
def test_p_homogeneity(c, p):
    cell = UnitCell(2, CellField("checkerboard", (1.0, 4.0)), CellField("constant"), p)
    xi = np.array([0.6, 0.8])
    base = f_hom_cell(cell, xi, 16)
    assert f_hom_cell(cell, c * xi, 16) == pytest.approx(c ** p * base, rel=1e-8)


@given(st.floats(-math.pi, math.pi), st.floats(-math.pi, math.pi))
def test_midpoint_convexity(a, b):
    x = np.array([math.cos(a), math.sin(a)])
    y = 0.5 * np.array([math.cos(b), math.sin(b)])
    f = lambda z: f_hom_cell(CHECKER, z, 16)
    assert f(0.5 * (x + y)) <= 0.5 * (f(x) + f(y)) + 1e-8


def test_differentiability_probe():
    xi = np.array([0.7, 0.4])
    f = lambda z: f_hom_cell(CHECKER, z, 16)
    for k in range(2):
        e = np.eye(2)[k]
        errs = []
        for s in (1e-2, 5e-3):
            central = (f(xi + s * e) - f(xi - s * e)) / (2 * s)
            forward = (f(xi + s * e) - f(xi)) / s
            errs.append(abs(central - forward))
        # one-sided error is O(s); central agrees with it to that order
        assert errs[1] < 0.6 * errs[0] + 1e-9


def test_g_subadditive():
    normals = [(1, 0), (0, 1), (1, 1), (1, -1), (2, 1)]
    G = lambda v: np.linalg.norm(v) * g_hom_cell(LAYERS, np.asarray(v, float), 16)
    for u in normals:
        for v in normals:
            s = np.add(u, v)
            if np.linalg.norm(s) == 0:
                continue
            assert G(s) <= G(u) + G(v) + 1e-6


def test_table_invariants_and_roundtrip():
    table = compute_table(CHECKER, resolution=16, n_directions=4, surface_resolution=16,
                          normals=((1, 0), (0, 1), (1, 1)))
    assert check_table(table, CHECKER) == []
    assert table.f([2.0, 0.0]) == pytest.approx(4 * table.f([1.0, 0.0]), rel=1e-12)
    back = EffectiveDensityTable.from_rows(table.rows(), 2)
    assert back.bulk == table.bulk and back.surface == table.surface
    assert all(v >= 0 for v in table.diagnostics.values())
    with pytest.raises(KeyError):
        table.g((3.0, 1.0))


def test_table_jobs_identical():
    a = compute_table(LAYERS, resolution=16, n_directions=4, surface_resolution=16, normals=((1, 0), (0, 1)))
    b = compute_table(LAYERS, resolution=16, n_directions=4, surface_resolution=16, normals=((1, 0), (0, 1)),
                      jobs=2)
    assert a.rows() == b.rows()


@pytest.mark.parametrize("c1,c2", [(1.0, 1.0), (3.0, 1.0), (1.0, 2.0), (0.5, 7.0)])
def test_scaling(c1, c2):
    rep = scaling_check(c1, c2, UnitCell(2, CellField("checkerboard", (1.0, 4.0)),
                                         CellField("layered", (1.0, 2.0), axis=1)), resolution=16)
    assert rep.ok, rep.failures()


def test_resolution_floor():
    with pytest.raises(ValueError):
        f_hom_cell(CHECKER, [1.0, 0.0], 8)
