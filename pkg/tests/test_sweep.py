import numpy as np
import pytest

from fracture_hom.medium import CellField, RampSpec, UnitCell
from fracture_hom.sweep import (GridPolicy, UnderResolved, deviation_metrics, lsc_checks,
                                monotone_improvement, run_sweep)

BAR_CELL = UnitCell(1, CellField("layered", (1.0, 4.0)), CellField("layered", (2.0, 1.0)))
RAMP = RampSpec(1.2, 0.01, (("right", 1.0),))
EPS = [1 / 4, 1 / 8, 1 / 16, 1 / 32, 1 / 64]


@pytest.fixture(scope="module")
def incommensurate():
    return run_sweep(BAR_CELL, EPS, GridPolicy((0.9,)), RAMP)


def test_constant_cell_zero_deviation():
    cell = UnitCell(1, CellField("constant", (2.0,)), CellField("constant", (1.5,)))
    rep = run_sweep(cell, [0.5, 0.25], GridPolicy((1.0,)), RAMP)
    for m in rep.metrics:
        assert max(m.values()) <= 1e-12
    lsc = lsc_checks(rep)
    pre = rep.times < rep.times[rep.hom.crack_step]
    assert np.all(np.abs(lsc.total_margins[pre]) <= 1e-12)


def test_unit_bar_matches_closed_form():
    rep = run_sweep(BAR_CELL, [1 / 4, 1 / 8], GridPolicy((1.0,)), RAMP)
    t = rep.times
    assert np.allclose(rep.hom.total, np.minimum(1.6 * t ** 2, 1.0), rtol=1e-12, atol=1e-14)
    for r in rep.runs:
        assert np.allclose(r.total, rep.hom.total, rtol=1e-12, atol=1e-14)


def test_incommensurate_bar_converges(incommensurate):
    rep = incommensurate
    v = rep.verdicts()
    assert all(v.values()), v
    m = rep.metrics
    for key in ("total", "bulk", "surface"):
        assert m[-1][key] <= 0.05
        assert m[-1][key] <= 0.5 * m[0][key]
    assert monotone_improvement(rep)
    assert lsc_checks(rep).ok
    assert lsc_checks(rep).worst_total >= -0.02


def test_crack_time_converges(incommensurate):
    rep = incommensurate
    t_hom = rep.times[rep.hom.crack_step]
    t_last = rep.times[rep.runs[-1].crack_step]
    assert abs(t_last - t_hom) <= 0.01 + 1e-12


def test_deviations_nonnegative(incommensurate):
    for r in incommensurate.runs:
        assert all(v >= 0 for v in deviation_metrics(r, incommensurate.hom, incommensurate.times).values())
    assert all(row[-1] >= 0 for row in incommensurate.rows())


def test_injected_fault_flagged(incommensurate):
    bad_table = incommensurate.table.scaled(1.0, 1.5)
    rep = run_sweep(BAR_CELL, EPS[-2:], GridPolicy((0.9,)), RAMP, table=bad_table)
    lsc = lsc_checks(rep)
    assert not lsc.total_ok and not lsc.surface_ok
    assert (~lsc.total_verdicts).any()


def test_under_resolved_refused():
    with pytest.raises(UnderResolved):
        run_sweep(BAR_CELL, [0.25, 0.1], GridPolicy((1.0,), counts=(33,)), RAMP)


def test_eps_list_must_decrease():
    with pytest.raises(ValueError):
        run_sweep(BAR_CELL, [0.125, 0.25], GridPolicy((1.0,)), RAMP)


def test_reproducible_and_parallel_identical():
    a = run_sweep(BAR_CELL, [1 / 4, 1 / 8, 1 / 16], GridPolicy((0.9,)), RAMP)
    b = run_sweep(BAR_CELL, [1 / 4, 1 / 8, 1 / 16], GridPolicy((0.9,)), RAMP, jobs=2)
    assert a.rows() == b.rows()
    assert a.summary_lines() == b.summary_lines()


def test_2d_sweep_reports_caveat():
    cell = UnitCell(2, CellField("layered", (1.0, 2.0), axis=1), CellField("layered", (1.0, 2.0), axis=1))
    rep = run_sweep(cell, [0.5], GridPolicy((1.0, 1.0), ("bottom", "top")),
                    RampSpec(1.5, 0.25, (("top", 1.0),)), table_resolution=16)
    assert any("restricted" in c for c in rep.caveats)
    assert any("caveat" in line for line in rep.summary_lines())
