"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 numerical failure
(``diagnostic.txt`` in the output directory), 3 invariant violation
(``witness.txt``).  Errors are also printed to stderr as ``error: kind: message``.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as C
from .cell import DEFAULT_NORMALS, check_table, compute_table
from .csvio import write_csv, write_lines
from .elastic import ConvergenceError
from .evolution import (InvariantViolation, MinimalityError, check_trace, energy_balance_audit,
                        run_evolution, verify_unilateral_minimality)
from .mincut import classify, default_probe_grid, sigma_probe
from .sweep import GridPolicy, UnderResolved, lsc_checks, run_sweep

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INVARIANT = 0, 1, 2, 3
COMMANDS = ("cell", "evolve", "sweep", "sigma-probe", "verify")

log = logging.getLogger("fracture_hom")

TRACE_HEADER = ("step", "t", "bulk", "surface", "total", "theta", "cumulative_work", "n_cracked_edges")


class Violation(Exception):
    def __init__(self, lines):
        super().__init__(lines[0] if lines else "invariant violation")
        self.lines = list(lines)


def _family_line(backend: str) -> str:
    return f"crack family: {backend}"


# -- commands ----------------------------------------------------------------

def cmd_evolve(cfg, out: Path, jobs: int):
    grid = C.grid_from(cfg, expect_evolution=True)
    medium = C.medium_from(cfg, grid)
    datum = C.datum_from(cfg, grid)
    backend = C.backend_from(cfg, grid.dimension)
    trace = run_evolution(grid, medium, datum, backend)
    write_csv(out / "trace.csv", TRACE_HEADER, trace.rows())
    write_csv(out / "cracks.csv", ("step", "edge"), trace.crack_log(grid))
    audit = energy_balance_audit(trace)
    write_lines(out / "summary.txt", [
        _family_line(trace.backend),
        f"steps: {len(trace.steps)}",
        f"delta: {trace.delta:.17g}",
        f"first_crack_step: {trace.first_crack_step()}",
        f"final_surface: {trace.surface[-1]:.17g}",
        f"energy_balance_max_residual: {audit.max_abs:.17g}",
        f"energy_balance_residual_over_delta: {audit.ratio:.17g}",
    ])
    problems = check_trace(trace, grid, medium, datum)
    if problems:
        raise Violation(problems)
    return trace


def cmd_verify(cfg, out: Path, jobs: int):
    grid = C.grid_from(cfg, expect_evolution=True)
    medium = C.medium_from(cfg, grid)
    datum = C.datum_from(cfg, grid)
    backend = C.backend_from(cfg, grid.dimension)
    v = cfg.section("verify", required=False)
    budget = int(v.get("budget", 2000))
    trace = run_evolution(grid, medium, datum, backend)
    steps = v.get("steps", "all")
    idx = range(len(trace.steps)) if steps == "all" else [int(s) for s in steps]
    rows, bad = [], []
    for i in idx:
        s = trace.steps[i]
        rep = verify_unilateral_minimality(grid, medium, s.crack, s.solution.u, datum.values[i],
                                           backend, budget=budget)
        rows.append((i, s.t, rep.n_checked, rep.worst_margin, int(rep.exhaustive), int(rep.ok)))
        for elements, margin in rep.violations:
            bad.append(f"step {i}: challenge {list(elements)} beats the state by {-margin:.17g}")
    write_csv(out / "verify.csv", ("step", "t", "n_checked", "worst_margin", "exhaustive", "ok"), rows)
    problems = check_trace(trace, grid, medium, datum)
    if bad or problems:
        raise Violation(bad + problems)


def _cell_from(cfg):
    c = cfg.section("cell")
    dim = int(c.get("dimension", 2))
    return C.unit_cell_from(c, dim), c


def cmd_cell(cfg, out: Path, jobs: int):
    cell, c = _cell_from(cfg)
    normals = [tuple(n) for n in c.get("normals", DEFAULT_NORMALS)]
    table = compute_table(cell, resolution=int(c.get("resolution", 64)),
                          n_directions=int(c.get("directions", 16)),
                          normals=normals, surface_resolution=int(c.get("surface_resolution", 32)),
                          strip=int(c.get("strip", 1)), jobs=jobs)
    write_csv(out / "table.csv", ("kind", "component1", "component2", "value", "resolution", "diagnostic"),
              table.rows())
    problems = check_table(table, cell)
    if problems:
        raise Violation(problems)


def cmd_sweep(cfg, out: Path, jobs: int):
    cell, c = _cell_from(cfg)
    s = cfg.section("sweep")
    eps = [float(e) for e in C._get(s, "eps", "sweep", required=True)]
    policy = GridPolicy(tuple(float(x) for x in s.get("extents", [1.0] * cell.dimension)),
                        tuple(s.get("dirichlet", ("left", "right"))),
                        int(s.get("points_per_eps", 8)),
                        tuple(s["counts"]) if "counts" in s else None)
    ramp = C.ramp_from(cfg.section("datum"))
    backend = C.backend_from(cfg, cell.dimension)
    try:
        report = run_sweep(cell, eps, policy, ramp, backend,
                           table_resolution=int(c.get("resolution", 64)), jobs=jobs)
    except UnderResolved as exc:
        raise C.ConfigError(str(exc)) from None
    write_csv(out / "sweep.csv", ("epsilon", "t", "bulk", "surface", "total", "bulk_hom", "surface_hom",
                                  "total_hom", "dev_total"), report.rows())
    lsc = lsc_checks(report)
    write_csv(out / "lsc.csv", ("t", "margin", "ok"),
              zip(report.times, lsc.total_margins, lsc.total_verdicts))
    write_lines(out / "verdict.txt", report.summary_lines())
    problems = [f"eps={r.eps:.17g}: {p}" for r in report.runs for p in r.problems]
    problems += [f"homogenized: {p}" for p in report.hom.problems]
    if problems:
        raise Violation(problems)
    return report


def cmd_sigma_probe(cfg, out: Path, jobs: int):
    p = cfg.section("probe")
    grid = default_probe_grid(int(p.get("count", 513)))
    desc = C.descriptor_from(cfg)
    centers = [tuple(float(x) for x in c) for c in p.get("centers", [[0.0, 0.0]])]
    radii = [float(r) for r in p.get("radii", [1.0])]
    for rho in radii:
        if rho < 4 * grid.h:
            raise C.ConfigError(f"[probe] radius rho={rho:g} violates rho >= 4h = {4 * grid.h:g}")
    reports = sigma_probe(grid, desc, centers, radii, [int(n) for n in p.get("n", [64])],
                          [int(a) for a in p.get("axes", [1])], diagonal=bool(p.get("diagonal", True)),
                          jobs=jobs)
    nu = {0: "e1", 1: "e2"}
    write_csv(out / "probe.csv", ("generator", "n", "x", "y", "rho", "nu", "density"),
              [(r.generator, r.n, r.center[0], r.center[1], r.rho, nu[r.axis], r.density) for r in reports])
    verdict = classify(reports, float(p.get("alpha", 1.0)))
    write_csv(out / "classification.csv", ("x", "y", "nu", "in_sigma_limit"),
              [(k[0][0], k[0][1], nu[k[1]], v) for k, v in verdict.items()])
    return reports


HANDLERS = {"cell": cmd_cell, "evolve": cmd_evolve, "sweep": cmd_sweep,
            "sigma-probe": cmd_sigma_probe, "verify": cmd_verify}


# -- plumbing ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fracture-hom", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="TOML run configuration")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                    help="worker processes (1 = sequential; outputs are identical either way)")
    ap.add_argument("--seed", type=int, default=0, help="reserved; deterministic paths ignore it")
    ap.add_argument("--verbose", action="store_true")
    return ap


def _fail(kind: str, msg: str) -> None:
    print(f"error: {kind}: {msg}", file=sys.stderr)


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    if args.jobs < 1:
        _fail("config", "--jobs must be >= 1")
        return EXIT_CONFIG
    try:
        cfg = C.load_config(args.config)
        out.mkdir(parents=True, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise C.ConfigError(f"output directory not writable: {out}")
        log.info("running %s with %s", args.command, args.config)
        HANDLERS[args.command](cfg, out, args.jobs)
    except C.ConfigError as exc:
        _fail("config", str(exc))
        return EXIT_CONFIG
    except OSError as exc:
        _fail("config", str(exc))
        return EXIT_CONFIG
    except (Violation, InvariantViolation) as exc:
        lines = getattr(exc, "lines", None) or getattr(exc, "problems", None) or [str(exc)]
        write_lines(out / "witness.txt", [f"command: {args.command}"] + [str(x) for x in lines])
        _fail("invariant", f"{lines[0]} (witness in {out / 'witness.txt'})")
        return EXIT_INVARIANT
    except (ConvergenceError, MinimalityError, FloatingPointError, np.linalg.LinAlgError,
            RuntimeError) as exc:
        write_lines(out / "diagnostic.txt", [f"command: {args.command}", f"{type(exc).__name__}: {exc}"])
        _fail("numerical", f"{exc} (diagnostic in {out / 'diagnostic.txt'})")
        return EXIT_NUMERIC
    except ValueError as exc:
        _fail("config", str(exc))
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
