"""TOML run configuration.

Sections (all optional except what a command needs)::

    [grid]     dimension, extents, counts, dirichlet (face names or node ids)
    [medium]   kind = constant | layered | checkerboard | table | periodic
    [datum]    faces = {right = 1.0} or slope = [..]; t_end, dt or times = [..]
    [backend]  name = exhaustive-1d | subsets | path, plus backend options
    [cell]     unit cell for cell/sweep commands
    [sweep]    eps, extents, dirichlet, points_per_eps, table_resolution
    [probe]    generator, a, edges_csv, count, centers, radii, n, axes, diagonal
    [verify]   budget, steps

Relative paths (CSV tables) resolve against the config file's directory.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .csvio import read_csv, read_index_table
from .evolution import Backend, make_backend
from .medium import (BoundaryDatum, CellField, Grid, Medium, PeriodicMedium, RampSpec, UnitCell,
                     build_grid, linear_profile, profile_from_faces, sample_periodic)
from .mincut import SequenceDescriptor


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    raw: dict
    base: Path = field(default_factory=Path.cwd)

    def section(self, name: str, required: bool = True) -> dict:
        sec = self.raw.get(name)
        if sec is None:
            if required:
                raise ConfigError(f"config has no [{name}] section")
            return {}
        if not isinstance(sec, dict):
            raise ConfigError(f"[{name}] must be a table")
        return sec

    def path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base / p


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return RunConfig(raw, path.parent.resolve())


def parse_config(text: str, base=".") -> RunConfig:
    return RunConfig(tomllib.loads(text), Path(base))


def _get(sec: dict, key: str, name: str, default=None, required=False):
    if key in sec:
        return sec[key]
    if required:
        raise ConfigError(f"[{name}] needs '{key}'")
    return default


def grid_from(cfg: RunConfig, expect_evolution: bool = False) -> Grid:
    g = cfg.section("grid")
    dim = int(_get(g, "dimension", "grid", required=True))
    try:
        return build_grid(dim, _get(g, "extents", "grid", [1.0] * dim),
                          _get(g, "counts", "grid", required=True),
                          _get(g, "dirichlet", "grid", []),
                          _get(g, "origin", "grid"), expect_evolution)
    except ValueError as exc:
        raise ConfigError(f"[grid]: {exc}") from None


def cell_field(spec, name: str) -> CellField:
    if isinstance(spec, (int, float)):
        return CellField("constant", (float(spec),))
    if not isinstance(spec, dict):
        raise ConfigError(f"{name}: expected a number or a table")
    kind = spec.get("kind", "constant")
    try:
        if kind == "table":
            return CellField("table", table=np.asarray(spec["table"], float))
        return CellField(kind, tuple(float(v) for v in spec.get("values", (1.0,))),
                         int(spec.get("axis", 0)), tuple(float(f) for f in spec.get("fractions", ())))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


def unit_cell_from(sec: dict, dimension: int, name: str = "cell") -> UnitCell:
    return UnitCell(dimension, cell_field(sec.get("bulk", 1.0), f"[{name}].bulk"),
                    cell_field(sec.get("toughness", 1.0), f"[{name}].toughness"),
                    float(sec.get("p", 2.0)))


def medium_from(cfg: RunConfig, grid: Grid) -> Medium:
    m = cfg.section("medium")
    kind = m.get("kind", "constant")
    p = float(m.get("p", 2.0))
    try:
        if kind == "constant":
            med = Medium.constant(grid, float(m.get("bulk", 1.0)), float(m.get("toughness", 1.0)), p)
        elif kind in ("layered", "checkerboard"):
            cell = UnitCell(grid.dimension,
                            CellField(kind, tuple(m.get("bulk_values", (1.0, 1.0))), int(m.get("axis", 0)),
                                      tuple(m.get("fractions", ()))),
                            CellField(kind, tuple(m.get("toughness_values", (1.0, 1.0))), int(m.get("axis", 0)),
                                      tuple(m.get("fractions", ()))), p)
            med = sample_periodic(PeriodicMedium(cell, float(m.get("eps", 1.0))), grid)
        elif kind == "periodic":
            cell = unit_cell_from(m.get("cell", {}), grid.dimension, "medium.cell")
            med = sample_periodic(PeriodicMedium(cell, float(_get(m, "eps", "medium", required=True))), grid)
        elif kind == "table":
            a = read_index_table(cfg.path(_get(m, "bulk_csv", "medium", required=True)), grid.n_cells)
            k = read_index_table(cfg.path(_get(m, "toughness_csv", "medium", required=True)), grid.n_edges)
            both = np.concatenate([a, k])
            med = Medium(a, k, float(m.get("alpha", both.min())), float(m.get("beta", both.max())), p)
        else:
            raise ConfigError(f"[medium] unknown kind {kind!r}")
        if "alpha" in m or "beta" in m:
            med = Medium(med.bulk, med.toughness, float(m.get("alpha", med.alpha)),
                         float(m.get("beta", med.beta)), med.p)
        if "boundary_toughness" in m:
            bt = np.broadcast_to(np.asarray(m["boundary_toughness"], float), (grid.n_dirichlet,))
            med = Medium(med.bulk, med.toughness, med.alpha, med.beta, med.p, np.array(bt))
    except (ValueError, OSError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[medium]: {exc}") from None
    return med


def ramp_from(sec: dict, name: str = "datum") -> RampSpec:
    faces = sec.get("faces", {})
    slope = sec.get("slope", ())
    if not faces and not slope:
        raise ConfigError(f"[{name}] needs 'faces' or 'slope'")
    return RampSpec(float(_get(sec, "t_end", name, required=True)), float(_get(sec, "dt", name, required=True)),
                    tuple(sorted((str(k), float(v)) for k, v in faces.items())),
                    tuple(float(s) for s in slope))


def datum_from(cfg: RunConfig, grid: Grid) -> BoundaryDatum:
    d = cfg.section("datum")
    try:
        if "times" in d:
            if "faces" in d:
                prof = profile_from_faces(grid, {k: float(v) for k, v in d["faces"].items()})
            elif "slope" in d:
                prof = linear_profile(d["slope"])
            else:
                raise ConfigError("[datum] needs 'faces' or 'slope'")
            return BoundaryDatum.ramp(grid, prof, np.asarray(d["times"], float), d.get("bound"))
        return ramp_from(d).build(grid)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[datum]: {exc}") from None


def backend_from(cfg: RunConfig, dimension: int) -> Backend:
    b = dict(cfg.section("backend", required=False))
    name = b.pop("name", "exhaustive-1d" if dimension == 1 else "path")
    try:
        return make_backend(name, **b)
    except TypeError as exc:
        raise ConfigError(f"[backend]: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"[backend]: {exc}") from None


def descriptor_from(cfg: RunConfig) -> SequenceDescriptor:
    p = cfg.section("probe")
    kind = p.get("generator", "teeth")
    if kind == "edges":
        _, rows = read_csv(cfg.path(_get(p, "edges_csv", "probe", required=True)))
        return SequenceDescriptor("edges", edges=tuple(int(r[0]) for r in rows))
    if kind not in ("teeth", "fraction", "fixed-line"):
        raise ConfigError(f"[probe] unknown generator {kind!r}")
    return SequenceDescriptor(kind, float(p.get("a", 0.5)))
