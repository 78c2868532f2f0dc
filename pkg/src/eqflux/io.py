"""Serialization: run configuration, CSV histories, indicator tables, VTK and reports."""
from __future__ import annotations

import configparser
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adapt import ConvergenceHistory, HistoryRow
from .mesh import Mesh

HISTORY_COLUMNS = ("step", "ndof", "elements", "eta", "osc", "error", "ieff", "seconds")
SWEEP_COLUMNS = ("kappa", "eta", "error", "ieff")
FLOAT_FMT = "%.16e"


class ConfigError(ValueError):
    """Malformed or inconsistent configuration; carries the offending line when known."""

    def __init__(self, msg, line: int | None = None):
        super().__init__(f"line {line}: {msg}" if line is not None else msg)
        self.line = line


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return FLOAT_FMT % float(v)


# configuration -----------------------------------------------------------------

PROBLEM_PARAMS = {
    "sinsin": {"kappa": float, "n": int},
    "layer": {"kappa": float, "n": int},
    "example1": {"kappa": float, "segments": int},
    "example2": {"kappa": float, "n": int, "outside": float},
    "halfzero": {"kappa": float, "n": int},
}
_RENAME = {("example1", "segments"): "boundary_segments"}


@dataclass
class RunConfig:
    problem: str = "layer"
    params: dict = field(default_factory=dict)
    mode: str | None = None
    kappa0: float | None = None
    zeta0: float | None = None
    rel_tol: float = 1e-12
    tol: float = math.inf
    theta: float = 0.5
    max_steps: int = 30
    max_ndof: int | None = None
    error: str = "auto"
    sweep_kappa: list = field(default_factory=list)
    sweep_levels: list = field(default_factory=list)
    out: Path = Path("out")
    vtk: bool = True
    deterministic: bool = False

    def problem_kwargs(self) -> dict:
        return {_RENAME.get((self.problem, k), k): v for k, v in self.params.items()}


def _key_lines(text: str) -> dict:
    """(section, key) -> 1-based line number, for error messages."""
    where = {}
    section = None
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            where[(section, None)] = i
        elif section is not None:
            for sep in ("=", ":"):
                if sep in line:
                    where[(section, line.split(sep, 1)[0].strip().lower())] = i
                    break
    return where


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("expected a [section] header", exc.lineno) from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r}", exc.lineno) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section {exc.section!r}", exc.lineno) from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError("cannot parse line", line) from None
    lines = _key_lines(text)
    known = {"problem", "estimator", "solver", "adapt", "sweep", "output"}
    for sec in cp.sections():
        if sec not in known:
            raise ConfigError(f"unknown section [{sec}]", lines.get((sec, None)))

    def get(sec, key, conv, default):
        if not cp.has_option(sec, key):
            return default
        raw = cp.get(sec, key)
        try:
            return conv(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"bad value {raw!r} for {sec}.{key}", lines.get((sec, key))) from None

    def floats(raw):
        return [float(v) for v in raw.replace(",", " ").split()]

    def ints(raw):
        return [int(v) for v in raw.replace(",", " ").split()]

    def boolean(raw):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(raw)

    cfg = RunConfig()
    name = get("problem", "name", str, "layer")
    if name not in PROBLEM_PARAMS:
        raise ConfigError(f"unknown problem {name!r}", lines.get(("problem", "name")))
    cfg.problem = name
    if cp.has_section("problem"):
        for key in cp.options("problem"):
            if key == "name":
                continue
            conv = PROBLEM_PARAMS[name].get(key)
            if conv is None:
                raise ConfigError(f"problem {name!r} takes no parameter {key!r}", lines.get(("problem", key)))
            cfg.params[key] = get("problem", key, conv, None)
    cfg.mode = get("estimator", "mode", str, None)
    if cfg.mode not in (None, "constrained", "penalized"):
        raise ConfigError(f"mode must be constrained or penalized, got {cfg.mode!r}",
                          lines.get(("estimator", "mode")))
    cfg.kappa0 = get("estimator", "kappa0", float, None)
    cfg.zeta0 = get("estimator", "zeta0", float, None)
    cfg.rel_tol = get("solver", "rel_tol", float, cfg.rel_tol)
    cfg.tol = get("adapt", "tol", float, cfg.tol)
    cfg.theta = get("adapt", "theta", float, cfg.theta)
    cfg.max_steps = get("adapt", "max_steps", int, cfg.max_steps)
    cfg.max_ndof = get("adapt", "max_ndof", int, None)
    cfg.error = get("adapt", "error", str, cfg.error)
    cfg.sweep_kappa = get("sweep", "kappa", floats, [])
    cfg.sweep_levels = get("sweep", "levels", ints, [])
    cfg.out = Path(get("output", "dir", str, "out"))
    cfg.vtk = get("output", "vtk", boolean, True)
    cfg.deterministic = get("output", "deterministic", boolean, False)

    checks = [
        (cfg.tol > 0, "adapt.tol must be positive", ("adapt", "tol")),
        (0 <= cfg.theta <= 1, "adapt.theta must lie in [0, 1]", ("adapt", "theta")),
        (cfg.max_steps >= 0, "adapt.max_steps must be non-negative", ("adapt", "max_steps")),
        (cfg.rel_tol > 0, "solver.rel_tol must be positive", ("solver", "rel_tol")),
        (cfg.error in ("auto", "exact", "reference", "none"),
         "adapt.error must be auto, exact, reference or none", ("adapt", "error")),
        (all(k > 0 for k in cfg.sweep_kappa), "sweep.kappa values must be positive", ("sweep", "kappa")),
        (all(n > 0 for n in cfg.sweep_levels), "sweep.levels must be positive", ("sweep", "levels")),
        (cfg.params.get("kappa", 1.0) >= 0, "problem.kappa must be non-negative", ("problem", "kappa")),
    ]
    for ok, msg, key in checks:
        if not ok:
            raise ConfigError(msg, lines.get(key))
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


# CSV -------------------------------------------------------------------------------

def write_history_csv(history: ConvergenceHistory, path) -> None:
    if not len(history):
        raise ValueError("empty history")
    with open(path, "w", newline="") as fh:
        fh.write(",".join(HISTORY_COLUMNS) + "\n")
        for r in history.rows:
            fh.write(",".join(_fmt(getattr(r, c)) for c in HISTORY_COLUMNS) + "\n")


def read_history_csv(path) -> ConvergenceHistory:
    hist = ConvergenceHistory()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            def opt(k):
                return float(row[k]) if row[k] != "" else None
            hist.rows.append(HistoryRow(int(row["step"]), int(row["ndof"]), int(row["elements"]),
                                        float(row["eta"]), float(row["osc"]), opt("error"),
                                        opt("ieff"), float(row["seconds"])))
    return hist


def write_table_csv(columns, rows, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(columns) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(v) for v in r) + "\n")


def write_indicators_csv(report, mesh: Mesh, path) -> None:
    parts = report.parts
    rows = zip(range(mesh.n_elements), mesh.kappa, report.eta, report.osc, parts.eps, parts.r)
    write_table_csv(("element", "kappa", "eta", "osc", "eps", "r"), rows, path)


# VTK -------------------------------------------------------------------------------

def export_vtk(mesh: Mesh, path, point_data: dict | None = None, cell_data: dict | None = None,
               title: str = "eqflux") -> None:
    """Legacy ASCII VTK unstructured grid of triangles with scalar fields."""
    point_data = point_data or {}
    cell_data = cell_data or {}
    for name, v in point_data.items():
        if len(v) != mesh.n_vertices:
            raise ValueError(f"point field {name!r} has {len(v)} values, mesh has {mesh.n_vertices} nodes")
    for name, v in cell_data.items():
        if len(v) != mesh.n_elements:
            raise ValueError(f"cell field {name!r} has {len(v)} values, mesh has {mesh.n_elements} elements")
    n, m = mesh.n_vertices, mesh.n_elements
    out = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {n} double"]
    out += [f"{x:.17g} {y:.17g} 0" for x, y in mesh.vertices]
    out.append(f"CELLS {m} {4 * m}")
    out += [f"3 {a} {b} {c}" for a, b, c in mesh.elements]
    out.append(f"CELL_TYPES {m}")
    out += ["5"] * m

    def section(kind, count, fields):
        if not fields:
            return
        out.append(f"{kind} {count}")
        for name, vals in fields.items():
            out.append(f"SCALARS {name} double 1")
            out.append("LOOKUP_TABLE default")
            out.extend(f"{float(v):.17g}" for v in vals)

    section("POINT_DATA", n, point_data)
    section("CELL_DATA", m, cell_data)
    Path(path).write_text("\n".join(out) + "\n")


# report ------------------------------------------------------------------------------

def write_report(path, lines: dict) -> None:
    width = max(len(k) for k in lines) if lines else 0
    text = "\n".join(f"{k.ljust(width)} : {v}" for k, v in lines.items())
    Path(path).write_text(text + "\n")
