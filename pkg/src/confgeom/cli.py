"""Scenario runner.

A scenario is a TOML document describing a chart, optional Weyl, Mobius and
Laplace data, an optional immersion and curve, and a list of tasks.  ``run``
validates it, executes the tasks and writes ``report.json`` (plus
``trace_*.csv`` for integrated curves).  Exit codes:

    0  every check within tolerance
    1  some check outside tolerance
    2  the file (or an embedded expression) does not parse
    3  the scenario does not validate
    4  numerical failure while running
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from . import catalog as _catalog
from . import random_data as rd
from .conformal import (
    ConformalChart,
    ConformalError,
    LaplaceStructure,
    MobiusStructure,
    WeylStructure,
    curvature_package,
    laplace_canonical,
    mobius_canonical,
    mobius_operator,
    transform_check,
)
from .embedding import (
    STRONGLY_GEODESIC,
    TOTALLY_UMBILICAL,
    WEAKLY_GEODESIC,
    NONE,
    EmbeddingError,
    Immersion,
    classify_geodesy,
    embedding_invariants,
)
from .geodesic import (
    GaugeGeometry,
    GeodesicError,
    circle_fit_deviation,
    integrate_conformal_geodesic,
    state_from_coordinates,
)
from .jets import DomainError, ExprSyntaxError, parse
from .realization import (
    RealizationData,
    RealizationError,
    covariant_table,
    realize,
    ricci_table,
    round_trip,
    section5_scenario,
)

EXIT_OK = 0
EXIT_TOLERANCE = 1
EXIT_PARSE = 2
EXIT_VALIDATION = 3
EXIT_NUMERICAL = 4

TASKS = ("curvature", "geodesic", "invariants", "classify", "realize", "verify_section5")
VERDICTS = (NONE, TOTALLY_UMBILICAL, WEAKLY_GEODESIC, STRONGLY_GEODESIC)


class ScenarioParseError(ValueError):
    """The document or one of its expressions is not well formed."""


class ScenarioError(ValueError):
    """The document parses but does not describe a runnable scenario."""


# ---------------------------------------------------------------------------
# reading tables


_TOP_KEYS = {"name", "description", "seed", "tol", "tasks", "manifold", "weyl", "mobius", "laplace",
             "immersion", "curve", "curvature", "realize", "section5", "expect"}
_SECTION_KEYS = {
    "manifold": {"kind", "dim", "metric", "radius", "gauge_factors", "gauge", "scale", "terms"},
    "weyl": {"theta", "random", "scale"},
    "mobius": {"h0"},
    "laplace": {"sigma"},
    "immersion": {"dim", "components", "points", "npoints", "random_graph", "scale", "mobius", "laplace"},
    "curve": {"x0", "v0", "a0", "t_end", "step"},
    "curvature": {"points", "npoints", "theta_change", "density"},
    "realize": {"base_metric", "g_nu", "B0", "connection", "mu", "rho", "points", "epsilon", "mobius", "laplace"},
    "section5": {"grid"},
    "expect": {"verdict", "rho", "mu_zero", "circle", "schouten_factor"},
}


def _check_keys(table: dict, allowed: set, where: str) -> None:
    extra = sorted(set(table) - allowed)
    if extra:
        raise ScenarioError(f"unknown key(s) in {where}: {', '.join(extra)}")


def _section(doc: dict, key: str) -> Optional[dict]:
    val = doc.get(key)
    if val is None:
        return None
    if not isinstance(val, dict):
        raise ScenarioError(f"[{key}] must be a table")
    _check_keys(val, _SECTION_KEYS[key], f"[{key}]")
    return val


def _number(val, what: str) -> float:
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ScenarioError(f"{what} must be a number")
    return float(val)


def _int(val, what: str, lo: int = 1, hi: int = 8) -> int:
    if isinstance(val, bool) or not isinstance(val, int) or not lo <= val <= hi:
        raise ScenarioError(f"{what} must be an integer in {lo}..{hi}")
    return val


def _vector(val, dim: int, what: str) -> np.ndarray:
    if not isinstance(val, list) or len(val) != dim:
        raise ScenarioError(f"{what} must be a list of {dim} numbers")
    return np.array([_number(v, what) for v in val])


def _points(val, dim: int, what: str) -> list[np.ndarray]:
    if not isinstance(val, list) or not val:
        raise ScenarioError(f"{what} must be a non-empty list of points")
    return [_vector(p, dim, f"each point in {what}") for p in val]


def _expr(val, what: str):
    if isinstance(val, bool):
        raise ScenarioError(f"{what} must be an expression or a number")
    if isinstance(val, (int, float)):
        return float(val)
    if not isinstance(val, str):
        raise ScenarioError(f"{what} must be an expression or a number")
    try:
        return parse(val)
    except ExprSyntaxError as exc:
        raise ScenarioParseError(f"{what}: {exc}") from exc


def _expr_table(val, shape: tuple, what: str):
    if not shape:
        return _expr(val, what)
    if not isinstance(val, list) or len(val) != shape[0]:
        raise ScenarioError(f"{what} must have shape {list(shape)}")
    return [_expr_table(v, shape[1:], what) for v in val]


def _matrix(val, rows: int, cols: int, what: str) -> np.ndarray:
    if not isinstance(val, list) or len(val) != rows:
        raise ScenarioError(f"{what} must be a {rows}x{cols} matrix")
    return np.array([_vector(row, cols, what) for row in val])


def _shape_of(val) -> tuple:
    shape = []
    while isinstance(val, list):
        shape.append(len(val))
        if not val:
            break
        val = val[0]
    return tuple(shape)


# ---------------------------------------------------------------------------
# scenario


@dataclass
class Scenario:
    """A validated scenario with every structure already constructed."""

    name: str
    description: str
    seed: int
    tol: float
    tasks: list
    text: str
    chart: Optional[ConformalChart] = None
    weyl: Optional[WeylStructure] = None
    mobius: Optional[MobiusStructure] = None
    laplace: Optional[LaplaceStructure] = None
    immersion: Optional[Immersion] = None
    imm_points: list = field(default_factory=list)
    n_mobius: Optional[MobiusStructure] = None
    n_laplace: Optional[LaplaceStructure] = None
    curve: Optional[dict] = None
    curvature_points: list = field(default_factory=list)
    theta_change: Optional[list] = None
    density: Any = None
    realize: Optional[dict] = None
    section5: dict = field(default_factory=dict)
    expect: dict = field(default_factory=dict)

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()

    @property
    def dim(self) -> Optional[int]:
        return None if self.chart is None else self.chart.dim


def parse_document(text: str) -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioParseError(f"invalid TOML: {exc}") from exc


def load_scenario(text: str, seed: Optional[int] = None, tol: Optional[float] = None) -> Scenario:
    """Parse and validate a scenario document; ``seed`` and ``tol`` override the file."""
    doc = parse_document(text)
    try:
        return _build(doc, text, seed, tol)
    except (ScenarioParseError, ScenarioError):
        raise
    except ExprSyntaxError as exc:
        raise ScenarioParseError(str(exc)) from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise ScenarioError(str(exc)) from exc


def _build(doc: dict, text: str, seed_override, tol_override) -> Scenario:
    _check_keys(doc, _TOP_KEYS, "the top level")
    name = doc.get("name", "scenario")
    if not isinstance(name, str) or not name:
        raise ScenarioError("name must be a non-empty string")
    seed = doc.get("seed", 0) if seed_override is None else seed_override
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ScenarioError("seed must be an unsigned 64-bit integer")
    tol = _number(doc.get("tol", 1e-6), "tol") if tol_override is None else float(tol_override)
    if not tol > 0:
        raise ScenarioError("tol must be positive")
    tasks = doc.get("tasks")
    if not isinstance(tasks, list) or not tasks:
        raise ScenarioError("tasks must be a non-empty list")
    for t in tasks:
        if t not in TASKS:
            raise ScenarioError(f"unknown task {t!r}; choose from {', '.join(TASKS)}")
    if len(set(tasks)) != len(tasks):
        raise ScenarioError("tasks must not repeat")
    scn = Scenario(name, str(doc.get("description", "")), int(seed), tol, list(tasks), text)
    rng = np.random.default_rng(scn.seed)

    man = _section(doc, "manifold")
    if man is not None:
        _build_manifold(scn, man, doc, rng)
    needs_chart = {"curvature", "geodesic", "invariants", "classify"} & set(tasks)
    if needs_chart and scn.chart is None:
        raise ScenarioError(f"task(s) {', '.join(sorted(needs_chart))} need a [manifold] table")
    if scn.chart is None:
        for key in ("weyl", "mobius", "laplace", "immersion", "curve", "curvature"):
            if key in doc:
                raise ScenarioError(f"[{key}] needs a [manifold] table")

    imm = _section(doc, "immersion")
    if imm is not None:
        _build_immersion(scn, imm, rng)
    if {"invariants", "classify"} & set(tasks) and scn.immersion is None:
        raise ScenarioError("invariants and classify need an [immersion] table")
    if "classify" in tasks and scn.immersion is not None:
        if scn.immersion.n == 2 and scn.n_mobius is None:
            raise ScenarioError("classifying a surface needs [immersion.mobius]")
        if scn.immersion.n == 1 and scn.n_laplace is None:
            raise ScenarioError("classifying a curve needs [immersion.laplace]")
    if {"invariants", "classify"} & set(tasks) and scn.dim == 2 and scn.mobius is None:
        raise ScenarioError("a surface ambient needs a [mobius] table")

    curve = _section(doc, "curve")
    if curve is not None:
        _build_curve(scn, curve)
    if "geodesic" in tasks and scn.curve is None:
        raise ScenarioError("the geodesic task needs a [curve] table")

    curv = _section(doc, "curvature")
    if "curvature" in tasks:
        _build_curvature(scn, curv or {}, rng)
    elif curv is not None:
        raise ScenarioError("[curvature] given but the curvature task is not requested")

    real = _section(doc, "realize")
    if "realize" in tasks:
        if real is None:
            raise ScenarioError("the realize task needs a [realize] table")
        _build_realize(scn, real)
    s5 = _section(doc, "section5") or {}
    scn.section5 = {"grid": _int(s5.get("grid", 8), "section5.grid", 2, 64)}

    exp = _section(doc, "expect") or {}
    _build_expect(scn, exp)
    return scn


def _build_manifold(scn: Scenario, man: dict, doc: dict, rng) -> None:
    kind = man.get("kind", "metric")
    factors = man.get("gauge_factors", {})
    if not isinstance(factors, dict):
        raise ScenarioError("manifold.gauge_factors must be a table of expressions")
    factors = {k: _expr(v, f"gauge factor {k}") for k, v in factors.items()}
    if kind == "metric":
        metric = man.get("metric")
        if metric is None:
            raise ScenarioError("manifold.metric is required for kind = 'metric'")
        m = len(metric) if isinstance(metric, list) else 0
        if "dim" in man and _int(man["dim"], "manifold.dim") != m:
            raise ScenarioError("manifold.dim does not match the metric table")
        _int(m, "manifold dimension")
        chart = ConformalChart(_expr_table(metric, (m, m), "manifold.metric"), m, factors, name=scn.name)
    elif kind in ("euclidean", "sphere", "random_poly"):
        if "dim" not in man:
            raise ScenarioError(f"manifold.dim is required for kind = {kind!r}")
        m = _int(man["dim"], "manifold.dim")
        if kind == "euclidean":
            chart = ConformalChart.euclidean(m, gauge_factors=factors, name=scn.name)
        elif kind == "sphere":
            radius = _number(man.get("radius", 1.0), "manifold.radius")
            if radius <= 0:
                raise ScenarioError("manifold.radius must be positive")
            chart = ConformalChart.round_sphere(m, radius, gauge_factors=factors, name=scn.name)
        else:
            scale = _number(man.get("scale", 0.1), "manifold.scale")
            terms = _int(man.get("terms", 4), "manifold.terms", 1, 20)
            entries = rd.random_metric_entries(rng, m, scale, terms)
            chart = ConformalChart(entries, m, factors, name=scn.name)
    else:
        raise ScenarioError(f"unknown manifold kind {kind!r}")
    if "gauge" in man:
        if man["gauge"] not in chart.gauge_factors:
            raise ScenarioError(f"manifold.gauge {man['gauge']!r} is not among the gauge factors")
        chart = chart.gauge(man["gauge"])
    scn.chart = chart
    m = chart.dim

    weyl = _section(doc, "weyl")
    if weyl is None:
        scn.weyl = WeylStructure(chart)
    elif weyl.get("random", False):
        scale = _number(weyl.get("scale", 0.5), "weyl.scale")
        scn.weyl = WeylStructure(chart, rd.random_theta(rng, m, scale))
    else:
        if "theta" not in weyl:
            raise ScenarioError("[weyl] needs theta or random = true")
        scn.weyl = WeylStructure(chart, _expr_table(weyl["theta"], (m,), "weyl.theta"))

    mob = _section(doc, "mobius")
    if mob is not None:
        if m != 2:
            raise ScenarioError("[mobius] only applies to a two-dimensional manifold")
        scn.mobius = MobiusStructure(chart, _expr_table(mob.get("h0", [[0, 0], [0, 0]]), (2, 2), "mobius.h0"))
    lap = _section(doc, "laplace")
    if lap is not None:
        if m != 1:
            raise ScenarioError("[laplace] only applies to a one-dimensional manifold")
        scn.laplace = LaplaceStructure(chart, _expr(lap.get("sigma", 0), "laplace.sigma"))
    if m == 1:
        raise ScenarioError("the ambient manifold must have dimension at least 2")


def _build_immersion(scn: Scenario, imm: dict, rng) -> None:
    m = scn.chart.dim
    if "dim" not in imm:
        raise ScenarioError("immersion.dim is required")
    n = _int(imm["dim"], "immersion.dim", 1, m - 1)
    if imm.get("random_graph", False):
        if "components" in imm:
            raise ScenarioError("give either immersion.components or random_graph, not both")
        scale = _number(imm.get("scale", 0.3), "immersion.scale")
        scn.immersion = rd.random_graph(rng, scn.chart, n, scale)
    else:
        if "components" not in imm:
            raise ScenarioError("immersion.components is required")
        comps = _expr_table(imm["components"], (m,), "immersion.components")
        scn.immersion = Immersion(scn.chart, comps, n=n)
    if "points" in imm:
        scn.imm_points = _points(imm["points"], n, "immersion.points")
    else:
        k = _int(imm.get("npoints", 3), "immersion.npoints", 1, 100)
        scn.imm_points = [np.asarray(p) for p in rd.random_points(rng, n, k)]
    sub = imm.get("mobius")
    if sub is not None:
        if n != 2 or not isinstance(sub, dict):
            raise ScenarioError("[immersion.mobius] applies to two-dimensional immersions only")
        _check_keys(sub, {"h0"}, "[immersion.mobius]")
        h0 = _expr_table(sub.get("h0", [[0, 0], [0, 0]]), (2, 2), "immersion.mobius.h0")
        scn.n_mobius = MobiusStructure(scn.immersion.induced_chart, h0)
    sub = imm.get("laplace")
    if sub is not None:
        if n != 1 or not isinstance(sub, dict):
            raise ScenarioError("[immersion.laplace] applies to curves only")
        _check_keys(sub, {"sigma"}, "[immersion.laplace]")
        scn.n_laplace = LaplaceStructure(scn.immersion.induced_chart, _expr(sub.get("sigma", 0), "immersion.laplace.sigma"))


def _build_curve(scn: Scenario, curve: dict) -> None:
    m = scn.chart.dim
    if m == 2 and scn.mobius is None:
        raise ScenarioError("conformal geodesics on a surface need a [mobius] table")
    for key in ("x0", "v0"):
        if key not in curve:
            raise ScenarioError(f"curve.{key} is required")
    x0 = _vector(curve["x0"], m, "curve.x0")
    v0 = _vector(curve["v0"], m, "curve.v0")
    a0 = _vector(curve.get("a0", [0.0] * m), m, "curve.a0")
    t_end = _number(curve.get("t_end", 1.0), "curve.t_end")
    step = _number(curve.get("step", 1e-3), "curve.step")
    if not (t_end > 0 and 0 < step <= t_end):
        raise ScenarioError("need 0 < curve.step <= curve.t_end")
    nsteps = round(t_end / step)
    if abs(nsteps * step - t_end) > 1e-9 * t_end:
        raise ScenarioError("curve.t_end must be a multiple of curve.step")
    if not np.any(v0):
        raise ScenarioError("curve.v0 must be non-zero")
    scn.curve = {"x0": x0, "v0": v0, "a0": a0, "t_end": t_end, "step": step}


def _build_curvature(scn: Scenario, curv: dict, rng) -> None:
    m = scn.chart.dim
    if m == 2 and scn.mobius is None:
        raise ScenarioError("the curvature task on a surface needs a [mobius] table")
    if "points" in curv:
        scn.curvature_points = _points(curv["points"], m, "curvature.points")
    else:
        k = _int(curv.get("npoints", 3), "curvature.npoints", 1, 100)
        scn.curvature_points = [np.asarray(p) for p in rd.random_points(rng, m, k)]
    if "theta_change" in curv:
        scn.theta_change = _expr_table(curv["theta_change"], (m,), "curvature.theta_change")
    else:
        scn.theta_change = [parse(s) for s in rd.random_theta(rng, m, 0.5)]
    scn.density = _expr(curv["density"], "curvature.density") if "density" in curv else parse(rd.random_density(rng, m))


def _build_realize(scn: Scenario, real: dict) -> None:
    for key in ("base_metric", "B0", "mu", "rho"):
        if key not in real:
            raise ScenarioError(f"realize.{key} is required")
    n = len(real["base_metric"]) if isinstance(real["base_metric"], list) else 0
    _int(n, "realize base dimension", 1, 7)
    base = ConformalChart(_expr_table(real["base_metric"], (n, n), "realize.base_metric"), n, name="base")
    B0_shape = _shape_of(real["B0"])
    if len(B0_shape) != 3 or B0_shape[:2] != (n, n):
        raise ScenarioError(f"realize.B0 must have shape [{n}, {n}, r]")
    r = B0_shape[2]
    g_nu = _matrix(real.get("g_nu", np.eye(r).tolist()), r, r, "realize.g_nu")
    B0 = _expr_table(real["B0"], (n, n, r), "realize.B0")
    conn = _expr_table(real["connection"], (n, r, r), "realize.connection") if "connection" in real else None
    mob = lap = None
    if "mobius" in real:
        if n != 2:
            raise ScenarioError("[realize.mobius] applies to a two-dimensional base only")
        _check_keys(real["mobius"], {"h0"}, "[realize.mobius]")
        mob = MobiusStructure(base, _expr_table(real["mobius"].get("h0", [[0, 0], [0, 0]]), (2, 2), "realize.mobius.h0"))
    if "laplace" in real:
        if n != 1:
            raise ScenarioError("[realize.laplace] applies to a one-dimensional base only")
        _check_keys(real["laplace"], {"sigma"}, "[realize.laplace]")
        lap = LaplaceStructure(base, _expr(real["laplace"].get("sigma", 0), "realize.laplace.sigma"))
    if n == 2 and mob is None:
        raise ScenarioError("a two-dimensional base needs [realize.mobius]")
    if n == 1 and lap is None:
        raise ScenarioError("a one-dimensional base needs [realize.laplace]")
    data = RealizationData(base, g_nu, B0, connection=conn, n_mobius=mob, n_laplace=lap)
    pts = _points(real.get("points", [[0.0] * n]), n, "realize.points")
    data.validate(pts)
    eps = real.get("epsilon")
    scn.realize = {
        "data": data,
        "mu": _expr_table(real["mu"], (n, r), "realize.mu"),
        "rho": _expr_table(real["rho"], (n, n), "realize.rho"),
        "points": pts,
        "epsilon": None if eps is None else _number(eps, "realize.epsilon"),
    }


def _build_expect(scn: Scenario, exp: dict) -> None:
    out = {}
    if "verdict" in exp:
        if exp["verdict"] not in VERDICTS:
            raise ScenarioError(f"expect.verdict must be one of {', '.join(VERDICTS)}")
        if "classify" not in scn.tasks:
            raise ScenarioError("expect.verdict needs the classify task")
        out["verdict"] = exp["verdict"]
    if "rho" in exp:
        if scn.immersion is None:
            raise ScenarioError("expect.rho needs an immersion")
        n = scn.immersion.n
        out["rho"] = _matrix(exp["rho"], n, n, "expect.rho")
    for key in ("mu_zero", "circle"):
        if key in exp:
            if not isinstance(exp[key], bool):
                raise ScenarioError(f"expect.{key} must be true or false")
            out[key] = exp[key]
    if out.get("circle") and (scn.curve is None or scn.dim != 3):
        raise ScenarioError("expect.circle needs a curve in a three-dimensional chart")
    if "schouten_factor" in exp:
        if "curvature" not in scn.tasks:
            raise ScenarioError("expect.schouten_factor needs the curvature task")
        out["schouten_factor"] = _number(exp["schouten_factor"], "expect.schouten_factor")
    scn.expect = out


# ---------------------------------------------------------------------------
# tasks


def _check(value: float, tol: float, mode: str = "max") -> dict:
    """A residual that must stay below ``tol`` (``mode='min'``: stay above it)."""
    value = float(value)
    ok = value <= tol if mode == "max" else value > tol
    return {"residual": value, "tol": tol, "mode": mode, "pass": bool(ok and np.isfinite(value))}


def _sup(a) -> float:
    return float(np.max(np.abs(np.asarray(a, float)), initial=0.0))


def task_curvature(scn: Scenario, out: Optional[Path]) -> dict:
    w, tol, m = scn.weyl, scn.tol, scn.dim
    points, checks = [], {}
    worst = {"reassembly": 0.0, "transform": 0.0, "mobius_invariance": 0.0, "laplace_invariance": 0.0,
             "schouten_factor": 0.0}
    w2 = w.shifted(scn.theta_change)
    lc = WeylStructure(scn.chart)
    for p in scn.curvature_points:
        entry = {"point": p.tolist()}
        if m >= 3:
            pkg = curvature_package(w, p)
            entry.update(ric=pkg.ric, scal=pkg.scal, faraday=pkg.F, schouten=pkg.h)
            worst["reassembly"] = max(worst["reassembly"], pkg.reassembly_residual())
            rep = transform_check(w, scn.theta_change, p)
            entry["transform"] = rep.as_dict()
            worst["transform"] = max(worst["transform"], rep.max())
            d = _sup(mobius_canonical(w, scn.density, p) - mobius_canonical(w2, scn.density, p))
            worst["mobius_invariance"] = max(worst["mobius_invariance"], d)
            h_lc = curvature_package(lc, p).h
        else:
            pkg = curvature_package(w, p, mobius=scn.mobius)
            entry.update(ric=pkg.ric, scal=pkg.scal, faraday=pkg.F, schouten=pkg.h)
            d = _sup(mobius_operator(w, scn.density, p, scn.mobius) - mobius_operator(w2, scn.density, p, scn.mobius))
            worst["mobius_invariance"] = max(worst["mobius_invariance"], d)
            h_lc = curvature_package(lc, p, mobius=scn.mobius).h
        k = abs(laplace_canonical(w, scn.density, p) - laplace_canonical(w2, scn.density, p))
        worst["laplace_invariance"] = max(worst["laplace_invariance"], k)
        if "schouten_factor" in scn.expect:
            g = scn.chart.metric_at(p)
            worst["schouten_factor"] = max(worst["schouten_factor"], _sup(h_lc - scn.expect["schouten_factor"] * g))
        points.append(entry)
    if m >= 3:
        checks["reassembly"] = _check(worst["reassembly"], tol)
        checks["transform_laws"] = _check(worst["transform"], tol)
    checks["mobius_weyl_invariance"] = _check(worst["mobius_invariance"], tol)
    checks["laplace_weyl_invariance"] = _check(worst["laplace_invariance"], tol)
    if "schouten_factor" in scn.expect:
        checks["schouten_factor"] = _check(worst["schouten_factor"], tol)
    return {"points": points, "checks": checks}


def task_geodesic(scn: Scenario, out: Optional[Path]) -> dict:
    c = scn.curve
    geo = GaugeGeometry(scn.chart, mobius=scn.mobius, laplace=scn.laplace)
    init = state_from_coordinates(geo, c["x0"], c["v0"], c["a0"])
    trace = integrate_conformal_geodesic(geo, init, (0.0, c["t_end"]), c["step"])
    checks = {"geodesic_residual": _check(trace.max_residual, scn.tol)}
    result = {
        "steps": len(trace.t) - 1,
        "final": {"x": trace.x[-1], "v": trace.v[-1], "w": trace.w[-1]},
        "max_residual": trace.max_residual,
    }
    if scn.expect.get("circle"):
        dev = circle_fit_deviation(trace.x)
        result["circle_deviation"] = dev
        checks["circle_fit"] = _check(dev, scn.tol)
    if out is not None:
        path = out / "trace_geodesic.csv"
        trace.to_csv(path)
        result["trace"] = path.name
    result["checks"] = checks
    return result


def _invariant_kwargs(scn: Scenario) -> dict:
    return {"ambient_mobius": scn.mobius, "n_mobius": scn.n_mobius, "n_laplace": scn.n_laplace}


def task_invariants(scn: Scenario, out: Optional[Path]) -> dict:
    imm, tol = scn.immersion, scn.tol
    n = imm.n
    need_rho = not (n == 2 and scn.n_mobius is None) and not (n == 1 and scn.n_laplace is None)
    gauge_w = WeylStructure(scn.chart)
    kw = _invariant_kwargs(scn)
    points = []
    worst = {"mu": 0.0, "rho": 0.0, "weyl": 0.0}
    for p in scn.imm_points:
        inv = embedding_invariants(imm, scn.weyl, p, need_rho=need_rho, **kw)
        ref = embedding_invariants(imm, gauge_w, p, need_rho=need_rho, **kw)
        diffs = [_sup(inv.B0 - ref.B0), _sup(inv.kappa - ref.kappa)]
        if inv.mu is not None:
            diffs.append(_sup(inv.mu - ref.mu))
            worst["mu"] = max(worst["mu"], _sup(inv.mu))
        if need_rho:
            diffs.append(_sup(inv.rho - ref.rho))
            if "rho" in scn.expect:
                worst["rho"] = max(worst["rho"], _sup(inv.rho - scn.expect["rho"]))
        worst["weyl"] = max(worst["weyl"], max(diffs))
        points.append({
            "point": p.tolist(),
            "B0": inv.B0,
            "H": inv.H,
            "mu": inv.mu,
            "rho": inv.rho if need_rho else None,
            "kappa": inv.kappa,
        })
    checks = {"weyl_independence": _check(worst["weyl"], tol)}
    if scn.expect.get("mu_zero"):
        checks["mu_zero"] = _check(worst["mu"], tol)
    if "rho" in scn.expect:
        if not need_rho:
            raise ScenarioError("expect.rho needs the Mobius or Laplace structure of the submanifold")
        checks["rho_expected"] = _check(worst["rho"], tol)
    return {"points": points, "checks": checks}


def task_classify(scn: Scenario, out: Optional[Path]) -> dict:
    cls = classify_geodesy(scn.immersion, scn.imm_points, scn.weyl, tol=scn.tol, **_invariant_kwargs(scn))
    result = cls.as_dict()
    checks = {}
    if "verdict" in scn.expect:
        ok = cls.verdict == scn.expect["verdict"]
        checks["verdict"] = {"expected": scn.expect["verdict"], "found": cls.verdict, "pass": ok}
    result["checks"] = checks
    return result


def task_realize(scn: Scenario, out: Optional[Path]) -> dict:
    cfg, tol = scn.realize, scn.tol
    data = cfg["data"]
    points = []
    worst = {"round_trip": 0.0, "ricci": 0.0, "covariant": 0.0}
    for p in cfg["points"]:
        tot, pres = realize(data, cfg["mu"], cfg["rho"], p, cfg["epsilon"])
        rt = round_trip(tot, cfg["mu"], cfg["rho"], p)
        entry = {"point": p.tolist(), "prescription": pres.as_dict(), "epsilon": tot.epsilon,
                 "round_trip": rt.as_dict()}
        worst["round_trip"] = max(worst["round_trip"], rt.max)
        if data.m >= 3:
            ric = ricci_table(tot, p)
            cov = covariant_table(tot, p)
            entry["ricci_table"], entry["covariant_table"] = ric, cov
            worst["ricci"] = max(worst["ricci"], max(ric.values()))
            worst["covariant"] = max(worst["covariant"], max(cov.values()))
        points.append(entry)
    checks = {"round_trip": _check(worst["round_trip"], tol)}
    if data.m >= 3:
        checks["ricci_table"] = _check(worst["ricci"], tol)
        checks["covariant_table"] = _check(worst["covariant"], tol)
    return {"points": points, "checks": checks}


def task_verify_section5(scn: Scenario, out: Optional[Path]) -> dict:
    res = section5_scenario(grid=scn.section5["grid"], tol=scn.tol)
    checks = dict(res.pop("checks"))
    checks["verdict"] = {"expected": "not totally umbilical", "found": res["verdict"],
                         "pass": res["verdict"] == "not totally umbilical"}
    res.pop("pass")
    res["checks"] = checks
    return res


TASK_RUNNERS = {
    "curvature": task_curvature,
    "geodesic": task_geodesic,
    "invariants": task_invariants,
    "classify": task_classify,
    "realize": task_realize,
    "verify_section5": task_verify_section5,
}

NUMERICAL_ERRORS = (ArithmeticError, np.linalg.LinAlgError, GeodesicError, DomainError)
VALIDATION_ERRORS = (ScenarioError, ConformalError, EmbeddingError, RealizationError, ValueError)


# ---------------------------------------------------------------------------
# reports


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


@dataclass
class Report:
    scenario: Scenario
    tasks: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    error: Optional[dict] = None
    exit_code: int = EXIT_OK

    @property
    def passed(self) -> bool:
        return self.error is None and all(
            c["pass"] for t in self.tasks.values() for c in t.get("checks", {}).values()
        )

    def failures(self) -> list[str]:
        return [f"{t}.{k}" for t, res in self.tasks.items() for k, c in res.get("checks", {}).items() if not c["pass"]]

    def as_dict(self) -> dict:
        s = self.scenario
        return _jsonable({
            "tool": {"name": "confgeom", "version": __version__},
            "scenario": {"name": s.name, "description": s.description, "hash": s.hash, "seed": s.seed,
                         "tol": s.tol, "tasks": s.tasks},
            "tasks": self.tasks,
            "pass": self.passed,
            "failures": self.failures(),
            "error": self.error,
            "exit_code": self.exit_code,
            "timings": self.timings,
        })

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, indent=2) + "\n"


def _exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ExprSyntaxError):
        return EXIT_PARSE
    if isinstance(exc, NUMERICAL_ERRORS):
        return EXIT_NUMERICAL
    if isinstance(exc, VALIDATION_ERRORS):
        return EXIT_VALIDATION
    return EXIT_NUMERICAL


def run_scenario(scn: Scenario, out: Optional[Path] = None, jobs: int = 1) -> Report:
    """Run every task; independent tasks may run on ``jobs`` threads.

    Results are stored in task order, so the report does not depend on ``jobs``.
    """
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    report = Report(scn)

    def one(task):
        t0 = time.perf_counter()
        try:
            with np.errstate(over="raise", invalid="raise", divide="raise"):
                return task, TASK_RUNNERS[task](scn, out), None, time.perf_counter() - t0
        except Exception as exc:  # reported below with a classified exit code
            return task, None, exc, time.perf_counter() - t0

    if jobs > 1 and len(scn.tasks) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, scn.tasks))
    else:
        results = [one(t) for t in scn.tasks]
    for task, res, exc, dt in results:
        report.timings[task] = dt
        if exc is not None:
            if report.error is None:
                report.error = {"task": task, "type": type(exc).__name__, "message": str(exc)}
                report.exit_code = _exit_code_for(exc)
            continue
        report.tasks[task] = res
    if report.error is None:
        report.exit_code = EXIT_OK if report.passed else EXIT_TOLERANCE
    if out is not None:
        (out / "report.json").write_text(report.to_json())
    return report


# ---------------------------------------------------------------------------
# command line


def _read_source(arg: str) -> str:
    path = Path(arg)
    if path.is_file():
        return path.read_text()
    if arg in _catalog.CATALOG:
        return _catalog.get(arg)
    raise FileNotFoundError(f"no scenario file {arg!r} (and no catalog entry of that name)")


def cmd_run(args) -> int:
    try:
        text = _read_source(args.scenario)
    except (FileNotFoundError, UnicodeDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    try:
        scn = load_scenario(text, seed=args.seed, tol=args.tol)
    except ScenarioParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ScenarioError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    out = Path(args.out)
    report = run_scenario(scn, out, jobs=args.jobs)
    for task, res in report.tasks.items():
        for name, chk in res.get("checks", {}).items():
            status = "PASS" if chk["pass"] else "FAIL"
            detail = f"residual={chk['residual']:.3e} tol={chk['tol']:.1e}" if "residual" in chk \
                else f"expected={chk['expected']} found={chk['found']}"
            print(f"{status} {task}.{name} {detail}")
    if report.error is not None:
        err = report.error
        print(f"error in task {err['task']}: {err['type']}: {err['message']}", file=sys.stderr)
    print(f"{scn.name}: {'ok' if report.exit_code == 0 else 'exit ' + str(report.exit_code)} "
          f"(report in {out / 'report.json'})")
    return report.exit_code


def cmd_catalog(args) -> int:
    if args.name is None:
        for name in _catalog.names():
            desc = parse_document(_catalog.get(name)).get("description", "")
            print(f"{name:28s} {desc}")
        return EXIT_OK
    try:
        text = _catalog.get(args.name)
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return EXIT_VALIDATION
    load_scenario(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .acceptance import run_all

    results = run_all(verbose=True)
    return EXIT_OK if all(r.passed for r in results) else EXIT_TOLERANCE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="confgeom", description="Conformal submanifold geometry scenarios")
    parser.add_argument("--version", action="version", version=f"confgeom {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario file (or a catalog entry by name)")
    run.add_argument("scenario", help="path to a TOML scenario, or the name of a catalog entry")
    run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run.add_argument("--tol", type=float, default=None, help="override the scenario tolerance")
    run.add_argument("--out", default="out", help="output directory (default: ./out)")
    run.add_argument("--jobs", type=int, default=1, help="worker threads for independent tasks")
    run.set_defaults(func=cmd_run)
    cat = sub.add_parser("catalog", help="list built-in scenarios or print one as TOML")
    cat.add_argument("name", nargs="?")
    cat.set_defaults(func=cmd_catalog)
    st = sub.add_parser("selftest", help="run the acceptance suite")
    st.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
