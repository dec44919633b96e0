"""Acceptance suite: nine numbered criteria, each reduced to one PASS/FAIL line.

Every criterion draws its random inputs from a fixed seed, computes the worst
residual over all of them and compares it with a fixed limit.  Criteria with a
time budget also fail if they overrun it.  ``run_all`` is what
``confgeom selftest`` executes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import random_data as rd
from . import tensor as T
from .conformal import (
    ConformalChart,
    ConformalError,
    MobiusStructure,
    WeylStructure,
    density_in_gauge,
    hess_transform_residual,
    laplace_canonical,
    laplace_weight,
    mobius_canonical,
    transform_check,
)
from .embedding import (
    STRONGLY_GEODESIC,
    WEAKLY_GEODESIC,
    EmbeddingError,
    Immersion,
    classify_geodesy,
    codifferential_change_residual,
    embedding_invariants,
    induced_laplace,
    induced_mobius,
    mcomp_residual,
)
from .geodesic import (
    CurveState,
    GaugeGeometry,
    accel_equivalence_check,
    circle_fit_deviation,
    conformal_acceleration,
    convergence_factor,
    integrate_conformal_geodesic,
    state_from_coordinates,
)
from .jets import parse
from .realization import (
    RealizationData,
    covariant_table,
    realize,
    ricci_table,
    round_trip,
    section5_scenario,
)


@dataclass
class CriterionResult:
    number: int
    title: str
    residual: float
    limit: float
    elapsed: float
    budget: Optional[float] = None
    mode: str = "max"  # "min": the value must reach the limit from above
    extra_ok: bool = True
    details: dict = field(default_factory=dict)

    @property
    def within_limit(self) -> bool:
        if not np.isfinite(self.residual):
            return False
        return self.residual < self.limit if self.mode == "max" else self.residual >= self.limit

    @property
    def passed(self) -> bool:
        in_time = self.budget is None or self.elapsed < self.budget
        return self.within_limit and in_time and self.extra_ok

    def line(self) -> str:
        rel = "<" if self.mode == "max" else ">="
        s = f"[{'PASS' if self.passed else 'FAIL'}] C{self.number} {self.title}: {self.residual:.3e} {rel} {self.limit:g}"
        s += f"; {self.elapsed:.2f} s" + (f" (budget {self.budget:g} s)" if self.budget is not None else "")
        failed = [k for k, v in self.details.items() if isinstance(v, bool) and not v]
        if failed:
            s += "; failed: " + ", ".join(failed)
        return s


def _sup(a) -> float:
    return float(np.max(np.abs(np.asarray(a, float)), initial=0.0))


class _Worst:
    """Running maximum of named residuals."""

    def __init__(self):
        self.values: dict[str, float] = {}

    def add(self, name: str, value: float) -> None:
        value = float(value)
        if not np.isfinite(value):
            value = np.inf
        self.values[name] = max(self.values.get(name, 0.0), value)

    @property
    def max(self) -> float:
        return max(self.values.values(), default=0.0)


# ---------------------------------------------------------------------------
# 1. algebraic identities


def criterion_1(seed: int = 1, samples: int = 100) -> CriterionResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = _Worst()
    for n in (2, 3, 4, 5):
        for _ in range(samples):
            g = T.random_spd(rng, n)
            A = rng.normal(size=(n, n))
            ric = T.ricci_contraction(T.suspension_array(A, g))
            worst.add("ric_of_suspension", _sup(ric - ((n - 2) * A + T.trace_g(A, g) * g)))
            if n == 2:
                A0 = A - T.trace_g(A, g) / 2 * g
                worst.add("kernel_n2", _sup(T.suspension_array(A0, g)))
            else:
                h = T.h_map_array(A, g)
                worst.add("h_roundtrip", _sup(T.ricci_contraction(T.suspension_array(h, g)) - A))
                worst.add("h_roundtrip_left", _sup(T.h_map_array(T.ricci_contraction(T.suspension_array(A, g)), g) - A))
    return CriterionResult(1, "algebraic identities", worst.max, 1e-9, time.perf_counter() - t0, 5.0,
                           details=dict(worst.values))


# ---------------------------------------------------------------------------
# 2. transformation laws


def criterion_2(seed: int = 2, metrics: int = 3, thetas: int = 3, points: int = 5) -> CriterionResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = _Worst()
    for m in (3, 4):
        for _ in range(metrics):
            pts = rd.random_points(rng, m, points)
            chart = rd.random_metric(rng, m, points=pts)
            w = WeylStructure(chart, rd.random_theta(rng, m))
            n = m - 1 if m == 3 else 2
            imm = rd.random_graph(rng, chart, n, scale=0.3)
            npts = [np.asarray(p) for p in rd.random_points(rng, n, points, radius=0.2)]
            l = parse(rd.random_density(rng, m))
            for _ in range(thetas):
                theta = rd.random_theta(rng, m)
                w2 = w.shifted(theta)
                th_w = WeylStructure(chart, theta)
                k = float(rng.choice([1.0, -0.5, 1.5, 0.0]))
                for p in pts:
                    rep = transform_check(w, theta, p)
                    worst.add("scht", rep.scht)
                    worst.add("h0", rep.h0)
                    worst.add("s0", rep.s0)
                    worst.add("faraday", rep.faraday)
                    worst.add("weyl", rep.weyl)
                    worst.add("hess", hess_transform_residual(w, theta, l, p, k))
                for p in npts:
                    a = embedding_invariants(imm, w, p, need_mu=False, need_rho=False)
                    b = embedding_invariants(imm, w2, p, need_mu=False, need_rho=False)
                    th_perp = th_w.theta_at(a.q) @ a.normal
                    worst.add("B", _sup(b.B - a.B + np.einsum("ij,a->ija", a.gN, th_perp)))
                    worst.add("mc", _sup(b.H - a.H + th_perp))
                    worst.add("B0_invariant", _sup(b.B0 - a.B0))
                    eta = rng.uniform(-1, 1, n)
                    worst.add("delt", codifferential_change_residual(imm, w, eta, p))
    return CriterionResult(2, "transformation laws", worst.max, 1e-8, time.perf_counter() - t0, 30.0,
                           details=dict(worst.values))


# ---------------------------------------------------------------------------
# 3. canonical operators


def criterion_3(seed: int = 3, samples: int = 3) -> CriterionResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = _Worst()
    for m in (2, 3, 4):
        for _ in range(samples):
            p = np.asarray(rd.random_points(rng, m, 1)[0])
            chart = rd.random_metric(rng, m, points=[p])
            w = WeylStructure(chart, rd.random_theta(rng, m))
            w_shift = w.shifted(rd.random_theta(rng, m))
            f = parse(rd.random_polynomial(rng, m, terms=4, scale=0.3, constant=True))
            chart2 = chart.rescaled(f)
            w_gauge = w.on_chart(chart2)
            fv = float(f.evaluate(list(p)))
            l = parse(rd.random_density(rng, m))
            k = laplace_weight(m)
            lap = laplace_canonical(w, l, p)
            worst.add("laplace_weyl", abs(laplace_canonical(w_shift, l, p) - lap))
            # the Laplacian maps weight k to weight k - 2
            lap_g = laplace_canonical(w_gauge, density_in_gauge(l, chart, chart2, k), p)
            worst.add("laplace_gauge", abs(lap_g - np.exp((float(k) - 2) * fv) * lap))
            if m >= 3:
                mob = mobius_canonical(w, l, p)
                worst.add("mobius_weyl", _sup(mobius_canonical(w_shift, l, p) - mob))
                mob_g = mobius_canonical(w_gauge, density_in_gauge(l, chart, chart2, 1), p)
                worst.add("mobius_gauge", _sup(mob_g - np.exp(fv) * mob))
    rejected = True
    for m in (2, 3, 4):
        w = WeylStructure(ConformalChart.euclidean(m))
        for wrong in (1, 0.25, laplace_weight(m) + 1):
            try:
                laplace_canonical(w, "1+x1^2", np.zeros(m), k=wrong)
                rejected = False
            except ConformalError:
                pass
    return CriterionResult(3, "canonical operator invariance", worst.max, 1e-8, time.perf_counter() - t0,
                           extra_ok=rejected, details={**worst.values, "wrong_weight_rejected": rejected})


# ---------------------------------------------------------------------------
# 4. conformal geodesics


def _reparametrized_circle(t: float, c: float = 0.3):
    """Unit circle traversed with angle ``t + c t^2``; coordinate derivatives up to order 3."""
    ph, d1, d2 = t + c * t * t, 1 + 2 * c * t, 2 * c
    u = np.array([np.cos(ph), np.sin(ph), 0.0])
    s = np.array([-np.sin(ph), np.cos(ph), 0.0])
    return u, s * d1, -u * d1**2 + s * d2, -s * d1**3 - u * 3 * d1 * d2


def criterion_4(seed: int = 4) -> CriterionResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = _Worst()
    # (a) gauge invariance along a reparametrized circle of the flat scenario
    flat = ConformalChart.euclidean(3)
    geo_flat = GaugeGeometry(flat)
    for _ in range(3):
        f = parse(rd.random_polynomial(rng, 3, terms=5, scale=0.3))
        geo_g = GaugeGeometry(flat.rescaled(f))
        for t in np.linspace(0.0, 1.0, 5):
            x, xd, xdd, xddd = _reparametrized_circle(float(t))
            s1, w1 = state_from_coordinates(geo_flat, x, xd, xdd, xddd)
            s2, w2 = state_from_coordinates(geo_g, x, xd, xdd, xddd)
            worst.add("gauge_invariance", _sup(conformal_acceleration(geo_flat, s1, w1)
                                               - conformal_acceleration(geo_g, s2, w2)))
    # (b) acceleration through the adapted Weyl structure on random curves
    for _ in range(10):
        x = np.asarray(rd.random_points(rng, 3, 1)[0])
        chart = rd.random_metric(rng, 3, points=[x])
        geo = GaugeGeometry(chart)
        state = CurveState(x, rng.uniform(-1, 1, 3) + np.array([1.5, 0, 0]), rng.uniform(-1, 1, 3))
        worst.add("accel_equivalence", accel_equivalence_check(geo, state, rng.uniform(-1, 1, 3)))
    # (c) flat circle integration
    trace = integrate_conformal_geodesic(geo_flat, CurveState([1.0, 0, 0], [0, 1.0, 0], [-1.0, 0, 0]),
                                         (0.0, 1.0), 1e-3, residuals=False)
    circle = circle_fit_deviation(trace.x)
    # (d) fourth-order convergence on a curved chart
    sphere = GaugeGeometry(ConformalChart.round_sphere(3))
    init = state_from_coordinates(sphere, [0.1, -0.2, 0.05], [0.8, 0.3, -0.2], [0.2, 0.5, 0.1])
    factor = convergence_factor(sphere, init, (0.0, 1.0), 0.1)
    res = CriterionResult(4, "conformal geodesics", worst.max, 1e-7, time.perf_counter() - t0, 60.0,
                          details={**worst.values, "circle_deviation": circle, "convergence_factor": factor})
    res.details["circle_fit_ok"] = bool(circle < 1e-5)
    res.details["convergence_ok"] = bool(factor >= 8)
    res.extra_ok = res.details["circle_fit_ok"] and res.details["convergence_ok"]
    return res


# ---------------------------------------------------------------------------
# 5. embedding invariants


def product_r3_s2() -> ConformalChart:
    s = "4/(1+x4^2+x5^2)^2"
    g = [["1" if i == j else "0" for j in range(5)] for i in range(5)]
    g[3][3] = g[4][4] = s
    return ConformalChart(g, 5, name="R3xS2")


def criterion_5(seed: int = 5) -> CriterionResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = _Worst()
    # mu vanishes on hypersurfaces
    for m in (3, 4):
        for _ in range(5):
            chart = rd.random_metric(rng, m)
            w = WeylStructure(chart, rd.random_theta(rng, m))
            imm = rd.random_graph(rng, chart, m - 1)
            p = np.asarray(rd.random_points(rng, m - 1, 1, radius=0.2)[0])
            worst.add("mu_hypersurface", _sup(embedding_invariants(imm, w, p, need_rho=False).mu))
    # Weyl independence: a hypersurface (n = 3) and a codimension-2 surface with its own Mobius structure
    for m, n in ((4, 3), (4, 2)):
        for _ in range(2):
            chart = rd.random_metric(rng, m)
            imm = rd.random_graph(rng, chart, n)
            mob = None
            if n == 2:
                h = rd.random_polynomial(rng, 2, terms=3, scale=0.5, constant=True)
                mob = MobiusStructure(imm.induced_chart, [[h, "x1*x2"], ["x1*x2", f"-({h})"]])
            w1 = WeylStructure(chart, rd.random_theta(rng, m))
            w2 = w1.shifted(rd.random_theta(rng, m))
            p = np.asarray(rd.random_points(rng, n, 1, radius=0.2)[0])
            l_m = parse(rd.random_density(rng, n))
            a = embedding_invariants(imm, w1, p, n_mobius=mob)
            b = embedding_invariants(imm, w2, p, n_mobius=mob)
            for name in ("mu", "rho", "kappa", "B0"):
                worst.add(f"weyl_{name}", _sup(getattr(a, name) - getattr(b, name)))
            worst.add("weyl_M_ind", _sup(induced_mobius(imm, w1, l_m, p) - induced_mobius(imm, w2, l_m, p)))
            worst.add("weyl_L_ind", abs(induced_laplace(imm, w1, l_m, p) - induced_laplace(imm, w2, l_m, p)))
            worst.add("mcomp", mcomp_residual(imm, w1, l_m, p, n_mobius=mob))
    # mcomp on a 2-plane of the product R^3 x S^2 with its canonical (flat) Mobius structure
    prod = product_r3_s2()
    plane = Immersion(prod, ["x1", "x2", "0.3", "0", "0"], n=2)
    flat_mob = MobiusStructure(plane.induced_chart)
    for p in ([0.0, 0.0], [0.4, -0.7]):
        worst.add("mcomp_product", mcomp_residual(plane, WeylStructure(prod, ["0.2*x4", "0", "x1", "0", "0.5"]),
                                                  "exp(0.3*x1)*(1+x2^2)", p, n_mobius=flat_mob))
    rejected = True
    try:
        induced_laplace(plane, WeylStructure(prod), "1", [0.0, 0.0], k=1)
        rejected = False
    except EmbeddingError:
        pass
    return CriterionResult(5, "embedding invariants", worst.max, 1e-7, time.perf_counter() - t0,
                           extra_ok=rejected and worst.values["mu_hypersurface"] < 1e-6,
                           details={**worst.values, "wrong_weight_rejected": rejected})


# ---------------------------------------------------------------------------
# 6. classification


def criterion_6(tol: float = 1e-6) -> CriterionResult:
    t0 = time.perf_counter()
    flat3 = ConformalChart.euclidean(3)
    plane = Immersion(flat3, ["x1", "x2", "0"], n=2)
    grid2 = [[0.0, 0.0], [0.5, -0.3], [-1.0, 2.0]]
    c_plane = classify_geodesy(plane, grid2, WeylStructure(flat3, ["x3", "0.2*x1", "x2^2"]),
                               n_mobius=MobiusStructure(plane.induced_chart), tol=tol)
    flat4 = ConformalChart.euclidean(4)
    s = "(1+x1^2+x2^2+x3^2)"
    sphere = Immersion(flat4, [f"2*x1/{s}", f"2*x2/{s}", f"2*x3/{s}", f"(x1^2+x2^2+x3^2-1)/{s}"], n=3)
    grid3 = [[0.0, 0.0, 0.0], [0.3, -0.2, 0.5], [1.2, 0.4, -0.7]]
    c_sphere = classify_geodesy(sphere, grid3, tol=tol)
    prod = product_r3_s2()
    slice_ = Immersion(prod, ["x1", "x2", "x3", "0", "0"], n=3)
    c_prod = classify_geodesy(slice_, grid3, WeylStructure(prod, ["0.3*x1", "x2*x4", "0", "0.2*x5", "x3"]), tol=tol)
    rho_err = max(_sup(embedding_invariants(slice_, WeylStructure(prod), p).rho + np.eye(3) / 12) for p in grid3)
    details = {
        "plane_strongly_geodesic": c_plane.verdict == STRONGLY_GEODESIC,
        "sphere_strongly_geodesic": c_sphere.verdict == STRONGLY_GEODESIC,
        "product_weakly_not_strongly": c_prod.verdict == WEAKLY_GEODESIC,
        "rho_error": rho_err,
    }
    ok = details["plane_strongly_geodesic"] and details["sphere_strongly_geodesic"] and details["product_weakly_not_strongly"]
    return CriterionResult(6, "geodesy classification (rho = -g/12 error)", rho_err, tol,
                           time.perf_counter() - t0, extra_ok=ok, details=details)


# ---------------------------------------------------------------------------
# 7. realization


def criterion_7(seed: int = 7, targets: int = 10) -> CriterionResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = _Worst()
    for _ in range(targets):
        base, B0, A, mob, lap = rd.random_realization_tables(rng, 2, 2)
        data = RealizationData(base, np.eye(2), B0, connection=A, n_mobius=mob, n_laplace=lap)
        p = np.asarray(rd.random_points(rng, 2, 1, radius=0.2)[0])
        mu = rng.uniform(-1, 1, (2, 2))
        rho = rng.uniform(-1, 1, (2, 2))
        rho = (rho + rho.T) / 2
        tot, _ = realize(data, mu, rho, p)
        worst.add("round_trip", round_trip(tot, mu, rho, p).max)
        for k, v in ricci_table(tot, p).items():
            worst.add(f"ricci_{k}", v)
        for k, v in covariant_table(tot, p).items():
            worst.add(f"covariant_{k}", v)
    # the uncorrected Ricci table is exact once B0 vanishes at the point
    base, _, A, mob, lap = rd.random_realization_tables(rng, 2, 2)
    data = RealizationData(base, np.eye(2), np.zeros((2, 2, 2)), connection=A, n_mobius=mob, n_laplace=lap)
    p = np.zeros(2)
    tot, _ = realize(data, rng.uniform(-1, 1, (2, 2)), np.diag(rng.uniform(-1, 1, 2)), p)
    for k, v in ricci_table(tot, p, corrected=False).items():
        worst.add(f"ricci_literal_{k}", v)
    rt = worst.values["round_trip"]
    tables = max(v for k, v in worst.values.items() if k != "round_trip")
    res = CriterionResult(7, "realization round trip", rt, 1e-5, time.perf_counter() - t0,
                          extra_ok=tables < 1e-6, details={**worst.values, "tables_ok": tables < 1e-6})
    return res


# ---------------------------------------------------------------------------
# 8. flat plane spanned by conformal geodesics


def criterion_8() -> CriterionResult:
    t0 = time.perf_counter()
    res = section5_scenario(grid=8, algebraic_tol=1e-10, tol=1e-6)
    checks = res["checks"]
    geodesic_keys = ("nabla_XX", "h_XV", "h_XW", "h_XX")
    worst = max(checks[k]["residual"] for k in geodesic_keys)
    details = {k: v["pass"] for k, v in checks.items()}
    details["verdict_not_totally_umbilical"] = res["verdict"] == "not totally umbilical"
    details["min_B0"] = checks["nowhere_umbilic"]["residual"]
    return CriterionResult(8, "pseudo-geodesic flat plane", worst, 1e-6, time.perf_counter() - t0,
                           extra_ok=bool(res["pass"]), details=details)


CRITERIA: list[Callable[[], CriterionResult]] = [
    criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7, criterion_8,
]


def criterion_9(elapsed: float) -> CriterionResult:
    return CriterionResult(9, "full selftest wall time", elapsed, 300.0, elapsed, 300.0)


def run_all(verbose: bool = False, printer=print) -> list[CriterionResult]:
    results = []
    t0 = time.perf_counter()
    for crit in CRITERIA:
        r = crit()
        results.append(r)
        if verbose:
            printer(r.line())
    r9 = criterion_9(time.perf_counter() - t0)
    results.append(r9)
    if verbose:
        printer(r9.line())
    return results
