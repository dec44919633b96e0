"""Conformal acceleration and conformal geodesics.

A curve state is ``(x, v, w)`` where ``v`` is the coordinate velocity and
``w = nabla^g_v v`` the covariant acceleration for the gauge metric ``g``.
The third derivative ``w3 = nabla^g_v w`` enters the conformal acceleration

    a = |v|^2 h(v)^# - w3 + 3 (g(v,w)/|v|^2) w
        + (-6 g(v,w)^2/|v|^4 + 3/2 |w|^2/|v|^2 + 2 g(v,w3)/|v|^2) v

and setting ``a = 0`` determines ``w3`` in closed form, which turns the
conformal geodesic equation into a first-order ODE for ``(x, v, w)``.  The ODE
is integrated with fixed-step classical Runge-Kutta.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .conformal import (
    ConformalChart,
    ConformalError,
    LaplaceStructure,
    MobiusStructure,
    WeylStructure,
    curvature_package,
    schouten,
)
from .jets import Var, as_expr


class GeodesicError(ArithmeticError):
    """Numerical failure while integrating (degenerate velocity, leaving the chart)."""


@dataclass
class CurveState:
    """Point on a curve with covariant derivatives taken with the gauge metric."""

    x: np.ndarray
    v: np.ndarray
    w: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.w = np.asarray(self.w, dtype=float)


class GaugeGeometry:
    """Christoffel symbols and Schouten tensor of a gauge metric, evaluated pointwise.

    ``m = 2`` needs a :class:`MobiusStructure` and ``m = 1`` a
    :class:`LaplaceStructure`; constant metrics take a fast path.
    """

    def __init__(self, chart: ConformalChart, mobius: Optional[MobiusStructure] = None,
                 laplace: Optional[LaplaceStructure] = None):
        self.chart = chart
        self.m = chart.dim
        self.mobius = mobius
        self.laplace = laplace
        if self.m == 2 and mobius is None:
            raise ConformalError("a Mobius structure is required on a surface")
        if self.m == 1 and laplace is None:
            raise ConformalError("a Laplace structure is required on a curve")
        self.weyl = WeylStructure(chart)
        self.constant = (
            all(not e.variables() for row in chart.metric_exprs for e in row)
            and (mobius is None or all(not e.variables() for row in mobius.h0_exprs for e in row))
            and (laplace is None or not laplace.sigma_expr.variables())
            and (mobius is None or mobius.chart is chart)
            and (laplace is None or laplace.chart is chart)
        )
        if self.constant:
            self._g = chart.metric_at([0.0] * self.m)
            self._ginv = np.linalg.inv(self._g)
            self._gamma = np.zeros((self.m,) * 3)
            self._h = self._schouten([0.0] * self.m)

    def metric(self, x) -> np.ndarray:
        if self.constant:
            return self._g
        return self.chart.metric_at(x)

    def gamma(self, x) -> np.ndarray:
        if self.constant:
            return self._gamma
        return self.weyl.christoffel(x)

    def _schouten(self, x) -> np.ndarray:
        return schouten(self.weyl, x, mobius=self.mobius, laplace=self.laplace)

    def schouten(self, x) -> np.ndarray:
        if self.constant:
            return self._h
        return self._schouten(x)

    def frame(self, x):
        """``(g, Gamma, h)`` at ``x`` with validity checks."""
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise GeodesicError("curve left the chart (non-finite position)")
        try:
            g = self.metric(x)
            if self.constant:
                return g, self._gamma, self._h
            if not np.all(np.isfinite(g)) or np.linalg.eigvalsh(g)[0] <= 0:
                raise GeodesicError(f"curve left the chart domain at {x.tolist()}")
            if self.m >= 3:
                return self.chart.gauge_frame(x)
            return g, self.gamma(x), self.schouten(x)
        except (ArithmeticError, np.linalg.LinAlgError) as exc:
            if isinstance(exc, GeodesicError):
                raise
            raise GeodesicError(f"curve left the chart domain at {x.tolist()}: {exc}") from exc


def _dot(g, a, b) -> float:
    return float(a @ g @ b)


def conformal_acceleration(geo: GaugeGeometry, state: CurveState, w3: np.ndarray) -> np.ndarray:
    """The conformal acceleration vector for a state and third derivative ``w3``."""
    g, _, h = geo.frame(state.x)
    return _acceleration(g, h, state.v, state.w, np.asarray(w3, dtype=float))


def _acceleration(g, h, v, w, w3) -> np.ndarray:
    vv = _dot(g, v, v)
    if vv <= 1e-14:
        raise GeodesicError("null velocity")
    vw = _dot(g, v, w)
    ww = _dot(g, w, w)
    vw3 = _dot(g, v, w3)
    h_sharp = np.linalg.solve(g, h.T @ v)  # h(v, .)^#
    return (
        vv * h_sharp
        - w3
        + 3 * vw / vv * w
        + (-6 * vw**2 / vv**2 + 1.5 * ww / vv + 2 * vw3 / vv) * v
    )


def _third_derivative(g, h, v, w) -> np.ndarray:
    """Closed-form ``w3`` making the conformal acceleration vanish."""
    vv = _dot(g, v, v)
    if vv <= 1e-14:
        raise GeodesicError("velocity degenerated")
    vw = _dot(g, v, w)
    ww = _dot(g, w, w)
    h_sharp = np.linalg.solve(g, h.T @ v)
    k = vv * h_sharp + 3 * vw / vv * w + (-6 * vw**2 / vv**2 + 1.5 * ww / vv) * v
    return k - 2 * _dot(g, v, k) / vv * v


def split_acceleration(geo: GaugeGeometry, state: CurveState, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tangential and normal parts of a vector along the curve (gauge metric)."""
    g = geo.metric(state.x)
    tan = _dot(g, a, state.v) / _dot(g, state.v, state.v) * state.v
    return tan, a - tan


def adapted_theta_along_curve(geo: GaugeGeometry, state: CurveState) -> np.ndarray:
    """Covector ``theta`` at ``x`` such that ``nabla^g + tilde(theta)`` has ``nabla_v v = 0``."""
    g = geo.metric(state.x)
    return g @ _adapted_vector(g, state.v, state.w)


def _adapted_vector(g, v, w) -> np.ndarray:
    vv = _dot(g, v, v)
    if vv <= 1e-14:
        raise GeodesicError("null velocity")
    return w / vv - 2 * _dot(g, v, w) / vv**2 * v


def weyl_acceleration(geo: GaugeGeometry, state: CurveState, theta: np.ndarray) -> np.ndarray:
    """``nabla_v v`` for ``nabla = nabla^g + tilde(theta)``."""
    g = geo.metric(state.x)
    theta_up = np.linalg.solve(g, theta)
    return state.w + 2 * float(theta @ state.v) * state.v - _dot(g, state.v, state.v) * theta_up


def state_from_coordinates(geo: GaugeGeometry, x, xd, xdd, xddd=None, t: float = 0.0):
    """Covariant state (and ``w3`` if ``xddd`` is given) from plain coordinate derivatives."""
    x = np.asarray(x, float)
    v = np.asarray(xd, float)
    a = np.asarray(xdd, float)
    gamma = geo.gamma(x)
    w = a + np.einsum("kij,i,j->k", gamma, v, v)
    state = CurveState(x, v, w, t)
    if xddd is None:
        return state
    j = np.asarray(xddd, float)
    if geo.constant:
        dgamma = np.zeros(gamma.shape + (geo.m,))
    else:
        dgamma = np.asarray(geo.weyl.christoffel_jet(x, 1).grad().value)  # [k, i, j, m]
    wdot = j + np.einsum("kijm,m,i,j->k", dgamma, v, v, v) + 2 * np.einsum("kij,i,j->k", gamma, a, v)
    w3 = wdot + np.einsum("kij,i,j->k", gamma, v, w)
    return state, w3


def _linear_field(value: np.ndarray, grad: np.ndarray, x0: np.ndarray):
    """Expressions ``value_i + grad[i, j] (x_j - x0_j)``."""
    exprs = []
    for i in range(len(value)):
        e = as_expr(float(value[i]))
        for j in range(len(x0)):
            if grad[i, j] != 0.0:
                e = e + float(grad[i, j]) * (Var(j) - float(x0[j]))
        exprs.append(e)
    return exprs


def accel_equivalence_check(geo: GaugeGeometry, state: CurveState, w3: np.ndarray) -> float:
    """``|a - c(v,v) h^nabla(v)^#|`` for the adapted Weyl structure ``nabla``.

    The adapted 1-form is extended off the curve linearly so that its derivative
    along ``v`` is the one it has along the curve; ``h^nabla`` is then computed
    from the curvature of the extended Weyl structure.
    """
    x, v, w = state.x, state.v, state.w
    w3 = np.asarray(w3, float)
    g, gamma, _ = geo.frame(x)
    a = _acceleration(g, geo.schouten(x), v, w, w3)
    vv = _dot(g, v, v)
    vw = _dot(g, v, w)
    t_vec = _adapted_vector(g, v, w)
    # covariant derivative of T along the curve
    dt_vec = (
        w3 / vv
        - 2 * vw / vv**2 * w
        - 2 * ((_dot(g, w, w) + _dot(g, v, w3)) / vv**2 - 4 * vw**2 / vv**3) * v
        - 2 * vw / vv**2 * w
    )
    # plain derivative of theta_i = g_ij T^j along the curve
    tdot = dt_vec - np.einsum("kij,i,j->k", gamma, v, t_vec)
    if geo.constant:
        dg_v = np.zeros_like(g)
    else:
        dg = np.asarray(geo.chart.metric_jet(x, 1).grad().value)  # [i, j, m]
        dg_v = np.einsum("ijm,m->ij", dg, v)
    theta0 = g @ t_vec
    theta_dot = dg_v @ t_vec + g @ tdot
    grad = np.outer(theta_dot, v) / float(v @ v)
    weyl = WeylStructure(geo.chart, _linear_field(theta0, grad, x))
    pkg = curvature_package(weyl, x, mobius=geo.mobius) if geo.m >= 2 else None
    if pkg is None or pkg.h is None:
        raise ConformalError("the Schouten tensor of the adapted structure is unavailable")
    rhs = vv * np.linalg.solve(g, pkg.h.T @ v)
    return float(np.max(np.abs(a - rhs)))


# ---------------------------------------------------------------------------
# integration


@dataclass
class GeodesicTrace:
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    w: np.ndarray
    residual: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residual)) if self.residual.size else 0.0

    def to_csv(self, path) -> None:
        m = self.x.shape[1]
        header = ["t"] + [f"x{i + 1}" for i in range(m)] + [f"v{i + 1}" for i in range(m)]
        header += [f"w{i + 1}" for i in range(m)] + ["residual_norm"]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(header)
            for k in range(len(self.t)):
                row = [self.t[k], *self.x[k], *self.v[k], *self.w[k], self.residual[k]]
                wr.writerow([repr(float(val)) for val in row])


def _rhs(geo: GaugeGeometry, y: np.ndarray) -> np.ndarray:
    m = geo.m
    x, v, w = y[:m], y[m:2 * m], y[2 * m:]
    g, gamma, h = geo.frame(x)
    w3 = _third_derivative(g, h, v, w)
    vdot = w - np.einsum("kij,i,j->k", gamma, v, v)
    wdot = w3 - np.einsum("kij,i,j->k", gamma, v, w)
    return np.concatenate([v, vdot, wdot])


def _fd_derivative(samples: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order finite-difference derivative along axis 0."""
    n = len(samples)
    out = np.empty_like(samples)
    if n < 5:
        return np.gradient(samples, h, axis=0)
    out[2:-2] = (samples[:-4] - 8 * samples[1:-3] + 8 * samples[3:-1] - samples[4:]) / (12 * h)
    c_fwd = np.array([-25, 48, -36, 16, -3]) / (12 * h)
    out[0] = np.tensordot(c_fwd, samples[0:5], axes=1)
    out[1] = np.tensordot(c_fwd, samples[1:6], axes=1) if n >= 6 else np.tensordot(
        np.array([-3, -10, 18, -6, 1]) / (12 * h), samples[0:5], axes=1)
    out[-1] = -np.tensordot(c_fwd, samples[-1:-6:-1], axes=1)
    out[-2] = -np.tensordot(c_fwd, samples[-2:-7:-1], axes=1) if n >= 6 else -np.tensordot(
        np.array([-3, -10, 18, -6, 1]) / (12 * h), samples[-1:-6:-1], axes=1)
    return out


def integrate_conformal_geodesic(geo: GaugeGeometry, init: CurveState, t_span=(0.0, 1.0),
                                 step: float = 1e-3, residuals: bool = True) -> GeodesicTrace:
    """Integrate ``a = 0`` from ``init`` with classical RK4 at a fixed step."""
    t0, t1 = float(t_span[0]), float(t_span[1])
    if step <= 0 or t1 <= t0:
        raise ValueError("need step > 0 and t_span[1] > t_span[0]")
    nsteps = int(round((t1 - t0) / step))
    if nsteps < 1 or abs(nsteps * step - (t1 - t0)) > 1e-9 * max(1.0, t1 - t0):
        raise ValueError("t_span length must be a multiple of the step")
    m = geo.m
    g0 = geo.metric(init.x)
    if _dot(g0, init.v, init.v) <= 1e-14:
        raise GeodesicError("null initial velocity")
    y = np.concatenate([init.x, init.v, init.w]).astype(float)
    ys = np.empty((nsteps + 1, 3 * m))
    ys[0] = y
    for n in range(nsteps):
        k1 = _rhs(geo, y)
        k2 = _rhs(geo, y + 0.5 * step * k1)
        k3 = _rhs(geo, y + 0.5 * step * k2)
        k4 = _rhs(geo, y + step * k3)
        y = y + step / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise GeodesicError(f"integration diverged near t = {t0 + (n + 1) * step}")
        ys[n + 1] = y
    ts = t0 + step * np.arange(nsteps + 1)
    trace = GeodesicTrace(ts, ys[:, :m].copy(), ys[:, m:2 * m].copy(), ys[:, 2 * m:].copy())
    trace.residual = trace_residuals(geo, trace) if residuals else np.zeros(nsteps + 1)
    return trace


def trace_residuals(geo: GaugeGeometry, trace: GeodesicTrace) -> np.ndarray:
    """``|a|`` at each sample with ``w3`` from differencing the recorded ``w``.

    This does not reuse the closed-form third derivative, so it measures how well
    the discrete trajectory satisfies the geodesic equation.
    """
    h = float(trace.t[1] - trace.t[0]) if len(trace.t) > 1 else 1.0
    wdot = _fd_derivative(trace.w, h)
    out = np.empty(len(trace.t))
    for k in range(len(trace.t)):
        g, gamma, hh = geo.frame(trace.x[k])
        w3 = wdot[k] + np.einsum("kij,i,j->k", gamma, trace.v[k], trace.w[k])
        a = _acceleration(g, hh, trace.v[k], trace.w[k], w3)
        out[k] = float(np.sqrt(max(_dot(g, a, a), 0.0)))
    return out


# ---------------------------------------------------------------------------
# oracles used by tests and the acceptance suite


def circle_through(p1, p2, p3):
    """Center, radius and unit normal of the circle through three points (or None if collinear)."""
    p1, p2, p3 = (np.asarray(p, float) for p in (p1, p2, p3))
    a, b = p2 - p1, p3 - p1
    n = np.cross(a, b) if len(a) == 3 else None
    if n is None:
        raise ValueError("circle fit is implemented for three-dimensional points")
    nn = float(n @ n)
    if nn < 1e-24:
        return None
    center = p1 + (np.cross(n, a) * float(b @ b) + np.cross(b, n) * float(a @ a)) / (2 * nn)
    return center, float(np.linalg.norm(p1 - center)), n / np.sqrt(nn)


def circle_fit_deviation(points: np.ndarray) -> float:
    """Max distance of ``points`` from the circle (or line) through first, middle and last."""
    pts = np.asarray(points, float)
    p1, p2, p3 = pts[0], pts[len(pts) // 2], pts[-1]
    fit = circle_through(p1, p2, p3)
    if fit is None:
        d = (p3 - p1) / np.linalg.norm(p3 - p1)
        rel = pts - p1
        perp = rel - np.outer(rel @ d, d)
        return float(np.max(np.linalg.norm(perp, axis=1)))
    center, radius, normal = fit
    rel = pts - center
    off = rel @ normal
    inplane = rel - np.outer(off, normal)
    radial = np.linalg.norm(inplane, axis=1) - radius
    return float(np.max(np.sqrt(off**2 + radial**2)))


def max_trajectory_distance(a: GeodesicTrace, b: GeodesicTrace) -> float:
    if a.x.shape != b.x.shape:
        raise ValueError("traces sampled differently")
    return float(np.max(np.linalg.norm(a.x - b.x, axis=1)))


def subsample(trace: GeodesicTrace, every: int) -> GeodesicTrace:
    sl = slice(None, None, every)
    return GeodesicTrace(trace.t[sl], trace.x[sl], trace.v[sl], trace.w[sl], trace.residual[sl])


def convergence_factor(geo: GaugeGeometry, init: CurveState, t_span=(0.0, 1.0), step: float = 0.1) -> float:
    """Error ratio ``E(step) / E(step/2)`` against a quarter-step reference."""
    coarse = integrate_conformal_geodesic(geo, init, t_span, step, residuals=False)
    fine = integrate_conformal_geodesic(geo, init, t_span, step / 2, residuals=False)
    ref = integrate_conformal_geodesic(geo, init, t_span, step / 4, residuals=False)
    e1 = max_trajectory_distance(coarse, subsample(ref, 4))
    e2 = max_trajectory_distance(fine, subsample(ref, 2))
    return e1 / e2 if e2 > 0 else float("inf")
