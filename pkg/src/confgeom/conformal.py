"""Chart-level conformal geometry.

A :class:`ConformalChart` fixes a gauge metric ``g`` on a coordinate patch.
A :class:`WeylStructure` on that chart is ``nabla = nabla^g + tilde(theta)``,
i.e. its Christoffel symbols are

    Gamma^k_ij = Gamma(g)^k_ij + delta^k_i theta_j + delta^k_j theta_i - g_ij theta^k,

which gives ``nabla g = -2 theta (x) g``.  Rescaling the gauge to
``e^{2f} g`` leaves the Levi-Civita connection equal to ``nabla^g + tilde(df)``,
and a density of weight ``k`` stored as a scalar transforms by ``e^{k f}``.

Most quantities are computed as jets, so their derivatives along the chart
(needed for covariant derivatives of Schouten tensors and of the fundamental
form) come for free.  The convention for curvature is
``R[k, l, i, j] = (R_{d_i, d_j} d_l)^k`` with
``R_{X,Y} = nabla_X nabla_Y - nabla_Y nabla_X - nabla_[X,Y]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .jets import (
    Expr,
    Jet,
    as_expr,
    func,
    jeinsum,
    jet_space,
    jinv,
    parse,
    to_source,
)


class ConformalError(ValueError):
    """Invalid request for the given dimension or structure."""


def _expr_matrix(entries, m: int) -> list[list[Expr]]:
    if len(entries) != m or any(len(row) != m for row in entries):
        raise ValueError(f"metric must be a {m}x{m} table")
    return [[as_expr(e) for e in row] for row in entries]


class ConformalChart:
    """A coordinate chart with a gauge metric in the conformal class.

    ``metric`` is an ``m x m`` table of expressions (strings or :class:`Expr`).
    ``gauge_factors`` maps names to scalar expressions ``f``; ``chart.gauge(name)``
    is the chart with metric ``e^{2f} g``.
    """

    def __init__(self, metric, dim: Optional[int] = None, gauge_factors=None, name: str = "chart",
                 root: Optional["ConformalChart"] = None, log_factor=None):
        m = len(metric) if dim is None else dim
        if not 1 <= m <= 8:
            raise ValueError("chart dimension must be in 1..8")
        self.dim = m
        self.name = name
        g = _expr_matrix(metric, m)
        for i in range(m):
            for j in range(i + 1, m):
                if g[i][j] != g[j][i] and to_source(g[i][j]) != to_source(g[j][i]):
                    raise ValueError(f"metric is not symmetric in entries ({i + 1},{j + 1})")
        for row in g:
            for e in row:
                if e.variables() and max(e.variables()) >= m:
                    raise ValueError("metric entry uses a variable beyond the chart dimension")
        self.metric_exprs = g
        self.gauge_factors = {k: as_expr(v) for k, v in (gauge_factors or {}).items()}
        self.root = self if root is None else root
        self.log_factor = as_expr(0 if log_factor is None else log_factor)

    def __repr__(self) -> str:
        return f"ConformalChart(name={self.name!r}, dim={self.dim})"

    # -- construction helpers
    @classmethod
    def euclidean(cls, m: int, **kw) -> "ConformalChart":
        return cls([[1 if i == j else 0 for j in range(m)] for i in range(m)], **kw)

    @classmethod
    def conformally_flat(cls, m: int, factor, **kw) -> "ConformalChart":
        """Metric ``factor * delta``."""
        fe = as_expr(factor)
        return cls([[fe if i == j else 0 for j in range(m)] for i in range(m)], **kw)

    @classmethod
    def round_sphere(cls, m: int, radius: float = 1.0, **kw) -> "ConformalChart":
        """Stereographic gauge ``4 r^2 delta / (1 + |x|^2)^2`` of the sphere of radius ``r``."""
        r2 = float(radius) ** 2
        s = as_expr(0)
        for i in range(m):
            s = s + parse(f"x{i + 1}^2")
        factor = as_expr(4 * r2) / (1 + s) ** 2
        return cls.conformally_flat(m, factor, **kw)

    def rescaled(self, f, name: Optional[str] = None) -> "ConformalChart":
        """Same conformal class, gauge metric ``e^{2f} g``."""
        fe = as_expr(f)
        scale = func("exp", 2 * fe)
        g = [[scale * e if e != as_expr(0) else e for e in row] for row in self.metric_exprs]
        return ConformalChart(
            g,
            self.dim,
            self.gauge_factors,
            name or f"{self.name}*exp(2f)",
            root=self.root,
            log_factor=self.log_factor + fe,
        )

    def gauge(self, name: str) -> "ConformalChart":
        if name not in self.gauge_factors:
            raise KeyError(f"unknown gauge factor {name!r}")
        return self.rescaled(self.gauge_factors[name], name=f"{self.name}[{name}]")

    def relative_log_factor(self, other: "ConformalChart") -> Expr:
        """``f`` with ``g_self = e^{2f} g_other``; both charts must share a root."""
        if self.root is not other.root:
            raise ConformalError("charts do not share a common conformal class")
        return self.log_factor - other.log_factor

    # -- evaluation
    def metric_jet(self, p: Sequence[float], order: int) -> Jet:
        sp = jet_space(self.dim, order)
        env = sp.variables(p)
        seen: dict[int, np.ndarray] = {}
        rows = []
        for row in self.metric_exprs:
            out = []
            for e in row:
                if id(e) not in seen:
                    v = e.evaluate(env)
                    seen[id(e)] = v.c if isinstance(v, Jet) else sp.constant(v).c
                out.append(seen[id(e)])
            rows.append(out)
        return Jet(sp, np.array(rows))

    def metric_at(self, p: Sequence[float]) -> np.ndarray:
        return np.array([[float(e.evaluate([float(x) for x in p])) for e in row] for row in self.metric_exprs])

    def check_positive(self, p: Sequence[float]) -> None:
        g = self.metric_at(p)
        if not np.all(np.isfinite(g)) or np.linalg.eigvalsh(g)[0] <= 0:
            raise ConformalError(f"gauge metric is not positive definite at {list(p)}")

    def levi_civita_jet(self, p: Sequence[float], order: int) -> Jet:
        """Christoffel symbols ``Gamma[k, i, j]`` of the gauge metric as a jet."""
        return levi_civita_from_metric(self.metric_jet(p, order + 1))

    def gauge_frame(self, p: Sequence[float]):
        """Metric, Levi-Civita symbols and Schouten tensor of the gauge at ``p`` (dimension >= 3)."""
        m = self.dim
        if m < 3:
            raise ConformalError("gauge_frame needs dimension >= 3")
        g2 = self.metric_jet(p, 2)
        gamma = levi_civita_from_metric(g2)
        R = curvature_from_christoffel(gamma)
        ric = np.einsum("ilij->jl", np.asarray(R.value))
        g = np.asarray(g2.value)
        scal = float(np.einsum("ij,ij->", np.linalg.inv(g), ric))
        h = T.sym(ric) / (m - 2) - scal / (2 * (m - 1) * (m - 2)) * g
        return g, np.asarray(gamma.truncate(0).value), h


def levi_civita_from_metric(g: Jet) -> Jet:
    """Christoffel symbols ``Gamma[k, i, j]`` (one order less than ``g``)."""
    dg = g.grad()  # dg[j, l, i] = d_i g_jl
    # low[l, i, j] = (d_i g_jl + d_j g_il - d_l g_ij) / 2
    low = 0.5 * (dg.transpose(1, 2, 0) + dg.transpose(1, 0, 2) - dg.transpose(2, 0, 1))
    ginv = jinv(g.truncate(g.order - 1))
    return jeinsum("kl,lij->kij", ginv, low)


class WeylStructure:
    """Torsion-free conformal connection ``nabla^g + tilde(theta)`` on a chart."""

    def __init__(self, chart: ConformalChart, theta=None):
        self.chart = chart
        m = chart.dim
        if theta is None:
            theta = [0] * m
        if len(theta) != m:
            raise ValueError(f"theta needs {m} components")
        self.theta_exprs = [as_expr(t) for t in theta]
        for e in self.theta_exprs:
            if e.variables() and max(e.variables()) >= m:
                raise ValueError("theta uses a variable beyond the chart dimension")

    def __repr__(self) -> str:
        return f"WeylStructure(chart={self.chart.name!r}, theta={[to_source(t) for t in self.theta_exprs]})"

    @property
    def dim(self) -> int:
        return self.chart.dim

    def shifted(self, theta) -> "WeylStructure":
        """``nabla + tilde(theta)``."""
        return WeylStructure(self.chart, [a + as_expr(b) for a, b in zip(self.theta_exprs, theta)])

    def on_chart(self, chart: ConformalChart) -> "WeylStructure":
        """The same connection expressed relative to another gauge of the class."""
        f = self.chart.relative_log_factor(chart)
        return WeylStructure(chart, [t + f.diff(i) for i, t in enumerate(self.theta_exprs)])

    def theta_jet(self, p, order: int) -> Jet:
        sp = jet_space(self.dim, order)
        env = sp.variables(p)
        out = []
        for e in self.theta_exprs:
            v = e.evaluate(env)
            out.append(v.c if isinstance(v, Jet) else sp.constant(v).c)
        return Jet(sp, np.array(out))

    def theta_at(self, p) -> np.ndarray:
        return np.asarray(self.theta_jet(p, 0).value, dtype=float).reshape(self.dim)

    def christoffel_jet(self, p, order: int) -> Jet:
        return weyl_christoffel(
            self.chart.levi_civita_jet(p, order),
            self.chart.metric_jet(p, order),
            self.theta_jet(p, order),
        )

    def christoffel(self, p) -> np.ndarray:
        return np.asarray(self.christoffel_jet(p, 0).value)

    def curvature_jet(self, p, order: int) -> Jet:
        return curvature_from_christoffel(self.christoffel_jet(p, order + 1))


def weyl_christoffel(lc: Jet, g: Jet, theta: Jet) -> Jet:
    """Add ``tilde(theta)`` to Levi-Civita symbols (all jets of equal order)."""
    m = g.shape[0]
    eye = np.eye(m)
    ginv = jinv(g)
    theta_up = jeinsum("km,m->k", ginv, theta)
    return (
        lc
        + jeinsum("ki,j->kij", eye, theta)
        + jeinsum("kj,i->kij", eye, theta)
        - jeinsum("ij,k->kij", g, theta_up)
    )


def curvature_from_christoffel(gamma: Jet) -> Jet:
    """``R[k, l, i, j]`` from a Christoffel jet (result has one order less)."""
    dg = gamma.grad()  # dg[k, j, l, i] = d_i Gamma^k_jl
    g0 = gamma.truncate(gamma.order - 1)
    return (
        dg.transpose(0, 2, 3, 1)
        - dg.transpose(0, 2, 1, 3)
        + jeinsum("kim,mjl->klij", g0, g0)
        - jeinsum("kjm,mil->klij", g0, g0)
    )


def _sym(a: Jet) -> Jet:
    return (a + a.T) * 0.5


def _skew(a: Jet) -> Jet:
    return (a - a.T) * 0.5


def covariant_derivative_form(form: Jet, gamma: Jet, slots: int) -> Jet:
    """``(nabla_i A)_{j...}`` for a covariant tensor jet; new index goes first.

    ``gamma`` must have at least the order of ``form`` minus one.
    """
    d = form.grad()  # trailing derivative axis
    order = d.order
    gamma = gamma.truncate(order) if gamma.order > order else gamma
    a0 = form.truncate(order)
    letters = "abcdefgh"[:slots]
    # move derivative axis to the front
    out = d.transpose(slots, *range(slots))
    for s in range(slots):
        src = letters[:s] + "m" + letters[s + 1:]
        out = out - jeinsum(f"mi{letters[s]},{src}->i{letters}", gamma, a0)
    return out


@dataclass
class CurvaturePackage:
    """Curvature decomposition of a Weyl structure at a point (gauge components)."""

    g: np.ndarray
    R: np.ndarray
    F: np.ndarray
    ric: np.ndarray
    ric_s0: np.ndarray
    scal: float
    sigma: float
    h: Optional[np.ndarray]
    h_sym: Optional[np.ndarray]
    W: Optional[np.ndarray]

    def reassembly_residual(self) -> float:
        if self.h is None or self.W is None:
            raise ConformalError("reassembly needs the full Schouten tensor and the Weyl tensor")
        rebuilt = T.suspension(self.h, self.g) + self.W + T.faraday_tensor(self.F)
        return float(np.max(np.abs(self.R - rebuilt)))


class MobiusStructure:
    """Trace-free symmetric ``h0`` on a surface chart, relative to the chart gauge connection.

    The table is projected onto its trace-free part (for the chart metric) when
    evaluated, so only that part matters.
    """

    def __init__(self, chart: ConformalChart, h0=None):
        if chart.dim != 2:
            raise ConformalError("Mobius structures are attached to surfaces (dimension 2)")
        self.chart = chart
        if h0 is None:
            h0 = [[0, 0], [0, 0]]
        h = _expr_matrix(h0, 2)
        if to_source(h[0][1]) != to_source(h[1][0]):
            raise ValueError("h0 must be symmetric")
        self.h0_exprs = h

    def h0_jet(self, w: WeylStructure, p, order: int) -> Jet:
        """``h0`` of the Mobius structure for the Weyl structure ``w``."""
        if w.dim != 2:
            raise ConformalError("dimension must be 2")
        w_here = w.on_chart(self.chart)
        sp = jet_space(2, order)
        env = sp.variables(p)
        g = self.chart.metric_jet(p, order)
        # only the trace-free part of the given table is meaningful
        base = trace_free_jet(Jet(sp, np.array([[_jc(e.evaluate(env), sp) for e in row] for row in self.h0_exprs])), g)
        theta = w_here.theta_jet(p, order + 1)
        lc = self.chart.levi_civita_jet(p, order)
        nt = covariant_derivative_form(theta, lc, 1)  # nt[i, j] = (nabla^g_i theta)_j
        th = theta.truncate(order)
        tt = jeinsum("i,j->ij", th, th)
        change = _sym(tt - nt)
        return base + trace_free_jet(change, g)

    def h0_at(self, w: WeylStructure, p) -> np.ndarray:
        return np.asarray(self.h0_jet(w, p, 0).value)


class LaplaceStructure:
    """Weight ``-2`` density ``sigma`` on a curve chart, relative to the chart gauge connection."""

    def __init__(self, chart: ConformalChart, sigma=0):
        if chart.dim != 1:
            raise ConformalError("Laplace structures are attached to curves (dimension 1)")
        self.chart = chart
        self.sigma_expr = as_expr(sigma)

    def sigma_jet(self, w: WeylStructure, p, order: int) -> Jet:
        """Gauge value (in ``w.chart``'s gauge) of ``sigma`` for the structure ``w``."""
        if w.dim != 1:
            raise ConformalError("dimension must be 1")
        w_here = w.on_chart(self.chart)
        sp = jet_space(1, order)
        env = sp.variables(p)
        base = _jc(self.sigma_expr.evaluate(env), sp)
        theta = w_here.theta_jet(p, order + 1)
        lc = self.chart.levi_civita_jet(p, order)
        g = self.chart.metric_jet(p, order)
        ginv = jinv(g)
        nt = covariant_derivative_form(theta, lc, 1)
        th = theta.truncate(order)
        delta = -jeinsum("ij,ij->", ginv, nt)
        quad = jeinsum("ij,i,j->", ginv, th, th) * 0.5
        sigma = Jet(sp, base) + delta + quad
        # transport the density value from the structure's gauge to w's gauge
        f = w.chart.relative_log_factor(self.chart)
        if f != as_expr(0):
            sigma = sigma * _jet_of(func("exp", -2 * f), sp, p)
        return sigma

    def sigma_at(self, w: WeylStructure, p) -> float:
        return float(self.sigma_jet(w, p, 0).value)


def _jc(v, sp) -> np.ndarray:
    return v.c if isinstance(v, Jet) else sp.constant(v).c


def _jet_of(e: Expr, sp, p) -> Jet:
    return Jet(sp, _jc(e.evaluate(sp.variables(p)), sp))


def trace_free_jet(a: Jet, g: Jet) -> Jet:
    m = g.shape[0]
    ginv = jinv(g)
    tr = jeinsum("ij,ij->", ginv, a)
    return a - jeinsum(",ij->ij", tr, g) * (1.0 / m)


def trace_jet(a: Jet, g: Jet) -> Jet:
    return jeinsum("ij,ij->", jinv(g), a)


# ---------------------------------------------------------------------------
# curvature quantities as jets


@dataclass
class CurvatureJets:
    g: Jet
    R: Jet
    F: Jet
    ric: Jet
    scal: Jet
    sigma: Jet
    h: Optional[Jet]


def curvature_jets(w: WeylStructure, p, order: int, mobius: Optional[MobiusStructure] = None,
                   laplace: Optional[LaplaceStructure] = None) -> CurvatureJets:
    """All curvature pieces of ``w`` at ``p`` as jets of the requested order."""
    m = w.dim
    g = w.chart.metric_jet(p, order)
    if m == 1:
        z = g.space.constant(np.zeros((1, 1, 1, 1)))
        zero2 = g.space.constant(np.zeros((1, 1)))
        if laplace is None:
            return CurvatureJets(g, z, zero2, zero2, g.space.constant(0.0), g.space.constant(0.0), None)
        sigma = laplace.sigma_jet(w, p, order)
        h = jeinsum(",ij->ij", sigma, g)
        return CurvatureJets(g, z, zero2, zero2, g.space.constant(0.0), sigma, h)
    R = w.curvature_jet(p, order)
    F = jeinsum("kkij->ij", R) * (1.0 / m)
    ric = jeinsum("ilij->jl", R)
    ginv = jinv(g)
    scal = jeinsum("ij,ij->", ginv, ric)
    sigma = scal * (1.0 / (2 * (m - 1)))
    if m >= 3:
        rs = _sym(ric)
        h_sym = rs * (1.0 / (m - 2)) - jeinsum(",ij->ij", scal, g) * (1.0 / (2 * (m - 1) * (m - 2)))
        h = h_sym - F * 0.5
    elif mobius is not None:
        h0 = mobius.h0_jet(w, p, order)
        h = h0 + jeinsum(",ij->ij", sigma, g) * 0.5 - F * 0.5
    else:
        h = None
    return CurvatureJets(g, R, F, ric, scal, sigma, h)


def schouten_jet(w: WeylStructure, p, order: int, mobius=None, laplace=None) -> Jet:
    cj = curvature_jets(w, p, order, mobius, laplace)
    if cj.h is None:
        m = w.dim
        need = "a Mobius structure" if m == 2 else "a Laplace structure"
        raise ConformalError(f"the full Schouten tensor in dimension {m} requires {need}")
    return cj.h


def schouten(w: WeylStructure, p, mobius=None, laplace=None) -> np.ndarray:
    return np.asarray(schouten_jet(w, p, 0, mobius, laplace).value).reshape(w.dim, w.dim)


def christoffel(w: WeylStructure, p) -> np.ndarray:
    """Connection coefficients ``Gamma[k, i, j]`` of ``w`` at ``p``."""
    w.chart.check_positive(p)
    return w.christoffel(p)


def curvature_package(w: WeylStructure, p, mobius: Optional[MobiusStructure] = None) -> CurvaturePackage:
    m = w.dim
    if m < 2:
        raise ConformalError("curvature of a Weyl structure needs dimension at least 2")
    cj = curvature_jets(w, p, 0, mobius)
    g = np.asarray(cj.g.value).reshape(m, m)
    R = np.asarray(cj.R.value).reshape((m,) * 4)
    F = np.asarray(cj.F.value).reshape(m, m)
    ric = np.asarray(cj.ric.value).reshape(m, m)
    scal = float(cj.scal.value)
    sigma = float(cj.sigma.value)
    h = None if cj.h is None else np.asarray(cj.h.value).reshape(m, m)
    h_sym = None if h is None else T.sym(h)
    W = None
    if m >= 3:
        W = R - T.suspension(h, g) - T.faraday_tensor(F)
    return CurvaturePackage(g, R, F, ric, T.sym0(ric, g), scal, sigma, h, h_sym, W)


def exterior_derivative(theta_jet: Jet) -> np.ndarray:
    d = np.asarray(theta_jet.grad().value)  # d[j, i] = d_i theta_j
    return d.T - d


@dataclass
class TransformReport:
    scht: float
    h0: float
    s0: float
    faraday: float
    weyl: Optional[float]

    def max(self) -> float:
        vals = [self.scht, self.h0, self.s0, self.faraday] + ([self.weyl] if self.weyl is not None else [])
        return max(vals)

    def as_dict(self) -> dict:
        return {"scht": self.scht, "h0": self.h0, "s0": self.s0, "faraday": self.faraday, "weyl": self.weyl}


def transform_check(w: WeylStructure, theta, p) -> TransformReport:
    """Residuals of the Schouten, Faraday and Weyl transformation rules for ``w -> w + theta``."""
    m = w.dim
    if m < 3:
        raise ConformalError("transform_check needs dimension at least 3")
    w2 = w.shifted(theta)
    a = curvature_package(w, p)
    b = curvature_package(w2, p)
    th_w = WeylStructure(w.chart, theta)
    thj = th_w.theta_jet(p, 1)
    th = np.asarray(thj.value).reshape(m)
    gamma = w.christoffel_jet(p, 0)
    nt = np.asarray(covariant_derivative_form(thj, gamma, 1).value).reshape(m, m)
    g = a.g
    ginv = np.linalg.inv(g)
    cth = float(th @ ginv @ th)
    expect = a.h - nt + np.outer(th, th) - 0.5 * cth * g
    scht = float(np.max(np.abs(b.h - expect)))
    h0 = float(np.max(np.abs(T.sym0(b.h, g) - (T.sym0(a.h, g) - T.sym0(nt, g) + T.sym0(np.outer(th, th), g)))))
    delta = -float(np.einsum("ij,ij->", ginv, nt))
    s0 = abs(b.sigma - (a.sigma + delta + (2 - m) / 2 * cth))
    far = float(np.max(np.abs(b.F - a.F - exterior_derivative(thj))))
    weyl = float(np.max(np.abs(b.W - a.W)))
    return TransformReport(scht, h0, s0, far, weyl)


# ---------------------------------------------------------------------------
# densities and second-order operators


def _weight(k) -> Fraction:
    return k if isinstance(k, Fraction) else Fraction(k).limit_denominator(10**6)


def density_derivative_jet(w: WeylStructure, lam: Jet, theta: Jet, k) -> Jet:
    """``nabla_i l = d_i lambda + k theta_i lambda`` (lambda is the gauge value)."""
    d = lam.grad()
    order = d.order
    return d + jeinsum("i,->i", theta.truncate(order), lam.truncate(order)) * float(k)


def hessian_weighted(w: WeylStructure, l, p, k) -> np.ndarray:
    """``Hess^nabla l`` with ``Hess[i, j] = (nabla_i nabla l)(d_j)`` for a weight-``k`` density.

    ``l`` is the gauge value of the density as an expression.  The result is
    symmetric exactly when ``k = 0`` or the Faraday form vanishes.
    """
    return np.asarray(hessian_jet(w, l, p, k, 0).value).reshape(w.dim, w.dim)


def hessian_jet(w: WeylStructure, l, p, k, order: int) -> Jet:
    k = float(_weight(k))
    sp = jet_space(w.dim, order + 2)
    lam = _jet_of(as_expr(l), sp, p)
    theta = w.theta_jet(p, order + 1)
    gamma = w.christoffel_jet(p, order)
    dl = density_derivative_jet(w, lam, theta, k)  # order + 1
    ddl = dl.grad().transpose(1, 0)  # [i, j] = d_i (dl_j)
    th = theta.truncate(order)
    dl0 = dl.truncate(order)
    return ddl + jeinsum("i,j->ij", th, dl0) * k - jeinsum("mij,m->ij", gamma, dl0)


def hess_transform_residual(w: WeylStructure, theta, l, p, k) -> float:
    """Residual of the Hessian change under ``w -> w + theta`` for weight ``k``."""
    m = w.dim
    k = float(_weight(k))
    w2 = w.shifted(theta)
    h1 = hessian_weighted(w, l, p, k)
    h2 = hessian_weighted(w2, l, p, k)
    sp = jet_space(m, 1)
    lam = _jet_of(as_expr(l), sp, p)
    thw = WeylStructure(w.chart, theta)
    th_j = thw.theta_jet(p, 1)
    th = np.asarray(th_j.value).reshape(m)
    nabla_l = np.asarray(density_derivative_jet(w, lam, w.theta_jet(p, 1), k).value).reshape(m)
    lv = float(lam.value)
    g = w.chart.metric_at(p)
    ginv = np.linalg.inv(g)
    nt = np.asarray(covariant_derivative_form(th_j, w.christoffel_jet(p, 0), 1).value).reshape(m, m)
    cth = float(th @ ginv @ th)
    nabla_theta_l = float(ginv @ th @ nabla_l)
    expect = (
        (k - 1) * (np.outer(th, nabla_l) + np.outer(nabla_l, th))
        + g * nabla_theta_l
        + k * (nt + (k - 2) * np.outer(th, th) + g * cth) * lv
    )
    return float(np.max(np.abs(h2 - h1 - expect)))


def mobius_canonical(w: WeylStructure, l, p) -> np.ndarray:
    """Canonical Mobius operator on a weight-1 density (dimension >= 3)."""
    m = w.dim
    if m < 3:
        raise ConformalError("the canonical Mobius operator needs dimension >= 3; attach a MobiusStructure")
    g = w.chart.metric_at(p)
    hess = hessian_weighted(w, l, p, 1)
    pkg = curvature_package(w, p)
    lv = float(as_expr(l).evaluate([float(x) for x in p]))
    return T.sym0(hess, g) + T.sym0(pkg.h_sym, g) * lv


def mobius_operator(w: WeylStructure, l, p, mobius: MobiusStructure) -> np.ndarray:
    """Mobius operator of an explicit Mobius structure on a surface."""
    g = w.chart.metric_at(p)
    hess = hessian_weighted(w, l, p, 1)
    lv = float(as_expr(l).evaluate([float(x) for x in p]))
    return T.sym0(hess, g) + mobius.h0_at(w, p) * lv


def laplace_weight(m: int) -> Fraction:
    return Fraction(2 - m, 2)


def laplace_canonical(w: WeylStructure, l, p, k=None) -> float:
    """Conformal Laplacian of a density of weight ``1 - m/2`` (dimension >= 2)."""
    m = w.dim
    if m < 2:
        raise ConformalError("the canonical Laplace operator needs dimension >= 2")
    if k is not None and _weight(k) != laplace_weight(m):
        raise ConformalError(f"density weight must be exactly {laplace_weight(m)} in dimension {m}, got {k}")
    k = laplace_weight(m)
    g = w.chart.metric_at(p)
    hess = hessian_weighted(w, l, p, k)
    pkg = curvature_package(w, p, mobius=None) if m >= 2 else None
    lv = float(as_expr(l).evaluate([float(x) for x in p]))
    return float(np.einsum("ij,ij->", np.linalg.inv(g), hess) + float(k) * pkg.sigma * lv)


def laplace_operator(w: WeylStructure, l, p, laplace: LaplaceStructure) -> float:
    """Laplace operator of an explicit Laplace structure on a curve (weight 1/2)."""
    k = laplace_weight(1)
    g = w.chart.metric_at(p)
    hess = hessian_weighted(w, l, p, k)
    lv = float(as_expr(l).evaluate([float(x) for x in p]))
    return float(hess[0, 0] / g[0, 0] + float(k) * laplace.sigma_at(w, p) * lv)


def mobius_h0_at(mobius: MobiusStructure, w: WeylStructure, p) -> np.ndarray:
    return mobius.h0_at(w, p)


def laplace_sigma_at(laplace: LaplaceStructure, w: WeylStructure, p) -> float:
    return laplace.sigma_at(w, p)


def density_in_gauge(l, chart_from: ConformalChart, chart_to: ConformalChart, k) -> Expr:
    """Gauge value of a weight-``k`` density after changing gauge."""
    f = chart_to.relative_log_factor(chart_from)
    return as_expr(l) * func("exp", float(_weight(k)) * f)


def gauge_factor_value(chart_to: ConformalChart, chart_from: ConformalChart, p) -> float:
    f = chart_to.relative_log_factor(chart_from)
    return float(f.evaluate([float(x) for x in p]))
