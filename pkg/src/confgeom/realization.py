"""Realizing prescribed extrinsic invariants by a metric on the total space of a normal bundle.

Given a Riemannian chart ``(N, g)``, a trivial vector bundle ``nu = N x R^r``
with constant fiber metric ``g_nu`` and a metric connection
``nabla^nu e_a = A[i][b][a] dx_i (x) e_b``, the total space carries coordinates
``(x_1..x_n, y_1..y_r)`` and the metric

    g~(X~, Y~)   = g(X, Y) - 2 g_nu(B0(X, Y), y) + b(X, Y) |y|^2
    g~(X~, e~_a) = |y|^2 a(X, e_a)
    g~(e~_a, e~_b) = g_nu(e_a, e_b) (1 + f |y|^2)

where ``X~ = d_x - A(X) y . d_y`` is the horizontal lift.  The zero section
``y = 0`` then has trace-free fundamental form ``B0``, normal connection
``nabla^nu`` and, after choosing ``(a, b, f)`` with :func:`solve_prescription`,
any mixed and relative Schouten-Weyl tensors ``mu`` and ``rho``.

The invariants at a zero-section point depend on the values of ``a, b, f``
there and not on their derivatives, so the solver returns them pointwise.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .conformal import (
    ConformalChart,
    LaplaceStructure,
    MobiusStructure,
    WeylStructure,
    curvature_jets,
    schouten,
)
from .embedding import EmbeddingError, Immersion, embedding_invariants
from .jets import Const, Expr, Jet, Var, as_expr, jeinsum, jet_space

RELATIVE_TOL = 1e-12


class RealizationError(ValueError):
    """Inconsistent realization data or an unattainable prescription."""


def _expr(x) -> Expr:
    return as_expr(float(x)) if isinstance(x, (int, float, np.floating, np.integer)) else as_expr(x)


def _table(obj, shape, name):
    arr = np.empty(shape, dtype=object)
    try:
        src = np.asarray(obj, dtype=object)
    except ValueError as exc:  # ragged nesting
        raise RealizationError(f"{name} has an inconsistent shape") from exc
    if src.shape != shape:
        raise RealizationError(f"{name} must have shape {shape}, got {src.shape}")
    for idx in np.ndindex(shape):
        arr[idx] = _expr(src[idx])
    return arr


def _evaluate(arr: np.ndarray, p) -> np.ndarray:
    x = [float(v) for v in p]
    out = np.empty(arr.shape)
    for idx in np.ndindex(arr.shape):
        out[idx] = float(arr[idx].evaluate(x))
    return out


def _jet_table(arr: np.ndarray, p, order: int) -> Jet:
    n = len(p)
    sp = jet_space(n, order)
    env = sp.variables(p)
    out = np.empty(arr.shape + (sp.size,))
    for idx in np.ndindex(arr.shape):
        v = arr[idx].evaluate(env)
        out[idx] = v.c if isinstance(v, Jet) else sp.constant(v).c
    return Jet(sp, out)


@dataclass
class RealizationData:
    """Geometry of ``(N, g, nu, g_nu, nabla^nu, B0)`` together with the free tensors ``a, b, f``.

    Expression tables use the base variables ``x1..xn``.  ``connection[i][b][a]``
    is the coefficient of ``e_b`` in ``nabla^nu_{d_i} e_a``; ``B0[i][j][a]`` the
    ``e_a`` component of ``B0(d_i, d_j)``; ``a[i][b] = a(d_i, e_b)``.
    """

    base: ConformalChart
    g_nu: np.ndarray
    B0: object
    connection: object = None
    a: object = None
    b: object = None
    f: object = 0
    n_mobius: Optional[MobiusStructure] = None
    n_laplace: Optional[LaplaceStructure] = None

    def __post_init__(self):
        n = self.base.dim
        self.g_nu = np.atleast_2d(np.asarray(self.g_nu, dtype=float))
        r = self.g_nu.shape[0]
        if self.g_nu.shape != (r, r) or r < 1:
            raise RealizationError("g_nu must be a square matrix")
        if not np.allclose(self.g_nu, self.g_nu.T) or np.linalg.eigvalsh(self.g_nu)[0] <= 0:
            raise RealizationError("g_nu must be symmetric positive definite")
        if n + r > 8:
            raise RealizationError("total dimension must be at most 8")
        self.B0 = _table(self.B0, (n, n, r), "B0")
        self.connection = _table(np.zeros((n, r, r)) if self.connection is None else self.connection,
                                 (n, r, r), "connection")
        self.a = _table(np.zeros((n, r)) if self.a is None else self.a, (n, r), "a")
        self.b = _table(np.zeros((n, n)) if self.b is None else self.b, (n, n), "b")
        self.f = _expr(self.f)

    @property
    def n(self) -> int:
        return self.base.dim

    @property
    def r(self) -> int:
        return self.g_nu.shape[0]

    @property
    def m(self) -> int:
        return self.n + self.r

    def validate(self, points: Sequence[Sequence[float]]) -> None:
        """Check symmetry/trace-freeness of ``B0`` and metricity of the connection at ``points``."""
        for p in points:
            g = self.base.metric_at(p)
            if not np.all(np.isfinite(g)) or np.linalg.eigvalsh(g)[0] <= 0:
                raise RealizationError(f"base metric not positive definite at {list(p)}")
            B0 = _evaluate(self.B0, p)
            if np.max(np.abs(B0 - B0.transpose(1, 0, 2)), initial=0.0) > 1e-12:
                raise RealizationError("B0 must be symmetric in its tangent slots")
            tr = np.einsum("ij,ija->a", np.linalg.inv(g), B0)
            if np.max(np.abs(tr), initial=0.0) > 1e-10:
                raise RealizationError(f"B0 is not trace-free at {list(p)}")
            A = _evaluate(self.connection, p)
            for i in range(self.n):
                s = A[i].T @ self.g_nu + self.g_nu @ A[i]
                if np.max(np.abs(s)) > 1e-12:
                    raise RealizationError("the normal connection must preserve g_nu")
            b = _evaluate(self.b, p)
            if np.max(np.abs(b - b.T)) > 1e-12:
                raise RealizationError("b must be symmetric")

    def with_free_tensors(self, a, b, f) -> "RealizationData":
        return replace(self, a=np.asarray(a, dtype=object), b=np.asarray(b, dtype=object), f=f)


@dataclass
class TotalSpaceChart:
    """The total space chart with the metric built from :class:`RealizationData`."""

    data: RealizationData
    chart: ConformalChart
    immersion: Immersion
    epsilon: float
    mobius: Optional[MobiusStructure] = None

    @property
    def weyl(self) -> WeylStructure:
        return WeylStructure(self.chart)

    def zero_section(self, p) -> list:
        return list(map(float, p)) + [0.0] * self.data.r


def _frame_metric(data: RealizationData):
    n, r = data.n, data.r
    y = [Var(n + b) for b in range(r)]
    gnu = data.g_nu
    ysq = as_expr(0)
    for a in range(r):
        for b in range(r):
            if gnu[a, b] != 0:
                ysq = ysq + float(gnu[a, b]) * y[a] * y[b]
    # B0 lowered against y: B0y[i][j] = g_nu(B0(d_i, d_j), y)
    hh = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(i, n):
            s = data.base.metric_exprs[i][j]
            for a in range(r):
                for b in range(r):
                    if gnu[a, b] != 0:
                        s = s - 2.0 * float(gnu[a, b]) * data.B0[i, j, a] * y[b]
            s = s + data.b[i, j] * ysq
            hh[i][j] = hh[j][i] = s
    hv = [[ysq * data.a[i, b] for b in range(r)] for i in range(n)]
    vv = [[float(gnu[a, b]) * (1 + data.f * ysq) for b in range(r)] for a in range(r)]
    return hh, hv, vv, y


def total_metric_exprs(data: RealizationData) -> list[list[Expr]]:
    """Coordinate components of the total-space metric."""
    n, r = data.n, data.r
    hh, hv, vv, y = _frame_metric(data)
    # d_{x_i} = X~_i + V_i . d_y with V_i[b] = sum_a A[i][b][a] y_a
    V = [[sum((data.connection[i, b, a] * y[a] for a in range(r)), as_expr(0)) for b in range(r)] for i in range(n)]
    m = n + r
    G: list[list[Expr]] = [[as_expr(0)] * m for _ in range(m)]
    for i in range(n):
        for j in range(i, n):
            s = hh[i][j]
            for b in range(r):
                s = s + hv[i][b] * V[j][b] + V[i][b] * hv[j][b]
                for a in range(r):
                    s = s + V[i][a] * vv[a][b] * V[j][b]
            G[i][j] = G[j][i] = s
        for b in range(r):
            s = hv[i][b]
            for a in range(r):
                s = s + V[i][a] * vv[a][b]
            G[i][n + b] = G[n + b][i] = s
    for a in range(r):
        for b in range(r):
            G[n + a][n + b] = vv[a][b]
    return G


def _positive_on_shell(chart: ConformalChart, points, r: int, g_nu: np.ndarray, eps: float, rng) -> bool:
    L = np.linalg.cholesky(np.linalg.inv(g_nu))
    for p in points:
        for _ in range(20):
            d = rng.standard_normal(r)
            d = L @ (d / np.linalg.norm(d))  # unit length for g_nu
            x = list(map(float, p)) + list(eps * d)
            g = chart.metric_at(x)
            if not np.all(np.isfinite(g)) or np.linalg.eigvalsh(g)[0] <= 0:
                return False
    return True


def build_total_metric(data: RealizationData, points: Optional[Sequence[Sequence[float]]] = None,
                       epsilon: Optional[float] = None, seed: int = 0, max_halvings: int = 30,
                       name: str = "total") -> TotalSpaceChart:
    """Assemble the total-space chart and certify positivity on ``|y| < epsilon`` near ``points``."""
    n, r = data.n, data.r
    points = [np.zeros(n)] if points is None else [np.asarray(p, float) for p in points]
    data.validate(points)
    G = total_metric_exprs(data)
    chart = ConformalChart(G, n + r, name=name)
    if epsilon is None:
        lo = min(min(np.linalg.eigvalsh(data.base.metric_at(p))[0] for p in points), np.linalg.eigvalsh(data.g_nu)[0])
        epsilon = 0.1 * np.sqrt(lo)
    rng = np.random.default_rng(seed)
    for _ in range(max_halvings):
        if _positive_on_shell(chart, points, r, data.g_nu, epsilon, rng):
            break
        epsilon *= 0.5
    else:
        raise RealizationError("the total metric is not positive definite near the zero section")
    comps = [Var(i) for i in range(n)] + [Const(0.0)] * r
    imm = Immersion(chart, comps, n=n, name="zero_section")
    return TotalSpaceChart(data, chart, imm, float(epsilon))


# ---------------------------------------------------------------------------
# intrinsic data of (N, g, nabla^nu, B0) at a point


@dataclass
class BaseGeometry:
    g: np.ndarray
    ric: np.ndarray
    scal: float
    h_N: np.ndarray
    delta_B0: np.ndarray  # [j, a]: e_a component of (delta B0)(d_j)
    B0: np.ndarray


def base_geometry(data: RealizationData, p) -> BaseGeometry:
    n = data.n
    p = np.asarray(p, dtype=float)
    w = WeylStructure(data.base)
    if n >= 2:
        cj = curvature_jets(w, p, 0)
        ric = T.sym(np.asarray(cj.ric.value).reshape(n, n))
        scal = float(cj.scal.value)
    else:
        ric, scal = np.zeros((1, 1)), 0.0
    if n == 2 and data.n_mobius is None:
        raise RealizationError("a surface needs a Mobius structure to define its Schouten tensor")
    if n == 1 and data.n_laplace is None:
        raise RealizationError("a curve needs a Laplace structure to define its Schouten tensor")
    hN = schouten(w, p, mobius=data.n_mobius, laplace=data.n_laplace)
    g = data.base.metric_at(p)
    B0j = _jet_table(data.B0, p, 1)
    B0 = np.asarray(B0j.value).reshape(n, n, data.r)
    if n >= 2:
        dB0 = np.asarray(B0j.grad().value)  # [j, k, a, i]
        gam = np.asarray(data.base.levi_civita_jet(p, 0).value).reshape(n, n, n)
        A = _evaluate(data.connection, p)  # [i, b, a]
        nB0 = (
            np.einsum("jkai->ijka", dB0)
            - np.einsum("mij,mka->ijka", gam, B0)
            - np.einsum("mik,jma->ijka", gam, B0)
            + np.einsum("iab,jkb->ijka", A, B0)
        )
        delta = np.einsum("ki,kjia->ja", np.linalg.inv(g), nB0)
    else:
        delta = np.zeros((1, data.r))
    return BaseGeometry(g, ric, scal, hN, delta, B0)


def _field_at(x, shape, p) -> np.ndarray:
    """Targets may be numbers, arrays or expression tables over N."""
    arr = np.asarray(x, dtype=object) if not isinstance(x, np.ndarray) else x
    if arr.dtype == object:
        return _evaluate(_table(arr, shape, "target"), p)
    out = np.asarray(arr, dtype=float)
    if out.shape != shape:
        raise RealizationError(f"target must have shape {shape}, got {out.shape}")
    return out


@dataclass
class Prescription:
    """Solved free tensors at one base point."""

    point: np.ndarray
    a: np.ndarray
    b: np.ndarray
    f: float
    h0: Optional[np.ndarray] = None  # Mobius case (m = 2) only

    def as_dict(self) -> dict:
        d = {"point": self.point.tolist(), "a": self.a.tolist(), "b": self.b.tolist(), "f": self.f}
        if self.h0 is not None:
            d["h0"] = self.h0.tolist()
        return d


def solve_prescription(data: RealizationData, mu, rho, p) -> Prescription:
    """Free tensors ``(a, b, f)`` at ``p`` for which the zero section has the targets ``mu``, ``rho``.

    ``mu[i][b] = mu(d_i, e_b)`` and ``rho[i][j] = rho(d_i, d_j)``.  The affine
    relations come from the Ricci tensor of the total metric along the zero
    section (see :func:`ricci_table`).
    """
    n, r, m = data.n, data.r, data.m
    p = np.asarray(p, dtype=float)
    mu = _field_at(mu, (n, r), p)
    rho = _field_at(rho, (n, n), p)
    if np.max(np.abs(rho - rho.T)) > 1e-12:
        raise RealizationError("rho must be symmetric")
    if r == 1 and n >= 2 and np.max(np.abs(mu)) > 1e-12:
        raise RealizationError("the mixed Schouten-Weyl tensor of a hypersurface vanishes; mu must be zero")
    geo = base_geometry(data, p)
    if m == 2:
        return _solve_mobius_surface(data, geo, mu, rho, p)
    gnu = data.g_nu
    # lowered normal components: delta_low[i, b] = g_nu(delta B0(d_i), e_b)
    delta_low = geo.delta_B0 @ gnu
    a = np.zeros((n, r))
    if r >= 2:
        a = -(m - 2) * mu / (r - 1)
        if n >= 2:
            a = a + delta_low / (n - 1)
    g = geo.g
    BB, _, B2 = _b0_squares(geo, gnu)
    # tangential Ricci: ric - r b + 2 BB; scalar: scal - 2 r tr b - 2 r (r-1) f + 3 |B0|^2
    b0 = (T.trace_free(geo.ric + 2 * BB, g) - (m - 2) * (T.trace_free(rho, g) + T.trace_free(geo.h_N, g))) / r
    target = T.trace_g(rho, g) + T.trace_g(geo.h_N, g)
    alpha = (geo.scal + 2 * B2) / (m - 2) - n * (geo.scal + 3 * B2) / (2 * (m - 1) * (m - 2))
    if r >= 2:
        # only f moves the trace once tr b = 0 is chosen
        gamma = n * r * (r - 1) / ((m - 1) * (m - 2))
        f = (target - alpha) / gamma
    else:
        # for a hypersurface neither tr b nor f reaches the trace: it is forced
        if abs(target - alpha) > 1e-9 * max(1.0, abs(alpha)):
            raise RealizationError(
                f"the trace of rho is determined for a hypersurface: need tr rho = {alpha - T.trace_g(geo.h_N, g):.12g}"
            )
        f = 0.0
    b = b0
    return Prescription(p, a, T.sym(b), float(f))


def hypersurface_rho_trace(data: RealizationData, p) -> float:
    """The trace of rho forced on a hypersurface zero section (``r = 1``, ``n >= 2``)."""
    if data.r != 1 or data.n < 2:
        raise RealizationError("only defined for hypersurfaces of dimension >= 2")
    m, n = data.m, data.n
    geo = base_geometry(data, p)
    _, _, B2 = _b0_squares(geo, data.g_nu)
    alpha = (geo.scal + 2 * B2) / (m - 2) - n * (geo.scal + 3 * B2) / (2 * (m - 1) * (m - 2))
    return float(alpha - T.trace_g(geo.h_N, geo.g))


def _solve_mobius_surface(data: RealizationData, geo: BaseGeometry, mu, rho, p) -> Prescription:
    """``m = 2``: the metric stays ``g + g_nu`` and the targets fix a Mobius structure instead."""
    g11, gn = float(geo.g[0, 0]), float(data.g_nu[0, 0])
    h00 = float(rho[0, 0] + geo.h_N[0, 0])
    h01 = float(mu[0, 0])
    h0 = np.array([[h00, h01], [h01, -h00 * gn / g11]])
    return Prescription(np.asarray(p, float), np.zeros((1, 1)), np.zeros((1, 1)), 0.0, h0)


def realize(data: RealizationData, mu, rho, p, epsilon: Optional[float] = None) -> tuple[TotalSpaceChart, Prescription]:
    """Solve at ``p`` and build the total space with the free tensors frozen at their values there."""
    pres = solve_prescription(data, mu, rho, p)
    if data.m == 2:
        if data.n_laplace is None:
            raise RealizationError("a curve needs a Laplace structure")
        d2 = data.with_free_tensors(np.zeros((1, 1)), np.zeros((1, 1)), 0)
        tot = build_total_metric(d2, [p], epsilon)
        gn = float(data.g_nu[0, 0])
        g11 = data.base.metric_exprs[0][0]
        h = pres.h0
        h0 = [[h[0, 0], h[0, 1]], [h[0, 1], -h[0, 0] * gn / g11]]
        tot.mobius = MobiusStructure(tot.chart, h0)
        return tot, pres
    d2 = data.with_free_tensors(pres.a, pres.b, pres.f)
    return build_total_metric(d2, [p], epsilon), pres


# ---------------------------------------------------------------------------
# checks against direct curvature evaluation


def _b0_squares(geo: BaseGeometry, g_nu: np.ndarray):
    """``BB(X, Y) = sum g_nu(B0(X, e_k), B0(Y, e_k))``, ``Q`` its normal analogue and ``|B0|^2``."""
    ginv = np.linalg.inv(geo.g)
    B0 = geo.B0
    BB = np.einsum("ika,jlb,kl,ab->ij", B0, B0, ginv, g_nu)
    Q = np.einsum("ija,klb,ik,jl,ac,bd->cd", B0, B0, ginv, ginv, g_nu, g_nu)
    return BB, Q, float(np.einsum("ij,ij->", ginv, BB))


def predicted_ricci(data: RealizationData, p, corrected: bool = True) -> dict:
    """Ricci blocks and scalar curvature of the total metric along the zero section.

    ``corrected=False`` drops the terms quadratic in ``B0``; the remaining
    expressions are exact only when ``B0`` vanishes at ``p``.
    """
    r = data.r
    geo = base_geometry(data, p)
    a = _evaluate(data.a, p)
    b = _evaluate(data.b, p)
    f = float(data.f.evaluate(list(map(float, p))))
    trb = T.trace_g(b, geo.g)
    BB, Q, B2 = _b0_squares(geo, data.g_nu)
    k = 1.0 if corrected else 0.0
    return {
        "tangential": geo.ric - r * b + 2 * k * BB,
        "mixed": -geo.delta_B0 @ data.g_nu - (r - 1) * a,
        "normal": -(trb + 2 * (r - 1) * f) * data.g_nu + k * Q,
        "scalar": geo.scal - 2 * r * trb - 2 * r * (r - 1) * f + 3 * k * B2,
    }


def ricci_table(tot: TotalSpaceChart, p, corrected: bool = True) -> dict:
    """Line-by-line residuals of :func:`predicted_ricci` against the curvature of the built metric."""
    data = tot.data
    if data.m < 3:
        raise RealizationError("the Ricci table needs total dimension >= 3")
    n = data.n
    q = np.asarray(tot.zero_section(p))
    cj = curvature_jets(tot.weyl, q, 0)
    ric = np.asarray(cj.ric.value).reshape(data.m, data.m)
    scal = float(cj.scal.value)
    pred = predicted_ricci(data, p, corrected)
    return {
        "tangential": float(np.max(np.abs(ric[:n, :n] - pred["tangential"]))),
        "mixed": float(np.max(np.abs(ric[:n, n:] - pred["mixed"]))),
        "normal": float(np.max(np.abs(ric[n:, n:] - pred["normal"]))),
        "scalar": abs(scal - pred["scalar"]),
    }


def covariant_table(tot: TotalSpaceChart, p, corrected: bool = True) -> dict:
    """Residuals of the four first-order covariant-derivative formulas for lifted fields.

    Lifts of the coordinate fields ``d_i`` and the constant sections ``e_a`` are
    differentiated with the Levi-Civita connection of the total metric.  The
    result is compared with the closed formulas (base data frozen at ``p``) in
    the value and the first-order fiber coefficients at the zero section.
    """
    data = tot.data
    n, r, m = data.n, data.r, data.m
    p = np.asarray(p, float)
    q = np.asarray(tot.zero_section(p))
    sp = jet_space(m, 1)
    ys = [sp.variables(q)[n + a] for a in range(r)]
    gam = tot.chart.levi_civita_jet(q, 1)
    A = _evaluate(data.connection, p)  # [i, b, a]
    geo = base_geometry(data, p)
    B0, gnu, ginv = geo.B0, data.g_nu, np.linalg.inv(geo.g)
    a = _evaluate(data.a, p)
    b = _evaluate(data.b, p)
    f = float(data.f.evaluate(list(map(float, p))))
    gam_N = np.asarray(data.base.levi_civita_jet(p, 0).value).reshape(n, n, n)
    dB0 = np.asarray(_jet_table(data.B0, p, 1).grad().value)
    nB0 = (  # nB0[i, j, k, a] = ((nabla_i B0)(d_j, d_k))^a
        np.einsum("jkai->ijka", dB0)
        - np.einsum("mij,mka->ijka", gam_N, B0)
        - np.einsum("mik,jma->ijka", gam_N, B0)
        + np.einsum("iab,jkb->ijka", A, B0)
    )
    dA = np.asarray(_jet_table(data.connection, p, 1).grad().value)  # [i, b, a, j] = d_j A_i
    Rnu = (np.einsum("jbai->ijba", dA) - np.einsum("ibaj->ijba", dA)
           + np.einsum("ibc,jca->ijba", A, A) - np.einsum("jbc,ica->ijba", A, A))

    y_vars = [Var(n + c) for c in range(r)]

    def lifted_field(i) -> Jet:
        comps = [as_expr(1.0 if k == i else 0.0) for k in range(n)]
        for bb in range(r):
            s = as_expr(0)
            for aa in range(r):
                s = s - data.connection[i, bb, aa] * y_vars[aa]
            comps.append(s)
        return _jet_table(np.array(comps, dtype=object), q, 2)

    def vertical_field(c) -> Jet:
        e = np.zeros(m)
        e[n + c] = 1.0
        return jet_space(m, 2).constant(e)

    def nabla(U: Jet, V: Jet) -> Jet:
        U1 = U.truncate(1)
        return jeinsum("l,kl->k", U1, V.grad()) + jeinsum("kij,i,j->k", gam, U1, V.truncate(1))

    def lin(vec) -> Jet:
        s = sp.constant(0.0)
        for aa in range(r):
            s = s + ys[aa] * float(vec[aa])
        return s

    def assemble(tang, vert) -> Jet:
        """Horizontal lift of ``tang`` plus the vertical vector ``vert`` (first order in y)."""
        out = list(tang)
        for bb in range(r):
            s = vert[bb]
            for l in range(n):
                s = s - tang[l] * lin(A[l, bb])
            out.append(s)
        return Jet(sp, np.stack([o.c for o in out]))

    fiber_idx = [0] + [sp.index[tuple(1 if k == n + c else 0 for k in range(m))] for c in range(r)]

    def compare(lhs: Jet, rhs: Jet) -> float:
        return float(np.max(np.abs(np.asarray((lhs - rhs).c)[..., fiber_idx])))

    xi_low = [lin(gnu[:, c]) for c in range(r)]  # g_nu(e_c, y)
    const = sp.constant
    res = {"XY": 0.0, "zetaX": 0.0, "Xzeta": 0.0, "zetaeta": 0.0}
    for i in range(n):
        X = lifted_field(i)
        for j in range(n):
            Y = lifted_field(j)
            tang = []
            for l in range(n):
                s = const(float(gam_N[l, i, j]))
                for k in range(n):
                    form = nB0[i, j, k] + nB0[j, i, k] - nB0[k, i, j]
                    s = s - lin(gnu @ form) * float(ginv[l, k])
                tang.append(s)
            vert = [const(float(B0[i, j, bb])) - ys[bb] * float(b[i, j]) - lin(Rnu[i, j, bb]) * 0.5 for bb in range(r)]
            res["XY"] = max(res["XY"], compare(nabla(X, Y), assemble(tang, vert)))
        for c in range(r):
            Z = vertical_field(c)
            # zeroth-order tangential part W0 = -B0(X, .)(e_c) raised with g
            W0 = -ginv @ (B0[i] @ gnu[:, c])
            tang = []
            for l in range(n):
                s = const(0.0)
                for k in range(n):
                    form = const(-float(B0[i, k] @ gnu[:, c])) + xi_low[c] * float(b[i, k]) \
                        + lin(gnu[c] @ Rnu[i, k]) * 0.5
                    if corrected:
                        # raising with the total metric: its O(y) part is -2 g_nu(B0, y)
                        form = form + lin(gnu @ np.einsum("m,ma->a", W0, B0[:, k])) * 2.0
                    s = s + form * float(ginv[l, k])
                tang.append(s)
            a_up = np.linalg.solve(gnu, a[i])
            vert = [xi_low[c] * float(a_up[bb]) - ys[bb] * float(a[i, c]) for bb in range(r)]
            rhs = assemble(tang, vert)
            res["zetaX"] = max(res["zetaX"], compare(nabla(Z, X), rhs))
            conn = assemble([const(0.0)] * n, [const(float(A[i, bb, c])) for bb in range(r)])
            res["Xzeta"] = max(res["Xzeta"], compare(nabla(X, Z), rhs + conn))
    for c in range(r):
        Z = vertical_field(c)
        for d in range(r):
            E = vertical_field(d)
            vert = [(xi_low[c] * float(d == bb) + xi_low[d] * float(c == bb) - ys[bb] * float(gnu[c, d])) * f
                    for bb in range(r)]
            tang = [xi_low[c] * float(ginv[l] @ a[:, d]) + xi_low[d] * float(ginv[l] @ a[:, c]) for l in range(n)]
            res["zetaeta"] = max(res["zetaeta"], compare(nabla(Z, E), assemble(tang, vert)))
    return res


# ---------------------------------------------------------------------------
# round trip through the embedding module


def _structures_on_zero_section(tot: TotalSpaceChart):
    """Transfer the base Mobius/Laplace structure to the induced chart of the zero section."""
    data = tot.data
    chart = tot.immersion.induced_chart
    mob = MobiusStructure(chart, data.n_mobius.h0_exprs) if data.n_mobius is not None else None
    lap = LaplaceStructure(chart, data.n_laplace.sigma_expr) if data.n_laplace is not None else None
    if data.n_mobius is not None and data.n_mobius.chart is not data.base:
        raise RealizationError("the Mobius structure must be attached to the base chart")
    if data.n_laplace is not None and data.n_laplace.chart is not data.base:
        raise RealizationError("the Laplace structure must be attached to the base chart")
    return mob, lap


@dataclass
class RoundTrip:
    point: np.ndarray
    B0: float
    mu: float
    rho: float
    kappa: float

    @property
    def max(self) -> float:
        return max(self.B0, self.mu, self.rho, self.kappa)

    def as_dict(self) -> dict:
        return {"point": self.point.tolist(), "B0": self.B0, "mu": self.mu, "rho": self.rho,
                "kappa": self.kappa, "max": self.max}


def round_trip(tot: TotalSpaceChart, mu, rho, p, w: Optional[WeylStructure] = None) -> RoundTrip:
    """Compare the zero-section invariants of ``tot`` with the prescribed data at ``p``.

    Targets are converted to the Gram-Schmidt normal frame used by the
    embedding module; the normal curvature is compared with the curvature of
    the prescribed connection.
    """
    data = tot.data
    n, r = data.n, data.r
    p = np.asarray(p, float)
    mu = _field_at(mu, (n, r), p)
    rho = _field_at(rho, (n, n), p)
    mob, lap = _structures_on_zero_section(tot)
    w = tot.weyl if w is None else w
    inv = embedding_invariants(tot.immersion, w, p, ambient_mobius=tot.mobius, n_mobius=mob, n_laplace=lap)
    xi = inv.normal[n:, :]  # e-components of the normal frame
    B0 = _evaluate(data.B0, p)
    B0_t = np.einsum("ija,ab,bc->ijc", B0, data.g_nu, xi)
    mu_t = mu @ xi
    A = _evaluate(data.connection, p)
    dA = np.asarray(_jet_table(data.connection, p, 1).grad().value)
    Rnu = (np.einsum("jbai->ijba", dA) - np.einsum("ibaj->ijba", dA)
           + np.einsum("ibc,jca->ijba", A, A) - np.einsum("jbc,ica->ijba", A, A))
    # kappa[i, j, b', a'] acts on frame components: xi^-1 R xi
    kappa_t = np.einsum("cb,ijba,ad->ijcd", np.linalg.inv(xi), Rnu, xi)
    return RoundTrip(
        p,
        float(np.max(np.abs(inv.B0 - B0_t), initial=0.0)),
        float(np.max(np.abs(inv.mu - mu_t), initial=0.0)),
        float(np.max(np.abs(inv.rho - rho), initial=0.0)),
        float(np.max(np.abs(inv.kappa - kappa_t), initial=0.0)),
    )


# ---------------------------------------------------------------------------
# flat plane in R^4 spanned by common conformal geodesics but nowhere umbilic


def section5_data() -> RealizationData:
    """Flat plane with ``B0(dx, dx) = -B0(dy, dy) = W``, ``B0(dx, dy) = V`` and a trivial normal connection."""
    base = ConformalChart.euclidean(2, name="plane")
    B0 = [[[1, 0], [0, 1]], [[0, 1], [-1, 0]]]  # e_1 = W, e_2 = V
    return RealizationData(base, np.eye(2), B0, n_mobius=MobiusStructure(base))


def _unit(t: float) -> np.ndarray:
    return np.array([np.cos(t), np.sin(t)])


def section5_scenario(grid: int = 8, points: Optional[Sequence[Sequence[float]]] = None,
                      algebraic_tol: float = 1e-10, tol: float = 1e-6) -> dict:
    """Build the example and verify its identities on a ``grid x grid`` set of angles.

    With ``X^t = cos t dx + sin t dy`` and ``theta^t = cos 2t W + sin 2t V`` the
    checks are ``<X^t, X^s> = cos(t - s)``, ``B0(X^t, X^s) = theta^((t+s)/2)``,
    ``<theta^t, theta^s> = cos(2t - 2s)``, ``nabla^t_{X^t} X^t = 0`` and the
    vanishing of ``h^t(X^t, V)``, ``h^t(X^t, W)`` and ``h^t(X^t, X^s)`` for the
    Weyl structure ``nabla^t`` of the built metric shifted by ``theta^t``.
    """
    from .embedding import classify_geodesy

    data = section5_data()
    mu = np.zeros((2, 2))
    rho = -0.5 * np.eye(2)
    p0 = np.zeros(2)
    tot, pres = realize(data, mu, rho, p0)
    points = [p0, np.array([0.3, -0.2]), np.array([-0.5, 0.4])] if points is None else [np.asarray(p, float) for p in points]
    q = np.asarray(tot.zero_section(p0))
    G = tot.chart.metric_at(q)
    g, gnu = G[:2, :2], G[2:, 2:]
    inv = embedding_invariants(tot.immersion, tot.weyl, p0, n_mobius=MobiusStructure(tot.immersion.induced_chart))
    xi = inv.normal[2:, :]
    B0_e = np.einsum("ijc,ac->ija", inv.B0, xi)  # back to the W, V basis
    ts = 2 * np.pi * np.arange(grid) / grid
    worst = {"inner_X": 0.0, "B0_XX": 0.0, "inner_theta": 0.0, "nabla_XX": 0.0,
             "h_XV": 0.0, "h_XW": 0.0, "h_XX": 0.0}
    W_vec, V_vec = np.array([0, 0, 1.0, 0]), np.array([0, 0, 0, 1.0])
    for t in ts:
        Xt = _unit(t)
        th_t = gnu @ _unit(2 * t)
        wt = tot.weyl.shifted([0.0, 0.0, float(th_t[0]), float(th_t[1])])
        gam = wt.christoffel(q)
        X4 = np.concatenate([Xt, [0.0, 0.0]])
        worst["nabla_XX"] = max(worst["nabla_XX"], float(np.max(np.abs(np.einsum("kij,i,j->k", gam, X4, X4)))))
        h = schouten(wt, q)
        worst["h_XV"] = max(worst["h_XV"], abs(float(X4 @ h @ V_vec)))
        worst["h_XW"] = max(worst["h_XW"], abs(float(X4 @ h @ W_vec)))
        for s in ts:
            Xs = _unit(s)
            Xs4 = np.concatenate([Xs, [0.0, 0.0]])
            worst["inner_X"] = max(worst["inner_X"], abs(float(Xt @ g @ Xs) - np.cos(t - s)))
            bxx = np.einsum("i,j,ija->a", Xt, Xs, B0_e)
            worst["B0_XX"] = max(worst["B0_XX"], float(np.max(np.abs(bxx - _unit(t + s)))))
            worst["inner_theta"] = max(worst["inner_theta"], abs(float(_unit(2 * t) @ gnu @ _unit(2 * s)) - np.cos(2 * t - 2 * s)))
            worst["h_XX"] = max(worst["h_XX"], abs(float(X4 @ h @ Xs4)))
    algebraic = ("inner_X", "B0_XX", "inner_theta")
    checks = {k: {"residual": v, "tol": algebraic_tol if k in algebraic else tol,
                  "pass": bool(v < (algebraic_tol if k in algebraic else tol))} for k, v in worst.items()}
    mob = MobiusStructure(tot.immersion.induced_chart)
    cls = classify_geodesy(tot.immersion, points, tot.weyl, n_mobius=mob)
    b0_min = min(
        float(np.max(np.abs(embedding_invariants(tot.immersion, tot.weyl, p, need_mu=False, need_rho=False).B0)))
        for p in points
    )
    rt = round_trip(tot, mu, rho, p0)
    checks["nowhere_umbilic"] = {"residual": b0_min, "tol": tol, "pass": bool(b0_min > tol)}
    checks["round_trip"] = {"residual": rt.max, "tol": 1e-5, "pass": bool(rt.max < 1e-5)}
    kmax = float(np.max(np.abs(inv.kappa)))
    checks["kappa_zero"] = {"residual": kmax, "tol": 1e-7, "pass": bool(kmax < 1e-7)}
    verdict = "not totally umbilical" if not cls.totally_umbilical else cls.verdict
    return {
        "prescription": pres.as_dict(),
        "epsilon": tot.epsilon,
        "checks": checks,
        "classification": cls.as_dict(),
        "verdict": verdict,
        "pass": all(c["pass"] for c in checks.values()) and verdict == "not totally umbilical",
    }


# ---------------------------------------------------------------------------
# adapted conformal factor


@dataclass
class AdaptedFactor:
    """``f = sum_b c_b l_b`` with ``l_b`` defining functions of the submanifold."""

    expr: Expr
    coefficients: np.ndarray
    point: np.ndarray
    chart: ConformalChart  # ambient chart with gauge metric e^{-2f} g

    def immersion(self, imm: Immersion) -> Immersion:
        return Immersion(self.chart, imm.components, n=imm.n, name=f"{imm.name}:adapted")


def defining_functions(imm: Immersion) -> list[Expr]:
    """``l_b = x_{n+b} - phi_{n+b}(x_1..x_n)`` for graph-like (tubular) parametrizations."""
    n = imm.n
    for i in range(n):
        c = imm.components[i]
        if not (isinstance(c, Var) and c.index == i):
            raise EmbeddingError("coordinates are not tubular: the first n components must be x1..xn")
    return [Var(n + b) - imm.components[n + b] for b in range(imm.codim)]


def adapted_factor(imm: Immersion, target_H, p, w: Optional[WeylStructure] = None) -> AdaptedFactor:
    """Conformal factor with ``f|_N = 0`` whose gauge ``e^{-2f} g`` has mean curvature ``target_H`` at ``p``.

    ``target_H`` is given on the Gram-Schmidt normal frame of ``imm``.  The
    coefficients are frozen at ``p``; ``f`` vanishes on the whole submanifold and
    ``df`` is normal to it there.
    """
    w = WeylStructure(imm.ambient) if w is None else w
    ells = defining_functions(imm)
    inv = embedding_invariants(imm, w, p, need_mu=False, need_rho=False)
    target = np.asarray(target_H, dtype=float).reshape(imm.codim)
    q = inv.q
    # dl_b(xi_a)
    D = np.array([[float(sum(e.diff(k).evaluate(list(q)) * inv.normal[k, a] for k in range(imm.m)))
                   for a in range(imm.codim)] for e in ells])
    # gauge e^{-2f} g shifts theta by -df, so H' = H + df(xi)
    coeffs = np.linalg.solve(D.T, target - inv.H)
    f = as_expr(0)
    for cb, e in zip(coeffs, ells):
        f = f + float(cb) * e
    return AdaptedFactor(f, coeffs, np.asarray(p, float), imm.ambient.rescaled(-f))
