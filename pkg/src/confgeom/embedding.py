"""Submanifolds of conformal manifolds and their conformal invariants.

An :class:`Immersion` maps an ``n``-dimensional parameter chart into an
ambient :class:`ConformalChart` of dimension ``m > n``.  At a parameter point
``p`` every object (tangent frame, normal frame, fundamental form, normal
connection) is built as a jet in the parameter variables, so derivatives along
the submanifold are exact.

Conventions (all components are taken in the ambient gauge of the immersion):

* ``T[A, i] = d_i phi^A`` is the tangent frame and ``xi[A, a]`` a gauge
  orthonormal normal frame obtained by Gram-Schmidt of the ambient coordinate
  basis;
* ``B[i, j, a] = g(nabla_i T_j, xi_a)``, ``H[a] = tr B[., ., a] / n`` and
  ``B0 = B - gN (x) H``;
* ``omega[i, a, b] = g(nabla_i xi_a, xi_b)`` is the induced normal connection and
  ``kappa`` the curvature of its weightless part ``omega - theta(T_i) id``;
* ``mu[i, a]`` and ``rho[i, j]`` are the mixed and relative Schouten-Weyl
  tensors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .conformal import (
    ConformalChart,
    LaplaceStructure,
    MobiusStructure,
    WeylStructure,
    hessian_weighted,
    laplace_weight,
    mobius_canonical,
    mobius_operator,
    schouten,
    levi_civita_from_metric,
    weyl_christoffel,
)
from .jets import Expr, Jet, as_expr, compose, jeinsum, jet_space, jinv, sqrt as jsqrt

NORMAL_SKIP_TOL = 1e-10


class EmbeddingError(ValueError):
    """Rank deficiency or missing low-dimensional structure."""


class Immersion:
    """Immersion ``phi`` of an ``n``-chart into an ambient chart of dimension ``m > n``."""

    def __init__(self, ambient: ConformalChart, components, n: Optional[int] = None, name: str = "N"):
        self.ambient = ambient
        self.m = ambient.dim
        comps = [as_expr(c) for c in components]
        if len(comps) != self.m:
            raise ValueError(f"immersion needs {self.m} components, got {len(comps)}")
        used = set().union(*(c.variables() for c in comps))
        self.n = n if n is not None else (max(used) + 1 if used else 0)
        if not 1 <= self.n < self.m:
            raise ValueError("need 1 <= n < m")
        if used and max(used) >= self.n:
            raise ValueError("immersion uses a variable beyond its dimension")
        self.components = comps
        self.name = name

    def __repr__(self) -> str:
        return f"Immersion({self.name!r}, n={self.n}, m={self.m})"

    @property
    def codim(self) -> int:
        return self.m - self.n

    def point(self, p) -> np.ndarray:
        x = [float(v) for v in p]
        return np.array([float(c.evaluate(x)) for c in self.components])

    def phi_jet(self, p, order: int) -> Jet:
        sp = jet_space(self.n, order)
        env = sp.variables(p)
        rows = []
        for c in self.components:
            v = c.evaluate(env)
            rows.append(v.c if isinstance(v, Jet) else sp.constant(v).c)
        return Jet(sp, np.array(rows))

    def pullback(self, e: Expr) -> Expr:
        """Compose an ambient expression with ``phi``."""
        return as_expr(e).substitute(self.components)

    @cached_property
    def induced_chart(self) -> ConformalChart:
        """Chart on the parameter domain carrying the induced gauge metric ``phi^* g``."""
        n, m = self.n, self.m
        d = [[c.diff(i) for i in range(n)] for c in self.components]
        g = [[self.pullback(e) for e in row] for row in self.ambient.metric_exprs]
        out = []
        for i in range(n):
            row = []
            for j in range(n):
                s = as_expr(0)
                for a in range(m):
                    for b in range(m):
                        term = d[a][i] * g[a][b] * d[b][j]
                        s = s + term
                row.append(s)
            out.append(row)
        for i in range(n):
            for j in range(i):
                out[i][j] = out[j][i]
        return ConformalChart(out, n, name=f"{self.name}:induced")

    def induced_weyl(self, w: WeylStructure) -> WeylStructure:
        """Induced Weyl structure on the parameter chart (theta pulled back)."""
        w = self._ambient_weyl(w)
        d = [[c.diff(i) for i in range(self.n)] for c in self.components]
        th = [self.pullback(t) for t in w.theta_exprs]
        out = []
        for i in range(self.n):
            s = as_expr(0)
            for a in range(self.m):
                s = s + th[a] * d[a][i]
            out.append(s)
        return WeylStructure(self.induced_chart, out)

    def _ambient_weyl(self, w: WeylStructure) -> WeylStructure:
        if w.chart is self.ambient:
            return w
        return w.on_chart(self.ambient)


# ---------------------------------------------------------------------------
# frame pipeline


@dataclass
class FrameJets:
    """Jets over the parameter chart at one point (see module docstring)."""

    p: np.ndarray
    q: np.ndarray
    G: Jet          # (m, m), order 2
    T: Jet          # (m, n), order 2
    xi: Jet         # (m, r), order 2
    gN: Jet         # (n, n), order 2
    DT: Jet         # (n, n, m) = nabla_i T_j, order 1
    B: Jet          # (n, n, r), order 1
    H: Jet          # (r,), order 1
    B0: Jet         # (n, n, r), order 1
    omega: Jet      # (n, r, r), order 1
    theta_T: Jet    # (n,), order 1
    gamma_N: Jet    # (n, n, n) induced symbols [l, i, j], order 1


def _gram_schmidt(G: Jet, T_: Jet, m: int, r: int) -> Jet:
    sp = T_.space
    gN = jeinsum("ai,ab,bj->ij", T_, G, T_)
    gNinv = jinv(gN)
    proj = jeinsum("ai,ij,bj,bc->ac", T_, gNinv, T_, G)  # tangential projector
    normals: list[Jet] = []
    for A in range(m):
        e = np.zeros(m)
        e[A] = 1.0
        u = sp.constant(e) - jeinsum("ac,c->a", proj, e)
        for prev in normals:
            u = u - jeinsum("a,ab,b->", u, G, prev) * prev
        nrm2 = jeinsum("a,ab,b->", u, G, u)
        if np.sqrt(max(float(nrm2.value), 0.0)) < NORMAL_SKIP_TOL:
            continue
        u = u * jsqrt(nrm2).reciprocal()
        normals.append(u)
        if len(normals) == r:
            break
    if len(normals) != r:
        raise EmbeddingError("could not complete a normal frame")
    return Jet(sp, np.stack([u.c for u in normals], axis=1))


def frame_jets(imm: Immersion, w: WeylStructure, p) -> FrameJets:
    w = imm._ambient_weyl(w)
    n, m, r = imm.n, imm.m, imm.codim
    p = np.asarray(p, dtype=float)
    phi = imm.phi_jet(p, 3)
    q = np.asarray(phi.value, dtype=float)
    g_amb = imm.ambient.metric_jet(q, 2)
    if np.linalg.eigvalsh(np.asarray(g_amb.value))[0] <= 0:
        raise EmbeddingError(f"ambient gauge metric not positive at {q.tolist()}")
    th_amb = w.theta_jet(q, 1)
    gam_amb = weyl_christoffel(levi_civita_from_metric(g_amb), g_amb.truncate(1), th_amb)
    G = compose(g_amb, phi)                  # order 2
    gam = compose(gam_amb, phi)              # order 1
    theta = compose(th_amb, phi)             # order 1
    T_ = phi.grad()                          # (m, n), order 2
    t0 = np.asarray(T_.value)
    if np.linalg.matrix_rank(t0, tol=1e-10) < n:
        raise EmbeddingError(f"immersion is not of full rank at {p.tolist()}")
    gN = jeinsum("ai,ab,bj->ij", T_, G, T_)
    xi = _gram_schmidt(G, T_, m, r)
    T1 = T_.truncate(1)
    dT = T_.grad()                           # (m, n, n): [A, j, i] = d_i T^A_j
    DT = dT.transpose(2, 1, 0) + jeinsum("abc,bi,cj->ija", gam, T1, T1)  # [i, j, A]
    G1, xi1 = G.truncate(1), xi.truncate(1)
    B = jeinsum("ija,ab,bc->ijc", DT, G1, xi1)
    gN1 = gN.truncate(1)
    gNinv1 = jinv(gN1)
    H = jeinsum("ij,ijc->c", gNinv1, B) * (1.0 / n)
    B0 = B - jeinsum("ij,c->ijc", gN1, H)
    dxi = xi.grad()                          # [A, a, i]
    Dxi = dxi.transpose(2, 0, 1) + jeinsum("abc,bi,cd->iad", gam, T1, xi1)  # [i, A, a]
    omega = jeinsum("iad,ab,bc->idc", Dxi, G1, xi1)
    theta_T = jeinsum("a,ai->i", theta, T1)
    lowN = jeinsum("ija,ab,bk->kij", DT, G1, T1)
    gamma_N = jeinsum("lk,kij->lij", gNinv1, lowN)
    return FrameJets(p, q, G, T_, xi, gN, DT, B, H, B0, omega, theta_T, gamma_N)


# ---------------------------------------------------------------------------
# invariants


@dataclass
class EmbeddingInvariants:
    """Pointwise invariants (numpy arrays) of an immersion for one Weyl structure."""

    p: np.ndarray
    q: np.ndarray
    tangent: np.ndarray
    normal: np.ndarray
    gN: np.ndarray
    B: np.ndarray
    H: np.ndarray
    B0: np.ndarray
    omega: np.ndarray
    kappa: np.ndarray
    nabla_H: np.ndarray
    delta_B0: np.ndarray
    gamma_N: np.ndarray
    mu: Optional[np.ndarray] = None
    rho: Optional[np.ndarray] = None
    h_M: Optional[np.ndarray] = None
    h_N: Optional[np.ndarray] = None

    def as_dict(self) -> dict:
        out = {}
        for k in ("p", "q", "B", "H", "B0", "kappa", "mu", "rho"):
            v = getattr(self, k)
            out[k] = None if v is None else np.asarray(v).tolist()
        return out


def _value(j: Jet) -> np.ndarray:
    return np.asarray(j.value, dtype=float).reshape(j.shape)


def _kappa(fj: FrameJets) -> np.ndarray:
    r = fj.xi.shape[1]
    # Omega_i[b, a] = omega[i, a, b] - theta(T_i) delta_ab
    om0 = fj.omega - jeinsum("i,ab->iab", fj.theta_T, np.eye(r))
    Om = om0.transpose(0, 2, 1)
    dOm = np.asarray(Om.grad().value)  # [i, b, a, j] = d_j Omega_i[b, a]
    O = _value(Om.truncate(0))
    k = np.einsum("jbai->ijba", dOm) - np.einsum("ibaj->ijba", dOm)
    k += np.einsum("ibc,jca->ijba", O, O) - np.einsum("jbc,ica->ijba", O, O)
    return k


def fundamental_form(imm: Immersion, w: WeylStructure, p):
    """``(B, H, B0)`` at ``p``."""
    fj = frame_jets(imm, w, p)
    return _value(fj.B.truncate(0)), _value(fj.H.truncate(0)), _value(fj.B0.truncate(0))


def _derived(fj: FrameJets):
    om = _value(fj.omega.truncate(0))        # [i, a, b]
    H0 = _value(fj.H.truncate(0))
    dH = np.asarray(fj.H.grad().value)       # [b, i]
    nabla_H = dH.T - np.einsum("a,iba->ib", H0, om)
    B0 = _value(fj.B0.truncate(0))
    dB0 = np.asarray(fj.B0.grad().value)     # [j, k, a, i]
    gN = _value(fj.gN.truncate(0))
    gam = _value(fj.gamma_N.truncate(0))     # [l, i, j]
    nB0 = (
        np.einsum("jkai->ijka", dB0)
        - np.einsum("mij,mka->ijka", gam, B0)
        - np.einsum("mik,jma->ijka", gam, B0)
        + np.einsum("iba,jkb->ijka", om, B0)
    )
    gNinv = np.linalg.inv(gN)
    delta_B0 = np.einsum("ki,kjia->ja", gNinv, nB0)
    return nabla_H, nB0, delta_B0


def _ambient_schouten(imm: Immersion, w: WeylStructure, q, mobius: Optional[MobiusStructure]):
    w = imm._ambient_weyl(w)
    if imm.m == 2 and mobius is None:
        raise EmbeddingError("an ambient surface needs a Mobius structure")
    return schouten(w, q, mobius=mobius)


def _intrinsic_schouten(imm: Immersion, w: WeylStructure, p, n_mobius, n_laplace):
    wn = imm.induced_weyl(w)
    if imm.n == 2 and n_mobius is None:
        raise EmbeddingError("a surface needs a Mobius structure for its Schouten tensor")
    if imm.n == 1 and n_laplace is None:
        raise EmbeddingError("a curve needs a Laplace structure for its Schouten tensor")
    return schouten(wn, p, mobius=n_mobius, laplace=n_laplace)


def embedding_invariants(imm: Immersion, w: WeylStructure, p, *, ambient_mobius: Optional[MobiusStructure] = None,
                         n_mobius: Optional[MobiusStructure] = None, n_laplace: Optional[LaplaceStructure] = None,
                         need_mu: bool = True, need_rho: bool = True) -> EmbeddingInvariants:
    """All invariants at ``p``; ``mu``/``rho`` are ``None`` when the needed structures are absent."""
    fj = frame_jets(imm, w, p)
    n = imm.n
    nabla_H, _, delta_B0 = _derived(fj)
    tangent = _value(fj.T.truncate(0))
    normal = _value(fj.xi.truncate(0))
    gN = _value(fj.gN.truncate(0))
    H = _value(fj.H.truncate(0))
    B0 = _value(fj.B0.truncate(0))
    inv = EmbeddingInvariants(
        p=fj.p, q=fj.q, tangent=tangent, normal=normal, gN=gN,
        B=_value(fj.B.truncate(0)), H=H, B0=B0, omega=_value(fj.omega.truncate(0)),
        kappa=_kappa(fj), nabla_H=nabla_H, delta_B0=delta_B0, gamma_N=_value(fj.gamma_N.truncate(0)),
    )
    have_hm = imm.m >= 3 or ambient_mobius is not None
    if have_hm and (need_mu or need_rho):
        hM = _ambient_schouten(imm, w, fj.q, ambient_mobius)
        inv.h_M = hM
        if need_mu:
            mu = tangent.T @ hM @ normal - nabla_H
            if n > 1:
                mu = mu + delta_B0 / (n - 1)
            inv.mu = mu
        have_hn = n >= 3 or (n == 2 and n_mobius is not None) or (n == 1 and n_laplace is not None)
        if need_rho and have_hn:
            hN = _intrinsic_schouten(imm, w, fj.p, n_mobius, n_laplace)
            inv.h_N = hN
            inv.rho = tangent.T @ hM @ tangent - hN + 0.5 * float(H @ H) * gN + np.einsum("a,ija->ij", H, B0)
    return inv


def normal_curvature_kappa(imm: Immersion, w: WeylStructure, p) -> np.ndarray:
    return _kappa(frame_jets(imm, w, p))


def mixed_schouten(imm: Immersion, w: WeylStructure, p, ambient_mobius=None) -> np.ndarray:
    if imm.m == 2 and ambient_mobius is None:
        raise EmbeddingError("mixed Schouten tensor in a surface needs a Mobius structure")
    return embedding_invariants(imm, w, p, ambient_mobius=ambient_mobius, need_rho=False).mu


def relative_schouten(imm: Immersion, w: WeylStructure, p, *, ambient_mobius=None, n_mobius=None,
                      n_laplace=None) -> np.ndarray:
    if imm.n == 2 and n_mobius is None:
        raise EmbeddingError("relative Schouten tensor of a surface needs a Mobius structure on it")
    if imm.n == 1 and n_laplace is None:
        raise EmbeddingError("relative Schouten tensor of a curve needs a Laplace structure on it")
    if imm.m == 2 and ambient_mobius is None:
        raise EmbeddingError("an ambient surface needs a Mobius structure")
    return embedding_invariants(imm, w, p, ambient_mobius=ambient_mobius, n_mobius=n_mobius,
                                n_laplace=n_laplace, need_mu=False).rho


def codifferential_change_residual(imm: Immersion, w: WeylStructure, eta, p) -> float:
    """Residual of ``delta' B0 - delta B0 = (n - 1) B0(., theta)`` for a tangential ``theta``.

    ``eta`` is a covector on the parameter chart; the ambient 1-form is its
    adapted extension (zero on the normal frame) held constant near the point.
    """
    n = imm.n
    a = embedding_invariants(imm, w, p, need_mu=False, need_rho=False)
    eta = np.asarray(eta, float)
    E = np.hstack([a.tangent, a.normal])
    theta = np.linalg.solve(E.T, np.concatenate([eta, np.zeros(imm.codim)]))
    w2 = imm._ambient_weyl(w).shifted([float(t) for t in theta])
    b = embedding_invariants(imm, w2, p, need_mu=False, need_rho=False)
    theta_up = np.linalg.solve(a.gN, eta)
    expect = (n - 1) * np.einsum("ija,j->ia", a.B0, theta_up)
    return float(np.max(np.abs(b.delta_B0 - a.delta_B0 - expect)))


def extend_adapted(imm: Immersion, theta_N, p, w: Optional[WeylStructure] = None) -> np.ndarray:
    """Ambient covector at ``phi(p)`` restricting to ``theta_N`` with vanishing mean curvature.

    ``theta_N`` is given relative to the induced gauge and the result relative to
    the ambient gauge (``w`` defaults to the gauge Levi-Civita connection).
    """
    w = WeylStructure(imm.ambient) if w is None else imm._ambient_weyl(w)
    inv = embedding_invariants(imm, w, p, need_mu=False, need_rho=False)
    E = np.hstack([inv.tangent, inv.normal])
    rhs = np.concatenate([np.asarray(theta_N, float), inv.H])
    # theta(T_i) = theta_N_i relative to w's restriction, theta(xi_a) = H_a
    base_restr = np.asarray(imm.induced_weyl(w).theta_at(p))
    rhs[: imm.n] -= base_restr
    delta = np.linalg.solve(E.T, rhs)
    return np.asarray(w.theta_at(inv.q)) + delta


def induced_mobius(imm: Immersion, w: WeylStructure, l, p, ambient_mobius=None) -> np.ndarray:
    """Induced Mobius operator applied to a weight-1 density (gauge value ``l``) on the submanifold."""
    if imm.n < 2:
        raise EmbeddingError("the induced Mobius structure needs n >= 2")
    inv = embedding_invariants(imm, w, p, ambient_mobius=ambient_mobius, need_mu=False, need_rho=False)
    if imm.m == 2 or (imm.m < 3 and ambient_mobius is None):
        raise EmbeddingError("ambient Schouten tensor unavailable")
    hM = _ambient_schouten(imm, w, inv.q, ambient_mobius)
    wn = imm.induced_weyl(w)
    hess = hessian_weighted(wn, l, p, 1)
    lv = float(as_expr(l).evaluate([float(x) for x in p]))
    hMN = inv.tangent.T @ hM @ inv.tangent
    return T.sym0(hess, inv.gN) + T.sym0(hMN, inv.gN) * lv + np.einsum("a,ija->ij", inv.H, inv.B0) * lv


def induced_laplace(imm: Immersion, w: WeylStructure, l, p, ambient_mobius=None, k=None) -> float:
    """Induced Laplace operator on a density of weight ``1 - n/2``."""
    n = imm.n
    kk = laplace_weight(n)
    if k is not None and T._as_fraction(k) != kk:
        raise EmbeddingError(f"density weight must be exactly {kk} for n = {n}")
    if imm.m == 2 and ambient_mobius is None:
        raise EmbeddingError("an ambient surface needs a Mobius structure")
    inv = embedding_invariants(imm, w, p, ambient_mobius=ambient_mobius, need_mu=False, need_rho=False)
    hM = _ambient_schouten(imm, w, inv.q, ambient_mobius)
    wn = imm.induced_weyl(w)
    hess = hessian_weighted(wn, l, p, kk)
    lv = float(as_expr(l).evaluate([float(x) for x in p]))
    gNinv = np.linalg.inv(inv.gN)
    hMN = inv.tangent.T @ hM @ inv.tangent
    k = float(kk)
    return float(
        np.einsum("ij,ij->", gNinv, hess)
        + k * np.einsum("ij,ij->", gNinv, hMN) * lv
        + k * n / 2 * float(inv.H @ inv.H) * lv
    )


def intrinsic_mobius(imm: Immersion, w: WeylStructure, l, p, n_mobius: Optional[MobiusStructure] = None):
    """The submanifold's own Mobius operator (canonical for n >= 3, explicit for n = 2)."""
    wn = imm.induced_weyl(w)
    if imm.n >= 3:
        return mobius_canonical(wn, l, p)
    if imm.n == 2 and n_mobius is not None:
        return mobius_operator(wn, l, p, n_mobius)
    raise EmbeddingError("the submanifold has no Mobius structure of its own")


def mcomp_residual(imm: Immersion, w: WeylStructure, l, p, n_mobius=None, ambient_mobius=None) -> float:
    """``| (M^ind - M^N) l - rho_0 l |``."""
    inv = embedding_invariants(imm, w, p, ambient_mobius=ambient_mobius, n_mobius=n_mobius, need_mu=False)
    if inv.rho is None:
        raise EmbeddingError("relative Schouten tensor unavailable")
    lv = float(as_expr(l).evaluate([float(x) for x in p]))
    diff = induced_mobius(imm, w, l, p, ambient_mobius) - intrinsic_mobius(imm, w, l, p, n_mobius)
    return float(np.max(np.abs(diff - T.sym0(inv.rho, inv.gN) * lv)))


# ---------------------------------------------------------------------------
# classification

TOTALLY_UMBILICAL = "totally_umbilical"
WEAKLY_GEODESIC = "weakly_geodesic"
STRONGLY_GEODESIC = "strongly_geodesic"
NONE = "none"


@dataclass
class Classification:
    verdict: str
    sup_B0: float
    sup_mu: float
    sup_rho: float
    tol: float
    points: list = field(default_factory=list)

    @property
    def totally_umbilical(self) -> bool:
        return self.verdict in (TOTALLY_UMBILICAL, WEAKLY_GEODESIC, STRONGLY_GEODESIC)

    @property
    def weakly_geodesic(self) -> bool:
        return self.verdict in (WEAKLY_GEODESIC, STRONGLY_GEODESIC)

    @property
    def strongly_geodesic(self) -> bool:
        return self.verdict == STRONGLY_GEODESIC

    def as_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "sup_B0": self.sup_B0,
            "sup_mu": self.sup_mu,
            "sup_rho": self.sup_rho,
            "tol": self.tol,
        }


def classify_geodesy(imm: Immersion, grid: Sequence[Sequence[float]], w: Optional[WeylStructure] = None, *,
                     ambient_mobius=None, n_mobius=None, n_laplace=None, tol: float = 1e-6) -> Classification:
    """Threshold the sup-norms of ``B0``, ``mu``, ``rho`` over ``grid``."""
    if imm.m == 2 and ambient_mobius is None:
        raise EmbeddingError("an ambient surface needs a Mobius structure")
    if imm.n == 2 and n_mobius is None:
        raise EmbeddingError("a surface needs a Mobius structure for classification")
    if imm.n == 1 and n_laplace is None:
        raise EmbeddingError("a curve needs a Laplace structure for classification")
    w = WeylStructure(imm.ambient) if w is None else w
    sb = sm = sr = 0.0
    pts = []
    for p in grid:
        inv = embedding_invariants(imm, w, p, ambient_mobius=ambient_mobius, n_mobius=n_mobius, n_laplace=n_laplace)
        b = float(np.max(np.abs(inv.B0), initial=0.0))
        mu = float(np.max(np.abs(inv.mu), initial=0.0))
        rho = float(np.max(np.abs(inv.rho), initial=0.0))
        sb, sm, sr = max(sb, b), max(sm, mu), max(sr, rho)
        pts.append({"p": list(map(float, p)), "B0": b, "mu": mu, "rho": rho})
    if sb > tol:
        verdict = NONE
    elif sm > tol:
        verdict = TOTALLY_UMBILICAL
    elif sr > tol:
        verdict = WEAKLY_GEODESIC
    else:
        verdict = STRONGLY_GEODESIC
    return Classification(verdict, sb, sm, sr, tol, pts)
