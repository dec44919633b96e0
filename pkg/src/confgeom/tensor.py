"""Pointwise weighted-tensor algebra on a conformal vector space.

Everything here acts on dense numpy arrays at a single point, with a gauge
metric ``g`` (a symmetric positive-definite matrix) representing the conformal
class.  Index conventions used across the package:

* a bilinear form ``A`` is ``A[i, j] = A(e_i, e_j)``;
* an endomorphism ``E`` is ``E[k, l]`` with ``E(e_l) = E[k, l] e_k``;
* a curvature-type tensor ``R[k, l, i, j]`` is the ``e_k`` component of
  ``R_{e_i, e_j} e_l``, so it is antisymmetric in ``(i, j)``.

:class:`WeightedTensor` adds slot variance and a density weight on top of a
raw array so that raising and lowering indices is explicit.  The density
weight ``k`` counts the ``L^k`` factor; the conformal weight is
``(#contravariant) - (#covariant) + k`` and is unchanged by raising or
lowering, while ``k`` moves by ``-2`` or ``+2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

CO = "co"
CONTRA = "contra"


class SingularMetric(np.linalg.LinAlgError):
    pass


def _as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(x).limit_denominator(10**6)
    return Fraction(x)


def inverse_metric(g: np.ndarray) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValueError("metric must be a square matrix")
    if np.linalg.cond(g) > 1e12:
        raise SingularMetric("metric is singular")
    return np.linalg.inv(g)


@dataclass(frozen=True)
class WeightedTensor:
    """A tensor at a point carrying slot variance, density weight and the gauge metric."""

    data: np.ndarray
    variance: tuple[str, ...]
    weight: Fraction = Fraction(0)
    metric: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "variance", tuple(self.variance))
        object.__setattr__(self, "weight", _as_fraction(self.weight))
        if any(v not in (CO, CONTRA) for v in self.variance):
            raise ValueError(f"variance entries must be {CO!r} or {CONTRA!r}")
        if data.ndim != len(self.variance):
            raise ValueError("array rank does not match the number of slots")
        n = data.shape[0] if data.ndim else (self.metric.shape[0] if self.metric is not None else 0)
        if any(s != n for s in data.shape):
            raise ValueError("all slots must have the same dimension")
        metric = np.eye(n) if self.metric is None else np.asarray(self.metric, dtype=float)
        if metric.shape != (n, n) and data.ndim:
            raise ValueError("metric dimension does not match tensor")
        if not np.allclose(metric, metric.T, atol=1e-12, rtol=0):
            raise ValueError("metric must be symmetric")
        object.__setattr__(self, "metric", metric)

    @property
    def n(self) -> int:
        return self.metric.shape[0]

    @property
    def conformal_weight(self) -> Fraction:
        s = sum(v == CONTRA for v in self.variance)
        r = len(self.variance) - s
        return s - r + self.weight

    def _with(self, data, variance=None, weight=None) -> "WeightedTensor":
        return WeightedTensor(
            data,
            self.variance if variance is None else variance,
            self.weight if weight is None else weight,
            self.metric,
        )

    def __add__(self, other: "WeightedTensor") -> "WeightedTensor":
        if self.variance != other.variance or self.weight != other.weight:
            raise ValueError("cannot add tensors of different type or weight")
        return self._with(self.data + other.data)

    def __sub__(self, other: "WeightedTensor") -> "WeightedTensor":
        return self + other * -1.0

    def __mul__(self, s: float) -> "WeightedTensor":
        return self._with(self.data * float(s))

    __rmul__ = __mul__

    def raise_index(self, slot: int) -> "WeightedTensor":
        if self.variance[slot] != CO:
            raise ValueError(f"slot {slot} is already contravariant")
        ginv = inverse_metric(self.metric)
        data = np.moveaxis(np.tensordot(ginv, self.data, axes=([1], [slot])), 0, slot)
        var = list(self.variance)
        var[slot] = CONTRA
        return self._with(data, tuple(var), self.weight - 2)

    def lower_index(self, slot: int) -> "WeightedTensor":
        if self.variance[slot] != CONTRA:
            raise ValueError(f"slot {slot} is already covariant")
        data = np.moveaxis(np.tensordot(self.metric, self.data, axes=([1], [slot])), 0, slot)
        var = list(self.variance)
        var[slot] = CO
        return self._with(data, tuple(var), self.weight + 2)


def raise_index(t: WeightedTensor, slot: int) -> WeightedTensor:
    return t.raise_index(slot)


def lower_index(t: WeightedTensor, slot: int) -> WeightedTensor:
    return t.lower_index(slot)


def scalar_density(value, weight=0, metric=None) -> WeightedTensor:
    """A section of ``L^weight`` at a point (a rank-zero tensor)."""
    if metric is None:
        raise ValueError("a scalar density needs the gauge metric to fix its dimension")
    return WeightedTensor(np.asarray(value, float), (), weight, metric)


def covector(data, weight=0, metric=None) -> WeightedTensor:
    return WeightedTensor(data, (CO,), weight, metric)


def vector(data, weight=0, metric=None) -> WeightedTensor:
    return WeightedTensor(data, (CONTRA,), weight, metric)


def bilinear(data, weight=0, metric=None) -> WeightedTensor:
    return WeightedTensor(data, (CO, CO), weight, metric)


def endomorphism(data, weight=0, metric=None) -> WeightedTensor:
    return WeightedTensor(data, (CONTRA, CO), weight, metric)


def curvature_tensor(data, weight=0, metric=None) -> WeightedTensor:
    """A ``Lambda^2 (x) End`` valued tensor ``R[k, l, i, j]``."""
    return WeightedTensor(data, (CONTRA, CO, CO, CO), weight, metric)


# ---------------------------------------------------------------------------
# raw-array algebra (g defaults to the Euclidean metric)


def _metric_for(n: int, g) -> np.ndarray:
    return np.eye(n) if g is None else np.asarray(g, dtype=float)


def sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def skew(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a - np.swapaxes(a, -1, -2))


def trace_g(a: np.ndarray, g=None) -> float:
    g = _metric_for(a.shape[0], g)
    return float(np.einsum("ij,ij->", inverse_metric(g), a))


def trace_free(a: np.ndarray, g=None) -> np.ndarray:
    """Remove the ``g``-trace of a bilinear form (keeps the skew part)."""
    n = a.shape[0]
    g = _metric_for(n, g)
    return a - trace_g(a, g) / n * g


def sym0(a: np.ndarray, g=None) -> np.ndarray:
    """Symmetric trace-free part of a bilinear form."""
    return trace_free(sym(a), g)


def wedge_vf_array(theta: np.ndarray, x: np.ndarray, g=None) -> np.ndarray:
    """``(theta ^ X)(Y) = theta(Y) X - g(X, Y) theta^sharp`` as a matrix."""
    n = len(theta)
    g = _metric_for(n, g)
    theta_up = inverse_metric(g) @ theta
    return np.outer(x, theta) - np.outer(theta_up, g @ x)


def tilde_theta_array(theta: np.ndarray, x: np.ndarray, g=None) -> np.ndarray:
    return wedge_vf_array(theta, x, g) + float(theta @ x) * np.eye(len(theta))


def wedge_vf(theta, x, g=None):
    """Skew endomorphism ``theta ^ X``; accepts arrays or weighted tensors."""
    if isinstance(theta, WeightedTensor):
        if theta.variance != (CO,) or x.variance != (CONTRA,):
            raise ValueError("wedge_vf expects a covector and a vector")
        data = wedge_vf_array(theta.data, x.data, theta.metric)
        return endomorphism(data, theta.weight + x.weight, theta.metric)
    return wedge_vf_array(np.asarray(theta, float), np.asarray(x, float), g)


def tilde_theta(theta, x, g=None):
    """The ``co(n)`` element ``theta ^ X + theta(X) id``."""
    if isinstance(theta, WeightedTensor):
        if theta.variance != (CO,) or x.variance != (CONTRA,):
            raise ValueError("tilde_theta expects a covector and a vector")
        data = tilde_theta_array(theta.data, x.data, theta.metric)
        return endomorphism(data, theta.weight + x.weight, theta.metric)
    return tilde_theta_array(np.asarray(theta, float), np.asarray(x, float), g)


def endomorphism_action(e: np.ndarray, t: WeightedTensor) -> np.ndarray:
    """Derivation action of an endomorphism on every slot of ``t``."""
    out = np.zeros_like(t.data)
    for slot, var in enumerate(t.variance):
        if var == CONTRA:
            term = np.tensordot(e, t.data, axes=([1], [slot]))
        else:
            term = -np.tensordot(e.T, t.data, axes=([1], [slot]))
        out += np.moveaxis(term, 0, slot)
    return out


def tilde_theta_action(theta: np.ndarray, x: np.ndarray, t: WeightedTensor) -> WeightedTensor:
    """Action of ``tilde theta_X`` on a weighted tensor.

    The skew part acts as a derivation and the identity part acts by the
    conformal weight of ``t``.
    """
    w = wedge_vf_array(np.asarray(theta, float), np.asarray(x, float), t.metric)
    data = endomorphism_action(w, t) + float(t.conformal_weight) * float(np.dot(theta, x)) * t.data
    return t._with(data)


def suspension_array(a: np.ndarray, g=None) -> np.ndarray:
    """``(A ^ id)_{X,Y} = A(Y, .) ^ X - A(X, .) ^ Y`` as ``R[k, l, i, j]``."""
    n = a.shape[0]
    g = _metric_for(n, g)
    ginv = inverse_metric(g)
    a_up = np.einsum("km,jm->kj", ginv, a)  # a_up[k, j] = g^{km} A_{jm}
    eye = np.eye(n)
    return (
        np.einsum("jl,ki->klij", a, eye)
        - np.einsum("il,kj->klij", g, a_up)
        - np.einsum("il,kj->klij", a, eye)
        + np.einsum("jl,ki->klij", g, a_up)
    )


def suspension(a, g=None):
    if isinstance(a, WeightedTensor):
        if a.variance != (CO, CO):
            raise ValueError("suspension expects a bilinear form")
        return curvature_tensor(suspension_array(a.data, a.metric), a.weight, a.metric)
    return suspension_array(np.asarray(a, float), g)


def ricci_contraction(r):
    """``ric(X, Y) = tr(Z -> R_{Z, X} Y)``, i.e. ``ric[j, l] = R[i, l, i, j]``."""
    if isinstance(r, WeightedTensor):
        if r.variance != (CONTRA, CO, CO, CO):
            raise ValueError("ricci_contraction expects a curvature tensor")
        return bilinear(np.einsum("ilij->jl", r.data), r.weight, r.metric)
    return np.einsum("ilij->jl", np.asarray(r, float))


def faraday_part(r: np.ndarray) -> np.ndarray:
    """Identity component ``F`` of ``R`` (``R = R^skew + F (x) id``)."""
    n = r.shape[0]
    return np.einsum("kkij->ij", r) / n


def faraday_tensor(f: np.ndarray) -> np.ndarray:
    """``F (x) id`` as ``R[k, l, i, j]``."""
    n = f.shape[0]
    return np.einsum("kl,ij->klij", np.eye(n), f)


def h_map_array(a: np.ndarray, g=None) -> np.ndarray:
    n = a.shape[0]
    if n < 3:
        raise ValueError("h_map needs dimension at least 3")
    g = _metric_for(n, g)
    # ric(S ^ id) = (n - 2) S for skew S, so the skew part is divided by n - 2
    return sym0(a, g) / (n - 2) + trace_g(a, g) / (2 * n * (n - 1)) * g + skew(a) / (n - 2)


def h_map(a, n: int | None = None, g=None):
    """Inverse of ``ric o suspension`` on bilinear forms (dimension >= 3)."""
    if isinstance(a, WeightedTensor):
        if n is not None and n != a.n:
            raise ValueError("dimension mismatch")
        return bilinear(h_map_array(a.data, a.metric), a.weight, a.metric)
    a = np.asarray(a, float)
    if n is not None and n != a.shape[0]:
        raise ValueError("dimension mismatch")
    return h_map_array(a, g)


def bianchi_residual(r: np.ndarray) -> float:
    """Max of ``|R_{X,Y}Z + R_{Y,Z}X + R_{Z,X}Y|`` over basis vectors."""
    r = np.asarray(r.data if isinstance(r, WeightedTensor) else r, float)
    cyc = r + np.einsum("kijl->klij", r) + np.einsum("kjli->klij", r)
    return float(np.max(np.abs(cyc))) if cyc.size else 0.0


def is_curvature_shaped(r: np.ndarray, tol: float = 1e-12) -> bool:
    r = np.asarray(r, float)
    return r.ndim == 4 and len(set(r.shape)) == 1 and np.max(np.abs(r + np.swapaxes(r, 2, 3)), initial=0) <= tol


def skew_in_endomorphism_slots(r: np.ndarray, g=None) -> float:
    """Residual of ``g``-skewness of each ``R_{i,j}`` endomorphism."""
    n = r.shape[0]
    g = _metric_for(n, g)
    low = np.einsum("mk,klij->mlij", g, r)
    return float(np.max(np.abs(low + np.swapaxes(low, 0, 1)), initial=0))


def norm_sq(v: np.ndarray, g=None) -> float:
    g = _metric_for(len(v), g)
    return float(v @ g @ v)


def random_spd(rng: np.random.Generator, n: int, spread: float = 0.5) -> np.ndarray:
    """Random well-conditioned symmetric positive-definite matrix."""
    q = rng.normal(size=(n, n))
    return np.eye(n) + spread * (q @ q.T) / n


def as_array(t) -> np.ndarray:
    return t.data if isinstance(t, WeightedTensor) else np.asarray(t, float)


def check_same_dimension(*arrays: Sequence) -> int:
    dims = {len(a) for a in arrays}
    if len(dims) != 1:
        raise ValueError("dimension mismatch")
    return dims.pop()
