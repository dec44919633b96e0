"""Seeded random geometric data for regression scenarios and property checks.

Polynomials have total degree at most 3 with coefficients drawn uniformly from
``[-1, 1]`` and then multiplied by a scale.  Every constant is written in
parentheses so the generated source always parses.
"""

from __future__ import annotations

import itertools
from typing import Optional

import numpy as np

from .conformal import ConformalChart, LaplaceStructure, MobiusStructure
from .embedding import Immersion


def _coef(rng: np.random.Generator, scale: float) -> str:
    return f"({float(rng.uniform(-1.0, 1.0)) * scale!r})"


def _monomials(nvars: int, max_degree: int) -> list[tuple[int, ...]]:
    out = []
    for deg in range(1, max_degree + 1):
        out.extend(itertools.combinations_with_replacement(range(nvars), deg))
    return out


def random_polynomial(rng: np.random.Generator, nvars: int, *, terms: int = 6, max_degree: int = 3,
                      scale: float = 1.0, constant: bool = False) -> str:
    """Sparse polynomial in ``x1..x{nvars}`` with ``terms`` distinct non-constant monomials."""
    pool = _monomials(nvars, max_degree)
    picks = rng.choice(len(pool), size=min(terms, len(pool)), replace=False)
    parts = [_coef(rng, scale)] if constant else []
    for idx in sorted(int(i) for i in picks):
        mono = "*".join(f"x{v + 1}" for v in pool[idx])
        parts.append(f"{_coef(rng, scale)}*{mono}")
    return "+".join(parts) if parts else "0"


def random_points(rng: np.random.Generator, dim: int, count: int, radius: float = 0.3) -> list[list[float]]:
    return [list(map(float, rng.uniform(-radius, radius, dim))) for _ in range(count)]


def random_metric_entries(rng: np.random.Generator, m: int, scale: float = 0.1, terms: int = 4) -> list[list[str]]:
    """``delta + scale * P`` with a symmetric table ``P`` of random cubic polynomials."""
    g = [["0"] * m for _ in range(m)]
    for i in range(m):
        for j in range(i, m):
            poly = random_polynomial(rng, m, terms=terms, scale=scale)
            g[i][j] = g[j][i] = f"1+{poly}" if i == j else poly
    return g


def random_metric(rng: np.random.Generator, m: int, scale: float = 0.1, terms: int = 4,
                  points: Optional[list] = None, name: str = "random") -> ConformalChart:
    """Random chart metric, redrawn until positive definite at ``points``."""
    for _ in range(100):
        chart = ConformalChart(random_metric_entries(rng, m, scale, terms), m, name=name)
        pts = points if points is not None else [np.zeros(m)]
        if all(np.linalg.eigvalsh(chart.metric_at(p))[0] > 0.2 for p in pts):
            return chart
    raise RuntimeError("could not draw a positive definite metric")


def random_theta(rng: np.random.Generator, m: int, scale: float = 0.5, terms: int = 4) -> list[str]:
    return [random_polynomial(rng, m, terms=terms, scale=scale, constant=True) for _ in range(m)]


def random_density(rng: np.random.Generator, m: int, scale: float = 0.3) -> str:
    """Positive scalar ``exp(P)`` for a random cubic ``P``."""
    return f"exp({random_polynomial(rng, m, terms=4, scale=scale, constant=True)})"


def random_graph(rng: np.random.Generator, ambient: ConformalChart, n: int, scale: float = 0.3,
                 terms: int = 4) -> Immersion:
    """Graph ``x -> (x, P_1(x), ..., P_r(x))`` of random cubics."""
    comps = [f"x{i + 1}" for i in range(n)]
    comps += [random_polynomial(rng, n, terms=terms, scale=scale, constant=True)
              for _ in range(ambient.dim - n)]
    return Immersion(ambient, comps, n=n, name="random_graph")


def random_realization_tables(rng: np.random.Generator, n: int, r: int, scale: float = 0.5):
    """Random conformally flat base with trace-free ``B0`` and a ``delta``-skew connection.

    Returns ``(base, B0, connection, n_mobius, n_laplace)`` ready for a
    :class:`~confgeom.realization.RealizationData` with ``g_nu = I``.
    """
    u = random_polynomial(rng, n, terms=3, scale=0.2, constant=True)
    base = ConformalChart.conformally_flat(n, f"exp(2*({u}))", name="base")
    B0 = [[[None] * r for _ in range(n)] for _ in range(n)]
    for a in range(r):
        for i in range(n):
            for j in range(i, n):
                B0[i][j][a] = B0[j][i][a] = random_polynomial(rng, n, terms=3, scale=scale, constant=True)
        # the base metric is a multiple of delta, so the delta-trace must vanish
        B0[n - 1][n - 1][a] = "-(" + "+".join(f"({B0[i][i][a]})" for i in range(n - 1)) + ")" if n > 1 else "0"
    A = [[["0"] * r for _ in range(r)] for _ in range(n)]
    for i in range(n):
        for a in range(r):
            for b in range(a + 1, r):
                e = random_polynomial(rng, n, terms=3, scale=scale, constant=True)
                A[i][b][a] = e
                A[i][a][b] = f"-({e})"
    mob = MobiusStructure(base) if n == 2 else None
    lap = LaplaceStructure(base) if n == 1 else None
    return base, B0, A, mob, lap
