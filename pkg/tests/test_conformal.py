from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from confgeom import tensor as T
from confgeom.conformal import (
    ConformalChart,
    ConformalError,
    LaplaceStructure,
    MobiusStructure,
    WeylStructure,
    christoffel,
    curvature_package,
    density_in_gauge,
    exterior_derivative,
    hess_transform_residual,
    hessian_weighted,
    laplace_canonical,
    laplace_operator,
    laplace_sigma_at,
    laplace_weight,
    mobius_canonical,
    mobius_h0_at,
    mobius_operator,
    schouten,
    transform_check,
)
from confgeom.jets import parse
from confgeom.random_data import random_density, random_metric, random_points, random_polynomial, random_theta

seeds = st.integers(min_value=0, max_value=2**31 - 1)
pt3 = st.lists(st.floats(-0.3, 0.3), min_size=3, max_size=3)


def _koszul_fd(chart, p, h=1e-4):
    """Christoffel symbols from finite differences of the metric."""
    m = chart.dim
    p = np.asarray(p, float)
    dg = np.zeros((m, m, m))  # dg[i, j, l] = d_i g_jl
    for i in range(m):
        e = np.zeros(m)
        e[i] = h
        dg[i] = (chart.metric_at(p + e) - chart.metric_at(p - e)) / (2 * h)
    low = 0.5 * (np.einsum("ijl->lij", dg) + np.einsum("jil->lij", dg) - np.einsum("lij->lij", dg))
    return np.einsum("kl,lij->kij", np.linalg.inv(chart.metric_at(p)), low)


def _random_weyl(seed, m=3, theta_scale=0.5):
    rng = np.random.default_rng(seed)
    chart = random_metric(rng, m, scale=0.1, points=[np.zeros(m)])
    return WeylStructure(chart, random_theta(rng, m, scale=theta_scale)), rng


# -- connection ---------------------------------------------------------------------


def test_flat_levi_civita_is_zero():
    assert np.array_equal(christoffel(WeylStructure(ConformalChart.euclidean(3)), [0.1, 0.2, 0.3]), np.zeros((3, 3, 3)))


def test_closed_one_form_shift_on_flat_plane():
    w = WeylStructure(ConformalChart.euclidean(2), ["1", "0"])
    gamma = christoffel(w, [0.0, 0.0])
    # nabla_{e2} e2 = -e1, nabla_{e1} e1 = e1, nabla_{e1} e2 = e2
    assert gamma[0, 1, 1] == pytest.approx(-1.0)
    assert gamma[0, 0, 0] == pytest.approx(1.0)
    assert gamma[1, 0, 1] == pytest.approx(1.0)


@pytest.mark.parametrize("p", [[0.0, 0.0, 0.0], [0.3, -0.5, 0.2], [1.1, 0.4, -0.8]])
def test_sphere_christoffel_matches_finite_difference_koszul(p):
    chart = ConformalChart.round_sphere(3)
    assert np.allclose(christoffel(WeylStructure(chart), p), _koszul_fd(chart, p), atol=1e-6)


@given(seeds, pt3)
@settings(max_examples=15)
def test_weyl_connection_is_torsion_free_and_conformal(seed, p):
    w, _ = _random_weyl(seed)
    gamma = christoffel(w, p)
    assert np.max(np.abs(gamma - np.swapaxes(gamma, 1, 2))) < 1e-12
    g_jet = w.chart.metric_jet(p, 1)
    g = np.asarray(g_jet.value)
    dg = np.asarray(g_jet.grad().value)  # dg[j, l, i] = d_i g_jl
    nabla_g = np.einsum("jli->ijl", dg) - np.einsum("mij,ml->ijl", gamma, g) - np.einsum("mil,jm->ijl", gamma, g)
    theta = w.theta_at(p)
    assert np.allclose(nabla_g, -2 * np.einsum("i,jl->ijl", theta, g), atol=1e-10)


def test_gauge_change_is_closed_shift():
    base = ConformalChart.euclidean(3)
    f = "0.3*x1*x2 + 0.1*x3^2"
    other = base.rescaled(f)
    lc_other = christoffel(WeylStructure(other), [0.2, -0.1, 0.4])
    df = [parse(f).diff(i) for i in range(3)]
    shifted = christoffel(WeylStructure(base, df), [0.2, -0.1, 0.4])
    assert np.allclose(lc_other, shifted, atol=1e-13)
    # the same connection re-expressed on the rescaled gauge has theta = 0
    moved = WeylStructure(base, df).on_chart(other)
    assert np.allclose(moved.theta_at([0.2, -0.1, 0.4]), 0, atol=1e-14)


def test_singular_metric_rejected_at_point():
    chart = ConformalChart([["x1^2", "0"], ["0", "1"]])
    with pytest.raises(ConformalError):
        christoffel(WeylStructure(chart), [0.0, 0.0])


# -- curvature ----------------------------------------------------------------------


def test_flat_curvature_vanishes():
    pkg = curvature_package(WeylStructure(ConformalChart.euclidean(4)), [0.1, 0.2, 0.3, 0.4])
    for arr in (pkg.R, pkg.F, pkg.ric, pkg.h, pkg.W):
        assert np.max(np.abs(arr)) == 0


@pytest.mark.parametrize("m", [3, 4, 5])
def test_unit_sphere_schouten_is_half_metric(m):
    p = [0.2] * m
    pkg = curvature_package(WeylStructure(ConformalChart.round_sphere(m)), p)
    assert np.allclose(pkg.h, 0.5 * pkg.g, atol=1e-12)
    assert pkg.sigma == pytest.approx(m / 2)
    assert np.max(np.abs(pkg.W)) < 1e-12


def test_sphere_of_radius_two_has_curvature_quarter():
    pkg = curvature_package(WeylStructure(ConformalChart.round_sphere(3, radius=2.0)), [0.3, 0.1, 0.0])
    assert np.allclose(pkg.h, 0.125 * pkg.g, atol=1e-12)


@given(seeds, pt3)
@settings(max_examples=15)
def test_weyl_tensor_vanishes_in_dimension_three(seed, p):
    w, _ = _random_weyl(seed)
    assert np.max(np.abs(curvature_package(w, p).W)) < 1e-9


@given(seeds)
@settings(max_examples=10)
def test_curvature_identities_in_dimension_four(seed):
    w, rng = _random_weyl(seed, m=4)
    p = random_points(rng, 4, 1, radius=0.2)[0]
    pkg = curvature_package(w, p)
    m = 4
    assert T.bianchi_residual(pkg.R) < 1e-9
    assert pkg.reassembly_residual() < 1e-12
    assert np.allclose(T.skew(pkg.ric), -(m / 2) * pkg.F, atol=1e-10)
    # Weyl tensor is trace free
    assert np.max(np.abs(T.ricci_contraction(pkg.W))) < 1e-10
    assert pkg.sigma == pytest.approx(pkg.scal / (2 * (m - 1)))


def test_faraday_is_exterior_derivative_of_theta_on_flat_chart():
    w = WeylStructure(ConformalChart.euclidean(3), ["x2", "0", "x1*x3"])
    pkg = curvature_package(w, [0.1, 0.2, 0.3])
    d = exterior_derivative(w.theta_jet([0.1, 0.2, 0.3], 1))
    assert np.allclose(pkg.F, d)


def test_dimension_one_curvature_rejected():
    with pytest.raises(ConformalError):
        curvature_package(WeylStructure(ConformalChart.euclidean(1)), [0.0])


def test_surface_schouten_needs_mobius_structure():
    w = WeylStructure(ConformalChart.round_sphere(2))
    with pytest.raises(ConformalError):
        schouten(w, [0.1, 0.2])
    h = schouten(w, [0.1, 0.2], mobius=MobiusStructure(w.chart))
    assert np.allclose(T.sym(h), 0.5 * w.chart.metric_at([0.1, 0.2]), atol=1e-12)


# -- transformation rules -------------------------------------------------------------


def test_transform_check_zero_shift_is_exact():
    w, _ = _random_weyl(3)
    rep = transform_check(w, ["0", "0", "0"], [0.1, 0.0, -0.1])
    assert rep.max() == 0


def test_schouten_change_for_exact_shift_on_flat_chart():
    w = WeylStructure(ConformalChart.euclidean(3))
    theta = ["x2", "x1", "0"]  # d(x1 x2)
    p = np.array([0.4, -0.7, 0.2])
    h = schouten(w.shifted(theta), p)
    th = np.array([p[1], p[0], 0.0])
    nabla_theta = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]], float)
    expected = -nabla_theta + np.outer(th, th) - 0.5 * (th @ th) * np.eye(3)
    assert np.allclose(h, expected, atol=1e-13)


@given(seeds)
@settings(max_examples=10)
def test_transform_rules_on_random_data(seed):
    w, rng = _random_weyl(seed)
    theta = [random_polynomial(rng, 3, terms=2, scale=0.5, max_degree=1, constant=True) for _ in range(3)]
    for p in random_points(rng, 3, 2, radius=0.3):
        assert transform_check(w, theta, p).max() < 1e-8


def test_transform_check_in_dimension_four_includes_weyl():
    w, rng = _random_weyl(11, m=4)
    rep = transform_check(w, random_theta(rng, 4), [0.1, -0.1, 0.2, 0.0])
    assert rep.weyl is not None and rep.max() < 1e-8


# -- Hessians and operators -----------------------------------------------------------


@pytest.mark.parametrize("k", [0, 1, -0.5, 2])
def test_flat_hessian_of_square(k):
    w = WeylStructure(ConformalChart.euclidean(3))
    assert np.allclose(hessian_weighted(w, "x1^2", [0.5, 0.2, 0.1], k), np.diag([2.0, 0, 0]))


def test_weight_zero_hessian_is_function_hessian():
    chart = ConformalChart.round_sphere(2)
    w = WeylStructure(chart)
    p = [0.3, 0.4]
    hess = hessian_weighted(w, "x1*x2", p, 0)
    gamma = christoffel(w, p)
    expected = np.array([[0, 1], [1, 0]], float) - np.einsum("mij,m->ij", gamma, [p[1], p[0]])
    assert np.allclose(hess, expected)


@given(seeds, st.sampled_from([0, 1, Fraction(-1, 2), 2]))
@settings(max_examples=12)
def test_hessian_transformation_rule(seed, k):
    w, rng = _random_weyl(seed)
    theta = random_theta(rng, 3)
    l = random_density(rng, 3)
    p = random_points(rng, 3, 1)[0]
    assert hess_transform_residual(w, theta, l, p, k) < 1e-8


def test_mobius_canonical_on_flat_chart():
    m = 3
    w = WeylStructure(ConformalChart.euclidean(m))
    assert np.max(np.abs(mobius_canonical(w, "1", [0.1, 0.2, 0.3]))) == 0
    out = mobius_canonical(w, "1 + x1^2", [0.1, 0.2, 0.3])
    assert np.allclose(out, 2 * np.diag([1.0, 0, 0]) - (2 / m) * np.eye(m))


def test_mobius_canonical_rejects_surfaces():
    with pytest.raises(ConformalError):
        mobius_canonical(WeylStructure(ConformalChart.euclidean(2)), "1", [0.0, 0.0])


@given(seeds)
@settings(max_examples=10)
def test_mobius_canonical_is_weyl_independent(seed):
    w, rng = _random_weyl(seed, theta_scale=0.0)
    l = random_density(rng, 3)
    p = random_points(rng, 3, 1)[0]
    a = mobius_canonical(w, l, p)
    assert np.allclose(mobius_canonical(w.shifted(["0", "1", "0"]), l, p), a, atol=1e-8)
    assert np.allclose(mobius_canonical(w.shifted(random_theta(rng, 3)), l, p), a, atol=1e-8)


def test_mobius_canonical_gauge_covariance():
    base = ConformalChart.round_sphere(3)
    f = "0.2*x1 - 0.3*x2*x3"
    other = base.rescaled(f)
    l = "1 + x1*x2 + x3^2"
    p = [0.2, 0.1, -0.3]
    a = mobius_canonical(WeylStructure(base, ["x2", "0", "0.5"]), l, p)
    b = mobius_canonical(WeylStructure(other), density_in_gauge(l, base, other, 1), p)
    assert np.allclose(b, np.exp(parse(f).evaluate(p)) * a, atol=1e-10)


def test_laplace_canonical_on_flat_and_sphere():
    w = WeylStructure(ConformalChart.euclidean(3))
    assert laplace_canonical(w, "2", [0.1, 0.2, 0.3]) == 0
    for m in (2, 3, 4):
        ws = WeylStructure(ConformalChart.round_sphere(m))
        val = laplace_canonical(ws, "1", [0.0] * m)
        assert val == pytest.approx((1 - m / 2) * (m / 2), abs=1e-12)


def test_laplace_rejects_wrong_weight():
    w = WeylStructure(ConformalChart.euclidean(4))
    assert laplace_weight(4) == -1
    with pytest.raises(ConformalError):
        laplace_canonical(w, "1", [0.0] * 4, k=Fraction(1, 2))
    laplace_canonical(w, "1", [0.0] * 4, k=-1)


@given(seeds)
@settings(max_examples=10)
def test_laplace_canonical_is_weyl_and_gauge_invariant(seed):
    w, rng = _random_weyl(seed, theta_scale=0.0)
    l = random_density(rng, 3)
    p = random_points(rng, 3, 1)[0]
    a = laplace_canonical(w, l, p)
    assert laplace_canonical(w.shifted(random_theta(rng, 3)), l, p) == pytest.approx(a, abs=1e-8)
    f = random_polynomial(rng, 3, terms=3, scale=0.3)
    other = w.chart.rescaled(f)
    k = laplace_weight(3)
    b = laplace_canonical(WeylStructure(other), density_in_gauge(l, w.chart, other, k), p)
    assert b == pytest.approx(np.exp(float(k - 2) * parse(f).evaluate(p)) * a, abs=1e-8)


# -- surface and curve structures ------------------------------------------------------


def test_flat_mobius_structure_zero_shift():
    mob = MobiusStructure(ConformalChart.euclidean(2))
    assert np.array_equal(mobius_h0_at(mob, WeylStructure(mob.chart), [0.3, 0.1]), np.zeros((2, 2)))


def test_mobius_h0_shift_by_closed_form():
    chart = ConformalChart.euclidean(2)
    mob = MobiusStructure(chart)
    theta = ["x1^2", "x1"]
    p = [0.5, 0.2]
    th = np.array([0.25, 0.5])
    nabla_theta = np.array([[1.0, 1.0], [0.0, 0.0]])  # [i, j] = d_i theta_j
    expected = T.sym0(-nabla_theta + np.outer(th, th))
    assert np.allclose(mobius_h0_at(mob, WeylStructure(chart, theta), p), expected)


@given(seeds)
@settings(max_examples=10)
def test_mobius_h0_changes_compose(seed):
    rng = np.random.default_rng(seed)
    chart = ConformalChart.round_sphere(2)
    mob = MobiusStructure(chart, [["x1*x2", "0.3"], ["0.3", "-x1*x2"]])
    theta, eta = random_theta(rng, 2), random_theta(rng, 2)
    p = random_points(rng, 2, 1)[0]
    w = WeylStructure(chart)
    one = mobius_h0_at(mob, w.shifted(theta).shifted(eta), p)
    two = mobius_h0_at(mob, w.shifted([f"({a})+({b})" for a, b in zip(theta, eta)]), p)
    assert np.allclose(one, two, atol=1e-12)
    assert abs(T.trace_g(one, chart.metric_at(p))) < 1e-12


def test_mobius_h0_is_trace_free_projection():
    chart = ConformalChart.euclidean(2)
    mob = MobiusStructure(chart, [["1", "0"], ["0", "1"]])
    assert np.allclose(mob.h0_at(WeylStructure(chart), [0.0, 0.0]), 0)


def test_mobius_structure_requires_surface():
    with pytest.raises(ConformalError):
        MobiusStructure(ConformalChart.euclidean(3))
    mob = MobiusStructure(ConformalChart.euclidean(2))
    with pytest.raises(ConformalError):
        mob.h0_at(WeylStructure(ConformalChart.euclidean(3)), [0.0, 0.0, 0.0])


def test_mobius_operator_is_weyl_independent():
    chart = ConformalChart.round_sphere(2)
    mob = MobiusStructure(chart, [["0.2*x1", "x2"], ["x2", "-0.2*x1"]])
    l = "1 + x1^2*x2"
    p = [0.3, -0.2]
    a = mobius_operator(WeylStructure(chart), l, p, mob)
    b = mobius_operator(WeylStructure(chart, ["x2", "x1^2 - 0.5"]), l, p, mob)
    assert np.allclose(a, b, atol=1e-12)


def test_laplace_sigma_zero_and_shift_law():
    chart = ConformalChart.euclidean(1)
    lap = LaplaceStructure(chart)
    assert laplace_sigma_at(lap, WeylStructure(chart), [0.4]) == 0
    # n = 1: sigma changes by delta(theta) + theta^2 / 2, with delta = -theta'
    val = laplace_sigma_at(lap, WeylStructure(chart, ["x1^2"]), [0.5])
    assert val == pytest.approx(-1.0 + 0.0625 / 2)


def test_laplace_sigma_changes_compose():
    chart = ConformalChart([["1 + x1^2"]])
    lap = LaplaceStructure(chart, "0.3*x1")
    w = WeylStructure(chart)
    one = laplace_sigma_at(lap, w.shifted(["x1"]).shifted(["exp(x1)"]), [0.2])
    two = laplace_sigma_at(lap, w.shifted(["x1 + exp(x1)"]), [0.2])
    assert one == pytest.approx(two, abs=1e-13)


def test_laplace_operator_is_weyl_independent():
    chart = ConformalChart([["exp(x1)"]])
    lap = LaplaceStructure(chart, "0.1*x1^2")
    l = "2 + sin(x1)"
    a = laplace_operator(WeylStructure(chart), l, [0.3], lap)
    b = laplace_operator(WeylStructure(chart, ["x1^3 - 1"]), l, [0.3], lap)
    assert a == pytest.approx(b, abs=1e-12)


def test_laplace_structure_requires_curve():
    with pytest.raises(ConformalError):
        LaplaceStructure(ConformalChart.euclidean(2))


def test_chart_validation():
    with pytest.raises(ValueError):
        ConformalChart([["1", "x1"], ["x2", "1"]])
    with pytest.raises(ValueError):
        ConformalChart([["1", "0"], ["0", "x3"]])
    with pytest.raises(ValueError):
        WeylStructure(ConformalChart.euclidean(2), ["0"])
