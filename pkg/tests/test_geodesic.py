import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from confgeom.conformal import ConformalChart, ConformalError, LaplaceStructure, MobiusStructure
from confgeom.geodesic import (
    CurveState,
    GaugeGeometry,
    GeodesicError,
    accel_equivalence_check,
    adapted_theta_along_curve,
    circle_fit_deviation,
    conformal_acceleration,
    convergence_factor,
    integrate_conformal_geodesic,
    max_trajectory_distance,
    split_acceleration,
    state_from_coordinates,
    weyl_acceleration,
)

seeds = st.integers(min_value=0, max_value=2**31 - 1)


def _circle_coords(t):
    c, s = np.cos(t), np.sin(t)
    return [c, s], [-s, c], [-c, -s], [s, -c]


def _cubic_curve(rng, m):
    """Random cubic ``x(t)`` with its first three derivatives at ``t = 0``."""
    coeffs = rng.uniform(-0.5, 0.5, size=(4, m))
    coeffs[1] += np.eye(m)[0]  # keep the velocity away from zero
    return coeffs[0], coeffs[1], 2 * coeffs[2], 6 * coeffs[3]


# -- acceleration ---------------------------------------------------------------------


def test_straight_line_has_zero_acceleration():
    geo = GaugeGeometry(ConformalChart.euclidean(3))
    st_ = CurveState([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0])
    assert np.array_equal(conformal_acceleration(geo, st_, np.zeros(3)), np.zeros(3))


@pytest.mark.parametrize("t", [0.0, 0.7, 2.1])
def test_plane_circle_acceleration_is_gauge_independent(t):
    base = ConformalChart.euclidean(2)
    mob = MobiusStructure(base)
    other = base.rescaled("0.3*sin(x1)")
    x, xd, xdd, xddd = _circle_coords(t)
    out = []
    for chart in (base, other):
        geo = GaugeGeometry(chart, mobius=mob)
        state, w3 = state_from_coordinates(geo, x, xd, xdd, xddd)
        a = conformal_acceleration(geo, state, w3)
        tan, nor = split_acceleration(geo, state, a)
        out.append(a)
        # the circle is an unparametrized conformal geodesic
        assert np.max(np.abs(nor)) < 1e-12
    assert np.allclose(out[0], out[1], atol=1e-7)
    # arc length is not a conformal parametrization: the tangential part survives
    assert np.allclose(out[0], 0.5 * np.array(xd), atol=1e-12)


@pytest.mark.parametrize("x1", [0.0, 0.4, -1.3])
def test_unit_sphere_great_circle_acceleration(x1):
    geo = GaugeGeometry(ConformalChart.round_sphere(3))
    # the x1 axis is a great circle; unit speed means |x'| = (1 + x1^2) / 2
    s = 1 + x1 * x1
    x, xd = [x1, 0, 0], [s / 2, 0, 0]
    xdd = [x1 * s / 2, 0, 0]  # metric geodesic: d/dt of the unit-speed coordinate velocity
    xddd = [(s / 2) * (s / 2 + x1 * x1), 0, 0]
    state, w3 = state_from_coordinates(geo, x, xd, xdd, xddd)
    assert np.allclose(state.w, 0, atol=1e-13)
    assert np.allclose(w3, 0, atol=1e-12)
    a = conformal_acceleration(geo, state, w3)
    tan, nor = split_acceleration(geo, state, a)
    assert np.allclose(a, 0.5 * state.v, atol=1e-12)
    assert np.max(np.abs(nor)) < 1e-12


def test_null_velocity_rejected():
    geo = GaugeGeometry(ConformalChart.euclidean(3))
    with pytest.raises(GeodesicError):
        adapted_theta_along_curve(geo, CurveState(np.zeros(3), np.zeros(3), np.ones(3)))


def test_low_dimensions_require_structures():
    with pytest.raises(ConformalError):
        GaugeGeometry(ConformalChart.euclidean(2))
    with pytest.raises(ConformalError):
        GaugeGeometry(ConformalChart.euclidean(1))
    chart = ConformalChart.euclidean(1)
    GaugeGeometry(chart, laplace=LaplaceStructure(chart))


# -- adapted Weyl structures ---------------------------------------------------------------


def test_adapted_theta_for_unit_speed_curve_is_acceleration():
    geo = GaugeGeometry(ConformalChart.euclidean(3))
    x, xd, xdd, _ = _circle_coords(0.4)
    state = CurveState(x + [0.0], xd + [0.0], xdd + [0.0])
    assert np.allclose(adapted_theta_along_curve(geo, state), state.w)


def test_adapted_theta_for_affine_line_is_zero():
    geo = GaugeGeometry(ConformalChart.euclidean(3))
    state = CurveState([1.0, 2.0, 3.0], [0.5, -1.0, 2.0], [0.0, 0.0, 0.0])
    assert np.array_equal(adapted_theta_along_curve(geo, state), np.zeros(3))


@given(seeds)
def test_adapted_theta_makes_curve_geodesic(seed):
    rng = np.random.default_rng(seed)
    geo = GaugeGeometry(ConformalChart.euclidean(3))
    x, xd, xdd, _ = _cubic_curve(rng, 3)
    state = state_from_coordinates(geo, x, xd, xdd)
    theta = adapted_theta_along_curve(geo, state)
    assert np.max(np.abs(weyl_acceleration(geo, state, theta))) < 1e-9


@given(seeds)
@settings(max_examples=10)
def test_adapted_theta_on_sphere(seed):
    rng = np.random.default_rng(seed)
    geo = GaugeGeometry(ConformalChart.round_sphere(3))
    x, xd, xdd, _ = _cubic_curve(rng, 3)
    state = state_from_coordinates(geo, x, xd, xdd)
    theta = adapted_theta_along_curve(geo, state)
    assert np.max(np.abs(weyl_acceleration(geo, state, theta))) < 1e-9


def test_acceleration_equivalence_on_line_and_circle():
    geo = GaugeGeometry(ConformalChart.euclidean(3))
    line = CurveState([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0])
    assert accel_equivalence_check(geo, line, np.zeros(3)) < 1e-12
    x, xd, xdd, xddd = _circle_coords(1.0)
    state, w3 = state_from_coordinates(geo, x + [0.0], xd + [0.0], xdd + [0.0], xddd + [0.0])
    assert accel_equivalence_check(geo, state, w3) < 1e-7


@given(seeds)
@settings(max_examples=8)
def test_acceleration_equivalence_on_sphere_curves(seed):
    rng = np.random.default_rng(seed)
    geo = GaugeGeometry(ConformalChart.round_sphere(3))
    state, w3 = state_from_coordinates(geo, *_cubic_curve(rng, 3))
    assert accel_equivalence_check(geo, state, w3) < 1e-6


def test_acceleration_equivalence_on_mobius_surface():
    chart = ConformalChart.round_sphere(2)
    geo = GaugeGeometry(chart, mobius=MobiusStructure(chart, [["0.1*x1", "x2"], ["x2", "-0.1*x1"]]))
    state, w3 = state_from_coordinates(geo, [0.2, 0.1], [1.0, 0.3], [0.2, -0.5], [0.1, 0.4])
    assert accel_equivalence_check(geo, state, w3) < 1e-6


# -- integration ----------------------------------------------------------------------------


def test_integrated_line_stays_straight():
    geo = GaugeGeometry(ConformalChart.euclidean(3))
    tr = integrate_conformal_geodesic(geo, CurveState([0, 0, 0], [1, 0, 0], [0, 0, 0]), (0, 1), 0.01)
    assert np.allclose(tr.x[:, 1:], 0)
    assert np.allclose(tr.x[:, 0], tr.t, atol=1e-12)
    assert tr.max_residual < 1e-9


@given(seeds)
@settings(max_examples=8)
def test_flat_space_conformal_geodesics_are_circles(seed):
    rng = np.random.default_rng(seed)
    geo = GaugeGeometry(ConformalChart.euclidean(3))
    init = CurveState(rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3) + [1.5, 0, 0], rng.uniform(-1, 1, 3))
    tr = integrate_conformal_geodesic(geo, init, (0, 1), 0.005)
    assert circle_fit_deviation(tr.x) < 1e-5
    assert tr.max_residual < 1e-5


def test_sphere_geodesic_stays_on_great_circle():
    geo = GaugeGeometry(ConformalChart.round_sphere(3))
    init = CurveState([0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [0.2, 0.0, 0.0])
    tr = integrate_conformal_geodesic(geo, init, (0, 1), 0.01)
    assert np.max(np.abs(tr.x[:, 1:])) < 1e-12
    assert tr.max_residual < 1e-5


def test_sphere_geodesic_off_axis_stays_in_plane():
    geo = GaugeGeometry(ConformalChart.round_sphere(3))
    # great circles through the origin of the chart are coordinate lines; this
    # one lies in the x1-x2 plane
    init = CurveState([0.0, 0.0, 0.0], [0.3, 0.4, 0.0], [0.1, -0.2, 0.0])
    tr = integrate_conformal_geodesic(geo, init, (0, 1), 0.01)
    assert np.max(np.abs(tr.x[:, 2])) < 1e-12


def test_trajectories_agree_across_gauges():
    base = ConformalChart.euclidean(3)
    other = base.rescaled("0.2*x1*x2 - 0.1*x3")
    x, xd, xdd = [0.1, 0.0, 0.2], [1.0, 0.2, 0.0], [0.0, 0.5, -0.3]
    traces = []
    for chart in (base, other):
        geo = GaugeGeometry(chart)
        traces.append(integrate_conformal_geodesic(geo, state_from_coordinates(geo, x, xd, xdd), (0, 1), 0.005))
    assert max_trajectory_distance(*traces) < 1e-5


def test_rk4_convergence_order():
    geo = GaugeGeometry(ConformalChart.round_sphere(3))
    init = CurveState([0.1, 0.0, 0.2], [0.5, 0.3, 0.0], [0.0, 0.4, 0.3])
    assert convergence_factor(geo, init, (0, 1), 0.1) >= 8


def test_invalid_spans_rejected():
    geo = GaugeGeometry(ConformalChart.euclidean(3))
    init = CurveState([0, 0, 0], [1, 0, 0], [0, 0, 0])
    with pytest.raises(ValueError):
        integrate_conformal_geodesic(geo, init, (0, 1), -0.1)
    with pytest.raises(ValueError):
        integrate_conformal_geodesic(geo, init, (0, 1), 0.3)
    with pytest.raises(GeodesicError):
        integrate_conformal_geodesic(geo, CurveState([0, 0, 0], [0, 0, 0], [1, 0, 0]), (0, 1), 0.1)


def test_leaving_the_chart_is_reported():
    chart = ConformalChart.conformally_flat(3, "1/(1 - x1)")
    geo = GaugeGeometry(chart)
    with pytest.raises(GeodesicError):
        integrate_conformal_geodesic(geo, CurveState([0, 0, 0], [2, 0, 0], [0, 0, 0]), (0, 1), 0.01)


def test_trace_csv_columns(tmp_path):
    geo = GaugeGeometry(ConformalChart.euclidean(3))
    tr = integrate_conformal_geodesic(geo, CurveState([0, 0, 0], [1, 0, 0], [0, 1, 0]), (0, 0.1), 0.01)
    path = tmp_path / "trace.csv"
    tr.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "x1", "x2", "x3", "v1", "v2", "v3", "w1", "w2", "w3", "residual_norm"]
    assert len(rows) == len(tr.t) + 1
    assert float(rows[-1][0]) == pytest.approx(0.1)
