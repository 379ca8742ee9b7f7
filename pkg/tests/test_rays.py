import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helmabc.exceptions import GeometryError
from helmabc.geometry import Circle, Disc, Scene, Square, preset_butterfly, preset_trapping_polygon
from helmabc.pade import compute_pade, impedance, reflection_coefficient
from helmabc.rays import (
    Ray,
    ball_hit_angles,
    direct_ray_set,
    emanating_ray,
    gamma_tr_hits,
    periodic_length,
    predicted_exponent,
    reentrant_energy,
    reflect,
    square_billiard,
    trace,
    unfold_hypercube,
)

DISC = Disc((0.0, 0.0), 1.0)
BALL2 = Scene(DISC, Circle(2.0))

unit_angles = st.floats(0, 2 * math.pi, allow_nan=False)


# --- emanating rays -----------------------------------------------------------
@pytest.mark.parametrize(
    "x,expected",
    [
        ((-1.0, 0.0), (-1.0, 0.0)),
        ((0.0, 1.0), (1.0, 0.0)),
        ((-math.sqrt(2) / 2, math.sqrt(2) / 2), (0.0, 1.0)),
    ],
)
def test_emanating_ray_examples(x, expected):
    ray = emanating_ray(DISC, x, (1.0, 0.0))
    np.testing.assert_allclose(ray.xi, expected, atol=1e-15)
    np.testing.assert_allclose(ray.x, x)


def test_emanating_ray_polygon_vertex_rejected():
    poly = preset_trapping_polygon()
    with pytest.raises(GeometryError, match="vertex"):
        emanating_ray(poly, poly.array[3], (1.0, 0.0))


# --- tracing ------------------------------------------------------------------
def test_radial_ray_normal_incidence():
    path = trace(BALL2, Ray((1.0, 0.0), (1.0, 0.0)), impedance(), max_bounces=2)
    h0, h1 = path.hits
    assert h0.boundary == "GammaTr" and h0.theta == 0.0 and h0.weight == 0.0
    np.testing.assert_allclose(h0.point, [2.0, 0.0])
    assert h1.boundary == "GammaD"
    np.testing.assert_allclose(h1.point, [1.0, 0.0], atol=1e-14)
    assert h1.path_length == pytest.approx(1.0)


def _random_path(seed, scene=BALL2, bounces=12):
    rng = np.random.default_rng(seed)
    phi = rng.uniform(0, 2 * math.pi)
    x = 1.0 * np.array([math.cos(phi), math.sin(phi)])
    ang = rng.uniform(0, 2 * math.pi)
    return trace(scene, emanating_ray(scene.obstacle, x, (math.cos(ang), math.sin(ang))), compute_pade(1, 1), bounces)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_chords_and_weights(seed):
    path = _random_path(seed)
    prev = path.start.x
    last_w = 1.0
    for h in path.hits:
        assert h.path_length == pytest.approx(np.linalg.norm(h.point - prev), rel=1e-12, abs=1e-12)
        assert 0.0 <= h.weight <= last_w
        assert 0.0 <= h.theta <= math.pi / 2
        last_w = h.weight
        prev = h.point
    assert path.length == pytest.approx(sum(h.path_length for h in path.hits))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_weight_is_product_of_reflection_coefficients(seed):
    path = _random_path(seed)
    abc = compute_pade(1, 1)
    w = 1.0
    for h in path.hits:
        if h.boundary == "GammaTr":
            w *= float(reflection_coefficient(abc, h.theta))
        assert h.weight == pytest.approx(w, rel=1e-12, abs=0)


@settings(max_examples=30, deadline=None)
@given(unit_angles, unit_angles)
def test_reflect_preserves_norm_and_tangent(a, b):
    xi = np.array([math.cos(a), math.sin(a)])
    n = np.array([math.cos(b), math.sin(b)])
    out = reflect(xi, n)
    assert abs(np.linalg.norm(out) - 1) < 1e-15
    tang = lambda v: v - np.dot(v, n) * n  # noqa: E731
    assert np.linalg.norm(tang(out) - tang(xi)) < 1e-12
    assert np.dot(out, n) == pytest.approx(-np.dot(xi, n), abs=1e-15)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_path_tangential_components_preserved(seed):
    path = _random_path(seed)
    pts = [path.start.x] + [h.point for h in path.hits]
    for i, h in enumerate(path.hits[:-1]):
        before = (pts[i + 1] - pts[i]) / np.linalg.norm(pts[i + 1] - pts[i])
        after = (pts[i + 2] - pts[i + 1]) / np.linalg.norm(pts[i + 2] - pts[i + 1])
        n = h.normal
        assert np.linalg.norm((before - before @ n * n) - (after - after @ n * n)) < 1e-10


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(["ball", "butterfly", "square"]))
def test_time_reversal(seed, kind):
    scene = {
        "ball": BALL2,
        "butterfly": Scene(preset_butterfly(), Circle(2.0)),
        "square": Scene(DISC, Square(2.0, 0.3)),
    }[kind]
    rng = np.random.default_rng(seed)
    ang = rng.uniform(0, 2 * math.pi)
    start = Ray(1.5 * np.array([math.cos(ang), math.sin(ang)]), rng.normal(size=2))
    fwd = trace(scene, start, impedance(), max_bounces=8)
    if fwd.termination != "max_bounces":
        return
    last = fwd.hits[-1]
    xi_in = reflect(fwd.final.xi, last.normal)
    back = trace(scene, Ray(last.point, -xi_in), impedance(), max_bounces=7)
    for h_back, h_fwd in zip(back.hits, fwd.hits[-2::-1]):
        assert np.linalg.norm(h_back.point - h_fwd.point) < 1e-9


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_convex_truncation_chords_inside(seed):
    path = _random_path(seed, bounces=20)
    for h0, h1 in zip(path.hits, path.hits[1:]):
        if h0.boundary == h1.boundary == "GammaTr":
            mid = 0.5 * (h0.point + h1.point)
            assert np.hypot(*mid) < 2.0


def test_tangent_ray_terminates():
    path = trace(BALL2, Ray((-1.5, 1.0), (1.0, 0.0)), impedance(), max_bounces=5)
    assert path.termination == "tangency"
    assert path.hits[-1].boundary == "GammaD" and path.hits[-1].theta == pytest.approx(math.pi / 2)


def test_max_length_termination():
    path = trace(BALL2, Ray((1.0, 0.0), (1.0, 0.0)), impedance(), max_bounces=50, max_length=2.5)
    assert path.termination == "max_length" and path.length == 2.5


# --- hit angles on a circle ------------------------------------------------------
@pytest.mark.parametrize("R", [2.0, 8.0, 32.0])
def test_ball_hit_sine_bound(R):
    theta, impact = ball_hit_angles(R, 10_000, seed=0)
    assert np.all(impact <= 1.0)
    assert np.all(np.sin(theta) <= 1.0 / R + 1e-15)
    assert np.abs(np.sin(theta) - impact / R).max() < 1e-14


@settings(max_examples=10, deadline=None)
@given(st.floats(1.5, 40.0), st.integers(0, 1000))
def test_ball_hit_sine_bound_property(R, seed):
    theta, _ = ball_hit_angles(R, 500, seed=seed)
    assert np.all(np.sin(theta) <= 1.0 / R * (1 + 1e-12))


def test_ball_hit_angles_rejects_sources_outside():
    with pytest.raises(ValueError):
        ball_hit_angles(1.0, 10)


def test_gamma_tr_hits_conserve_impact_parameter():
    # both boundaries are circles about the origin, so |x × ξ| ≤ 1 is conserved
    theta, weight = gamma_tr_hits(Scene(DISC, Circle(3.0)), impedance(), 300, seed=2)
    assert len(theta) > 300
    assert np.all(np.sin(theta) <= 1 / 3 + 1e-12)
    assert np.all((weight >= 0) & (weight <= 1))


# --- direct rays ----------------------------------------------------------------
def test_direct_rays_disc_all_direct():
    res = direct_ray_set(DISC, Circle(2.0), (1.0, 0.0), samples=200)
    assert res.fraction == 1.0 and res.extremal_direct


def test_direct_rays_butterfly_extremal():
    res = direct_ray_set(preset_butterfly(), Circle(2.0), (1.0, 0.0), samples=200)
    assert res.extremal_direct
    assert res.extremal_point[0] == pytest.approx(np.max(res.points[:, 0]), abs=0.02)


def test_direct_rays_trapping_polygon_partial():
    res = direct_ray_set(preset_trapping_polygon(), Circle(2.0), (1.0, 0.0), samples=400)
    assert 0.0 < res.fraction < 1.0
    assert res.extremal_direct


@settings(max_examples=10, deadline=None)
@given(unit_angles)
def test_extremal_point_always_direct(angle):
    a = (math.cos(angle), math.sin(angle))
    for ob in (preset_butterfly(), preset_trapping_polygon()):
        assert direct_ray_set(ob, Circle(2.0), a, samples=16).extremal_direct


# --- square billiard --------------------------------------------------------------
def test_unfold_matches_direct_simulation():
    rng = np.random.default_rng(7)
    R = 4.0
    ray = Ray(rng.uniform(-R / 2, R / 2, 2), rng.normal(size=2))
    times = np.sort(rng.uniform(0, 200 * R, 1000))
    unf = unfold_hypercube(R, ray, times)
    pos, dirs = square_billiard(R, ray, times)
    assert np.abs(unf.positions - pos).max() < 1e-9
    assert np.abs(unf.directions - dirs).max() < 1e-12
    assert np.all(np.abs(unf.positions) <= R / 2 + 1e-12)
    assert not unf.degenerate


@pytest.mark.parametrize("p", [(1, 0), (1, 1), (2, 1), (3, -2), (0, 5)])
def test_rational_direction_periodic(p):
    R = 3.0
    ray = Ray((0.31, -0.47), p)
    T = periodic_length(R, p)
    unf = unfold_hypercube(R, ray, [T])
    np.testing.assert_allclose(unf.positions[0], ray.x, atol=1e-9)
    np.testing.assert_allclose(unf.directions[0], ray.xi, atol=1e-12)


def test_axis_direction_period_2R():
    R = 5.0
    assert periodic_length(R, (1, 0)) == 2 * R
    ray = Ray((0.0, 0.0), (1.0, 0.0))
    pos, _ = square_billiard(R, ray, [R / 2, R, 2 * R])
    np.testing.assert_allclose(pos, [[2.5, 0.0], [0.0, 0.0], [0.0, 0.0]], atol=1e-12)


def test_corner_hit_flagged():
    unf = unfold_hypercube(2.0, Ray((0.0, 0.0), (1.0, 1.0)), [5.0])
    assert unf.degenerate


def test_unfold_rejects_start_outside():
    with pytest.raises(ValueError):
        unfold_hypercube(2.0, Ray((3.0, 0.0), (1.0, 0.0)), [1.0])


# --- exponents and reflected energy ---------------------------------------------------
@pytest.mark.parametrize(
    "trunc,pair,expected",
    [(Circle(4.0), (0, 0), 2.0), (Circle(4.0), (1, 1), 6.0), (Square(4.0), (0, 0), 0.0)],
)
def test_predicted_exponent(trunc, pair, expected):
    assert predicted_exponent(trunc, compute_pade(*pair)) == expected


def test_reentrant_zero_rays():
    est = reentrant_energy(BALL2, impedance(), 0)
    assert est.value == 0.0 and est.label == "HEURISTIC"


def test_reentrant_circle_decay():
    Rs = [4, 8, 16, 32]
    vals = [reentrant_energy(Scene(DISC, Circle(R)), impedance(), 1000, seed=1).value for R in Rs]
    assert all(v > 0 for v in vals)
    assert all(a > b for a, b in zip(vals, vals[1:]))
    slope = np.polyfit(np.log(Rs), np.log(vals), 1)[0]
    assert slope == pytest.approx(-4.0, abs=0.3)


def test_reentrant_square_bounded_below():
    vals = [reentrant_energy(Scene(DISC, Square(R)), impedance(), 1000, seed=1).value for R in (4, 8, 16)]
    assert min(vals) > 0 and max(vals) / min(vals) < 4


def test_reentrant_ball_region():
    whole = reentrant_energy(BALL2, impedance(), 300, seed=3).value
    near = reentrant_energy(BALL2, impedance(), 300, region=("ball", (0, 0), 1.5), seed=3).value
    assert 0 < near <= whole
