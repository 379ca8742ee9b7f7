import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helmabc.exceptions import GeometryError
from helmabc.geometry import (
    Circle,
    Disc,
    PmlLayer,
    Polygon,
    Scene,
    Square,
    _winding_contains,
    butterfly_radius,
    contains,
    distance_to_boundary,
    dumps_scene,
    loads_scene,
    outward_normal,
    preset_butterfly,
    preset_trapping_polygon,
    scene_from_dict,
    scene_to_dict,
)


def winding_number(vertices, p):
    """Brute-force winding number of a closed polygon around p."""
    v = np.asarray(vertices, float) - p
    ang = np.arctan2(v[:, 1], v[:, 0])
    d = np.diff(np.r_[ang, ang[:1]])
    d = (d + np.pi) % (2 * np.pi) - np.pi
    return round(d.sum() / (2 * np.pi))


def segments_intersect(p1, p2, p3, p4):
    def orient(a, b, c):
        return np.sign((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))

    return orient(p1, p2, p3) * orient(p1, p2, p4) < 0 and orient(p3, p4, p1) * orient(p3, p4, p2) < 0


# --- presets ----------------------------------------------------------------
def test_butterfly_values():
    assert butterfly_radius(0.0) == pytest.approx(0.87, abs=1e-15)
    assert butterfly_radius(math.pi / 2) == pytest.approx(0.13, abs=1e-15)
    assert butterfly_radius(0.0) == pytest.approx(butterfly_radius(2 * math.pi), abs=1e-15)


def test_butterfly_table_and_size():
    b = preset_butterfly()
    assert len(b.table) >= 720
    assert b.table[0] == pytest.approx(0.87)
    # the curve exceeds the unit disc; it is used unscaled and must sit inside R = 2
    assert 1.0 < b.max_radius < 1.3
    Scene(b, Circle(2.0))


def test_butterfly_normal_orthogonal_to_fd_tangent():
    b = preset_butterfly()
    for s in (0.0, 0.4, 1.3, 2.9, 4.4):
        n = outward_normal(b, s)
        h = 1e-6
        t = (b.point(s + h) - b.point(s - h)) / (2 * h)
        assert np.linalg.norm(n) == pytest.approx(1.0, abs=1e-14)
        assert abs(n @ t) / np.linalg.norm(t) < 1e-8
        assert n @ b.point(s) > 0


def test_trapping_polygon():
    poly = preset_trapping_polygon()
    v = poly.array
    assert len(v) == 12
    assert tuple(v[0]) == (0.5, 0.125)
    assert tuple(v[-1]) == (0.25, 0.125)
    assert poly.is_simple()
    n = len(v)
    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            assert not segments_intersect(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n])
    assert poly.max_radius <= 1.0 + 1e-12


# --- normals ----------------------------------------------------------------
def test_disc_normal():
    np.testing.assert_allclose(outward_normal(Disc((0, 0), 1), 0.0), [1.0, 0.0])


def test_square_edge_midpoint_normal():
    sq = Square(4.0)
    np.testing.assert_allclose(sq.normal_at(np.array([4.0, 0.0])), [1.0, 0.0])
    np.testing.assert_allclose(sq.normal_at(np.array([0.0, -4.0])), [0.0, -1.0])


def test_square_corner_normal_raises():
    with pytest.raises(GeometryError, match="corner"):
        Square(1.0).normal_at(np.array([1.0, 1.0]))


def test_rounded_square_corner_normal():
    sq = Square(1.0, 0.25)
    p = np.array([0.75, 0.75]) + 0.25 * np.array([1, 1]) / math.sqrt(2)
    np.testing.assert_allclose(sq.normal_at(p), np.array([1, 1]) / math.sqrt(2), atol=1e-12)
    assert sq.curvature_at(p[None])[0] == pytest.approx(4.0)


def test_polygon_vertex_normal_names_vertex():
    poly = preset_trapping_polygon()
    s_vertex = float(poly.edge_lengths()[0])
    with pytest.raises(GeometryError, match="vertex 1"):
        poly.normal(s_vertex)


def test_polygon_edge_normal_outward():
    poly = preset_trapping_polygon()
    L = poly.perimeter()
    for s in np.linspace(0.01, L - 0.01, 37):
        try:
            n = poly.normal(s)
        except GeometryError:
            continue
        p = poly.point(s)
        assert not contains(poly, p + 1e-6 * n)
        assert contains(poly, p - 1e-6 * n)


# --- containment and distance ------------------------------------------------
def test_disc_contains_and_distance():
    d = Disc((0, 0), 1)
    assert contains(d, [0.0, 0.0])
    assert distance_to_boundary(d, [2.0, 0.0]) == pytest.approx(1.0)
    assert distance_to_boundary(d, [0.0, 0.0]) == pytest.approx(-1.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(-1.2, 1.2), st.floats(-1.2, 1.2))
def test_polygon_contains_matches_winding(x, y):
    poly = preset_trapping_polygon()
    p = np.array([x, y])
    if abs(distance_to_boundary(poly, p)) < 1e-9:
        return
    assert contains(poly, p) == (winding_number(poly.array, p) != 0)
    assert bool(_winding_contains(poly.array, p[None])[0]) == contains(poly, p)


@settings(max_examples=100, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.0, 0.5))
def test_square_signed_distance_sign(x, y, rc):
    sq = Square(2.0, rc)
    p = np.array([x, y])
    d = distance_to_boundary(sq, p)
    if abs(d) < 1e-9:
        return
    inside_box = abs(x) < 2 and abs(y) < 2
    if d < 0:
        assert inside_box
    # projection lands on the boundary
    q = sq.project(p[None])[0]
    assert abs(sq.signed_distance(q[None])[0]) < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 2 * math.pi))
def test_butterfly_projection_on_curve(theta):
    b = preset_butterfly()
    x = 1.7 * np.array([math.cos(theta), math.sin(theta)])
    q = b.project(x[None])[0]
    assert np.hypot(*q) == pytest.approx(float(butterfly_radius(theta)), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 2 * math.pi))
def test_star_shaped_normals_point_outward(theta):
    for shape in (Disc((0, 0), 1), preset_butterfly()):
        n = outward_normal(shape, theta)
        assert n @ (shape.point(theta) - shape.interior_point()) > 0


# --- scenes -----------------------------------------------------------------
def test_scene_requires_containment():
    with pytest.raises(GeometryError, match="contain"):
        Scene(Disc((0, 0), 1), Circle(1.0))
    with pytest.raises(GeometryError, match="PML"):
        Scene(Disc((0, 0), 1), Circle(2.0), PmlLayer(1.5, 0.5))


def test_scene_presets():
    s = Scene.square(2.0)
    assert s.truncation.half_side == 2.0
    assert s.pml.inner_radius == pytest.approx(3.0)
    assert s.outer_radius == pytest.approx(3.5)
    assert Scene.ball(4.0).gap == pytest.approx(3.0)


@pytest.mark.parametrize(
    "scene",
    [
        Scene.ball(2.0),
        Scene.square(2.0),
        Scene(preset_butterfly(), Circle(2.0), PmlLayer(2.0, 0.5)),
        Scene(preset_trapping_polygon(), Circle(2.0)),
        Scene(Disc((0.1, -0.2), 0.5), Square(2.0, 0.3)),
    ],
)
def test_scene_serialisation_round_trip(scene):
    text = dumps_scene(scene)
    back = loads_scene(text)
    assert scene_to_dict(back) == scene_to_dict(scene)


def test_scene_rejects_unknown_keys():
    d = scene_to_dict(Scene.ball(2.0))
    d["colour"] = "red"
    with pytest.raises(GeometryError, match="unknown scene keys"):
        scene_from_dict(d)


def test_polygon_orientation_normalised():
    sq = [(0.5, 0.5), (-0.5, 0.5), (-0.5, -0.5), (0.5, -0.5)]
    poly_ccw = Polygon(tuple(sq))
    poly_cw = Polygon(tuple(sq[::-1]))
    for poly in (poly_ccw, poly_cw):
        n = poly.normal(0.5)
        p = poly.point(0.5)
        assert not contains(poly, p + 1e-6 * n)
