"""Obstacles, truncation boundaries and scenes.

Shapes are small immutable value types.  Every closed curve can be sampled
by arclength (for meshing), projected onto (for curved P2 edges), and
queried for outward normals and signed distance.  Sign convention for
``distance_to_boundary``: negative inside the shape, positive outside.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from helmabc.exceptions import GeometryError

__all__ = [
    "Disc",
    "PolarCurve",
    "Polygon",
    "Circle",
    "Square",
    "PmlLayer",
    "Scene",
    "preset_butterfly",
    "preset_trapping_polygon",
    "butterfly_radius",
    "outward_normal",
    "contains",
    "distance_to_boundary",
    "scene_to_dict",
    "scene_from_dict",
    "dumps_scene",
    "loads_scene",
]


def _winding_contains(vertices: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Even-odd crossing test for a closed polyline; vectorised over points."""
    x, y = pts[:, 0][:, None], pts[:, 1][:, None]
    x0, y0 = vertices[:, 0][None, :], vertices[:, 1][None, :]
    x1 = np.roll(vertices[:, 0], -1)[None, :]
    y1 = np.roll(vertices[:, 1], -1)[None, :]
    cond = (y0 > y) != (y1 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
    crossings = cond & (x < xint)
    return (np.count_nonzero(crossings, axis=1) % 2) == 1


def _segment_distance(vertices: np.ndarray, pts: np.ndarray) -> np.ndarray:
    a = vertices[None, :, :]
    b = np.roll(vertices, -1, axis=0)[None, :, :]
    p = pts[:, None, :]
    ab = b - a
    tt = np.clip(np.sum((p - a) * ab, axis=2) / np.sum(ab * ab, axis=2), 0.0, 1.0)
    proj = a + tt[..., None] * ab
    return np.min(np.linalg.norm(p - proj, axis=2), axis=1)


def _resample_closed(points: np.ndarray, spacing: float, corners: np.ndarray | None = None) -> np.ndarray:
    """Resample a closed polyline at (at most) the given arclength spacing.

    Corner indices, when given, are kept exactly; each piece between corners
    is divided uniformly.
    """
    n = len(points)
    if corners is None:
        seg = np.linalg.norm(np.roll(points, -1, axis=0) - points, axis=1)
        s = np.r_[0.0, np.cumsum(seg)]
        m = max(int(math.ceil(s[-1] / spacing)), 3)
        targets = np.linspace(0.0, s[-1], m, endpoint=False)
        closed = np.vstack([points, points[:1]])
        return np.column_stack([np.interp(targets, s, closed[:, 0]), np.interp(targets, s, closed[:, 1])])
    out = []
    for i, c in enumerate(corners):
        c_next = corners[(i + 1) % len(corners)]
        idx = np.arange(c, c_next + (n if c_next <= c else 0) + 1) % n
        piece = points[idx]
        seg = np.linalg.norm(np.diff(piece, axis=0), axis=1)
        s = np.r_[0.0, np.cumsum(seg)]
        m = max(int(math.ceil(s[-1] / spacing)), 1)
        targets = np.linspace(0.0, s[-1], m, endpoint=False)
        out.append(np.column_stack([np.interp(targets, s, piece[:, 0]), np.interp(targets, s, piece[:, 1])]))
    return np.vstack(out)


# ---------------------------------------------------------------------------
# Obstacles
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Disc:
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 1.0
    kind = "disc"

    def __post_init__(self):
        if self.radius <= 0:
            raise GeometryError("disc radius must be positive")

    @property
    def max_radius(self) -> float:
        return math.hypot(*self.center) + self.radius

    def point(self, s: float) -> np.ndarray:
        """Boundary point at polar angle s about the centre."""
        return np.array(self.center) + self.radius * np.array([math.cos(s), math.sin(s)])

    def normal(self, s: float) -> np.ndarray:
        return np.array([math.cos(s), math.sin(s)])

    def normal_at(self, x: np.ndarray) -> np.ndarray:
        d = np.asarray(x, float) - np.array(self.center)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def param_of(self, x: np.ndarray) -> np.ndarray:
        d = np.atleast_2d(x) - np.array(self.center)
        return np.arctan2(d[:, 1], d[:, 0])

    def perimeter(self) -> float:
        return 2 * math.pi * self.radius

    def sample(self, spacing: float) -> np.ndarray:
        n = max(int(math.ceil(self.perimeter() / spacing)), 8)
        t = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
        return np.array(self.center) + self.radius * np.column_stack([np.cos(t), np.sin(t)])

    def project(self, x: np.ndarray) -> np.ndarray:
        c = np.array(self.center)
        d = np.atleast_2d(x) - c
        return c + self.radius * d / np.linalg.norm(d, axis=1, keepdims=True)

    def signed_distance(self, pts: np.ndarray) -> np.ndarray:
        return np.linalg.norm(np.atleast_2d(pts) - np.array(self.center), axis=1) - self.radius

    def interior_point(self) -> np.ndarray:
        return np.array(self.center, dtype=float)


def butterfly_radius(theta):
    """Polar radius of the butterfly obstacle: (0.3 + sin²θ)(1.4 cos 2θ + 1.5)."""
    theta = np.asarray(theta, dtype=float)
    return (0.3 + np.sin(theta) ** 2) * (1.4 * np.cos(2 * theta) + 1.5)


def _butterfly_dradius(theta):
    theta = np.asarray(theta, dtype=float)
    return 2 * np.sin(theta) * np.cos(theta) * (1.4 * np.cos(2 * theta) + 1.5) - 2.8 * np.sin(
        2 * theta
    ) * (0.3 + np.sin(theta) ** 2)


_POLAR_PRESETS: dict[str, tuple[Callable, Callable]] = {
    "butterfly": (butterfly_radius, _butterfly_dradius),
}


@dataclass(frozen=True)
class PolarCurve:
    """Star-shaped curve r = ρ(θ) about the origin.

    ``preset`` names an analytic ρ (and ρ') used for evaluation at arbitrary
    angles; ``table`` holds ρ sampled on a uniform grid of [0, 2π).
    """

    preset: str
    table: tuple[float, ...] = field(default=(), repr=False, compare=False)
    kind = "polar_curve"

    def __post_init__(self):
        if self.preset not in _POLAR_PRESETS:
            raise GeometryError(f"unknown polar preset {self.preset!r}")
        if not self.table:
            grid = np.linspace(0.0, 2 * math.pi, 720, endpoint=False)
            object.__setattr__(self, "table", tuple(self.rho(grid).tolist()))

    def rho(self, theta):
        return _POLAR_PRESETS[self.preset][0](theta)

    def drho(self, theta):
        return _POLAR_PRESETS[self.preset][1](theta)

    @property
    def max_radius(self) -> float:
        th = np.linspace(0, 2 * math.pi, 20001)
        return float(np.max(self.rho(th)))

    def point(self, s: float) -> np.ndarray:
        r = float(self.rho(s))
        return r * np.array([math.cos(s), math.sin(s)])

    def tangent(self, s) -> np.ndarray:
        s = np.asarray(s, float)
        r, dr = self.rho(s), self.drho(s)
        return np.stack([dr * np.cos(s) - r * np.sin(s), dr * np.sin(s) + r * np.cos(s)], axis=-1)

    def normal(self, s) -> np.ndarray:
        t = self.tangent(s)
        n = np.stack([t[..., 1], -t[..., 0]], axis=-1)  # curve is counter-clockwise
        return n / np.linalg.norm(n, axis=-1, keepdims=True)

    def normal_at(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, float)
        return self.normal(np.arctan2(x[..., 1], x[..., 0]))

    def param_of(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.arctan2(x[:, 1], x[:, 0])

    def _dense(self, n: int = 20000) -> np.ndarray:
        th = np.linspace(0, 2 * math.pi, n, endpoint=False)
        r = self.rho(th)
        return np.column_stack([r * np.cos(th), r * np.sin(th)])

    def perimeter(self) -> float:
        d = self._dense()
        return float(np.sum(np.linalg.norm(np.roll(d, -1, axis=0) - d, axis=1)))

    def sample(self, spacing: float) -> np.ndarray:
        # resample in arclength, then snap exactly onto the analytic curve
        pts = _resample_closed(self._dense(), spacing)
        return self.project(pts)

    def project(self, x: np.ndarray) -> np.ndarray:
        th = self.param_of(x)
        r = self.rho(th)
        return np.column_stack([r * np.cos(th), r * np.sin(th)])

    def signed_distance(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        d = self._dense(4000)
        dist = _segment_distance(d, pts)
        inside = np.hypot(pts[:, 0], pts[:, 1]) < self.rho(np.arctan2(pts[:, 1], pts[:, 0]))
        return np.where(inside, -dist, dist)

    def interior_point(self) -> np.ndarray:
        return np.zeros(2)


@dataclass(frozen=True)
class Polygon:
    vertices: tuple[tuple[float, float], ...]
    kind = "polygon"

    def __post_init__(self):
        if len(self.vertices) < 3:
            raise GeometryError("a polygon needs at least 3 vertices")

    @property
    def array(self) -> np.ndarray:
        return np.array(self.vertices, dtype=float)

    @property
    def orientation(self) -> int:
        v = self.array
        area2 = np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1])
        return 1 if area2 > 0 else -1

    @property
    def max_radius(self) -> float:
        return float(np.max(np.linalg.norm(self.array, axis=1)))

    def edge_lengths(self) -> np.ndarray:
        v = self.array
        return np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1)

    def perimeter(self) -> float:
        return float(self.edge_lengths().sum())

    def locate(self, s: float) -> tuple[int, float]:
        """Edge index and local fraction for arclength parameter s ∈ [0, perimeter)."""
        L = self.edge_lengths()
        cum = np.r_[0.0, np.cumsum(L)]
        s = s % cum[-1]
        i = int(np.searchsorted(cum, s, side="right") - 1)
        return i, (s - cum[i]) / L[i]

    def point(self, s: float) -> np.ndarray:
        i, f = self.locate(s)
        v = self.array
        return (1 - f) * v[i] + f * v[(i + 1) % len(v)]

    def edge_normal(self, i: int) -> np.ndarray:
        v = self.array
        d = v[(i + 1) % len(v)] - v[i]
        n = np.array([d[1], -d[0]]) * self.orientation
        return n / np.linalg.norm(n)

    def normal(self, s: float, tol: float = 1e-12) -> np.ndarray:
        i, f = self.locate(s)
        L = self.edge_lengths()[i]
        if f * L < tol or (1 - f) * L < tol:
            j = i if f * L < tol else (i + 1) % len(self.vertices)
            raise GeometryError(f"normal undefined at polygon vertex {j} {self.vertices[j]}")
        return self.edge_normal(i)

    def normal_at(self, x: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        x = np.asarray(x, float)
        v = self.array
        for i in range(len(v)):
            a, b = v[i], v[(i + 1) % len(v)]
            ab = b - a
            f = np.dot(x - a, ab) / np.dot(ab, ab)
            if -tol <= f <= 1 + tol and abs(ab[0] * (x - a)[1] - ab[1] * (x - a)[0]) / np.linalg.norm(ab) < 1e-8:
                if min(f, 1 - f) * np.linalg.norm(ab) < tol:
                    j = i if f < 0.5 else (i + 1) % len(v)
                    raise GeometryError(f"normal undefined at polygon vertex {j} {self.vertices[j]}")
                return self.edge_normal(i)
        raise GeometryError(f"point {x.tolist()} is not on the polygon")

    def sample(self, spacing: float) -> np.ndarray:
        return _resample_closed(self.array, spacing, corners=np.arange(len(self.vertices)))

    def project(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        v = self.array
        a = v[None, :, :]
        b = np.roll(v, -1, axis=0)[None, :, :]
        ab = b - a
        tt = np.clip(np.sum((x[:, None, :] - a) * ab, axis=2) / np.sum(ab * ab, axis=2), 0, 1)
        proj = a + tt[..., None] * ab
        k = np.argmin(np.linalg.norm(x[:, None, :] - proj, axis=2), axis=1)
        return proj[np.arange(len(x)), k]

    def signed_distance(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        d = _segment_distance(self.array, pts)
        return np.where(_winding_contains(self.array, pts), -d, d)

    def interior_point(self) -> np.ndarray:
        import triangle

        tri = triangle.triangulate(
            {"vertices": self.array, "segments": np.c_[np.arange(len(self.array)), np.roll(np.arange(len(self.array)), -1)]},
            "p",
        )
        t = tri["triangles"][0]
        return tri["vertices"][t].mean(axis=0)

    def is_simple(self) -> bool:
        v = self.array
        n = len(v)

        def cross(o, a, b):
            return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

        for i in range(n):
            a, b = v[i], v[(i + 1) % n]
            for j in range(i + 1, n):
                if j == i or (j + 1) % n == i or j == (i + 1) % n:
                    continue
                c, d = v[j], v[(j + 1) % n]
                d1, d2 = cross(a, b, c), cross(a, b, d)
                d3, d4 = cross(c, d, a), cross(c, d, b)
                if d1 * d2 < 0 and d3 * d4 < 0:
                    return False
                if 0 in (d1, d2, d3, d4):
                    return False
        return True


def preset_butterfly() -> PolarCurve:
    """Butterfly obstacle r = (0.3 + sin²θ)(1.4 cos 2θ + 1.5); unscaled (max radius ≈ 1.25)."""
    return PolarCurve("butterfly")


_TRAPPING_VERTICES = (
    (0.5, 0.125),
    (0.5, 0.5),
    (-0.5, 0.5),
    (-0.5, -0.5),
    (0.8, -0.5),
    (0.8, -0.125),
    (0.55, -0.125),
    (0.55, -0.375),
    (-0.375, -0.375),
    (-0.375, 0.375),
    (0.25, 0.375),
    (0.25, 0.125),
)


def preset_trapping_polygon() -> Polygon:
    """The 12-vertex trapping obstacle (a hooked channel)."""
    return Polygon(_TRAPPING_VERTICES)


# ---------------------------------------------------------------------------
# Truncation boundaries
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Circle:
    """Truncation boundary ∂B(0, R)."""

    R: float
    kind = "circle"

    def __post_init__(self):
        if self.R <= 0:
            raise GeometryError("R must be positive")

    @property
    def max_radius(self) -> float:
        return self.R

    @property
    def inner_radius(self) -> float:
        return self.R

    def perimeter(self) -> float:
        return 2 * math.pi * self.R

    def point(self, s: float) -> np.ndarray:
        return self.R * np.array([math.cos(s), math.sin(s)])

    def normal(self, s: float) -> np.ndarray:
        return np.array([math.cos(s), math.sin(s)])

    def normal_at(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, float)
        return x / np.linalg.norm(x, axis=-1, keepdims=True)

    def curvature_at(self, x: np.ndarray) -> np.ndarray:
        return np.full(np.atleast_2d(x).shape[0], 1.0 / self.R)

    def sample(self, spacing: float) -> np.ndarray:
        return Disc((0.0, 0.0), self.R).sample(spacing)

    def project(self, x: np.ndarray) -> np.ndarray:
        return Disc((0.0, 0.0), self.R).project(x)

    def signed_distance(self, pts: np.ndarray) -> np.ndarray:
        return np.linalg.norm(np.atleast_2d(pts), axis=1) - self.R


@dataclass(frozen=True)
class Square:
    """Truncation boundary of the square [-half_side, half_side]², optionally with rounded corners.

    Experiments with "a square of side length 2 R_square" use
    ``half_side = R_square``.
    """

    half_side: float
    corner_radius: float = 0.0
    kind = "square"

    def __post_init__(self):
        if self.half_side <= 0:
            raise GeometryError("half_side must be positive")
        if not (0 <= self.corner_radius < self.half_side):
            raise GeometryError("corner_radius must lie in [0, half_side)")

    @property
    def R(self) -> float:
        return self.half_side

    @property
    def max_radius(self) -> float:
        a, rc = self.half_side, self.corner_radius
        return math.sqrt(2) * (a - rc) + rc

    @property
    def inner_radius(self) -> float:
        return self.half_side

    def outline(self, n_arc: int = 64) -> np.ndarray:
        """Dense counter-clockwise outline (corners exact when corner_radius is 0)."""
        a, rc = self.half_side, self.corner_radius
        if rc == 0:
            return np.array([[a, -a], [a, a], [-a, a], [-a, -a]], dtype=float)
        pts = []
        for cx, cy, start in ((a - rc, a - rc, 0.0), (-a + rc, a - rc, 0.5 * math.pi), (-a + rc, -a + rc, math.pi), (a - rc, -a + rc, 1.5 * math.pi)):
            t = np.linspace(start, start + 0.5 * math.pi, n_arc)
            pts.append(np.column_stack([cx + rc * np.cos(t), cy + rc * np.sin(t)]))
        return np.vstack(pts)

    def perimeter(self) -> float:
        a, rc = self.half_side, self.corner_radius
        return 8 * (a - rc) + 2 * math.pi * rc

    def point(self, s: float) -> np.ndarray:
        """Boundary point at arclength s measured counter-clockwise from (a, -a + rc)."""
        o = self.outline(2048)
        seg = np.linalg.norm(np.roll(o, -1, axis=0) - o, axis=1)
        cum = np.r_[0.0, np.cumsum(seg)]
        s = s % cum[-1]
        closed = np.vstack([o, o[:1]])
        return np.array([np.interp(s, cum, closed[:, 0]), np.interp(s, cum, closed[:, 1])])

    def normal_at(self, x: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        a, rc = self.half_side, self.corner_radius
        out = np.zeros_like(x)
        c = np.clip(x, -(a - rc), a - rc)
        d = x - c
        nd = np.linalg.norm(d, axis=1)
        corner = (np.abs(d[:, 0]) > tol) & (np.abs(d[:, 1]) > tol)
        if rc == 0:
            corner |= (np.abs(np.abs(x[:, 0]) - a) <= tol) & (np.abs(np.abs(x[:, 1]) - a) <= tol)
        if rc == 0 and np.any(corner):
            raise GeometryError(f"normal undefined at square corner {x[corner][0].tolist()}")
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(nd[:, None] > 0, d / nd[:, None], 0.0)
        # points on flat sides with rc == 0 fall in the 'd' direction too
        flat = ~corner
        ax = np.abs(x[flat])
        side_x = ax[:, 0] >= ax[:, 1]
        nx = np.where(side_x, np.sign(x[flat, 0]), 0.0)
        ny = np.where(side_x, 0.0, np.sign(x[flat, 1]))
        out[flat] = np.column_stack([nx, ny])
        return out if np.asarray(x).ndim > 1 and len(out) > 1 else out[0]

    def normal(self, s: float) -> np.ndarray:
        return self.normal_at(self.point(s))

    def curvature_at(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.corner_radius == 0:
            return np.zeros(len(x))
        a, rc = self.half_side, self.corner_radius
        on_arc = (np.abs(x[:, 0]) > a - rc + 1e-12) & (np.abs(x[:, 1]) > a - rc + 1e-12)
        return np.where(on_arc, 1.0 / rc, 0.0)

    def sample(self, spacing: float) -> np.ndarray:
        if self.corner_radius == 0:
            o = self.outline()
            return _resample_closed(o, spacing, corners=np.arange(4))
        return self.project(_resample_closed(self.outline(512), spacing))

    def project(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        a, rc = self.half_side, self.corner_radius
        c = np.clip(x, -(a - rc), a - rc)
        d = x - c
        nd = np.linalg.norm(d, axis=1)
        out = x.copy()
        arc = (np.abs(d[:, 0]) > 0) & (np.abs(d[:, 1]) > 0)
        if rc > 0:
            out[arc] = c[arc] + rc * d[arc] / nd[arc, None]
        else:
            out[arc] = c[arc]
        flat = ~arc
        ax = np.abs(x[flat])
        side_x = ax[:, 0] >= ax[:, 1]
        px = np.where(side_x, np.where(x[flat, 0] >= 0, a, -a), x[flat, 0])
        py = np.where(side_x, x[flat, 1], np.where(x[flat, 1] >= 0, a, -a))
        out[flat] = np.column_stack([px, py])
        return out

    def signed_distance(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        a, rc = self.half_side, self.corner_radius
        q = np.abs(pts) - (a - rc)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(np.max(q, axis=1), 0.0)
        return outside + inside - rc


# ---------------------------------------------------------------------------
# Generic queries
# ---------------------------------------------------------------------------
ObstacleShape = Union[Disc, PolarCurve, Polygon]
TruncationShape = Union[Circle, Square]


def outward_normal(shape, s: float) -> np.ndarray:
    """Unit outward normal at boundary parameter s.

    The parameter is the polar angle for discs, circles and polar curves,
    and arclength for polygons and squares.
    """
    return np.asarray(shape.normal(s), dtype=float)


def contains(shape, point) -> bool | np.ndarray:
    """Whether the point(s) lie strictly inside the shape."""
    pts = np.atleast_2d(np.asarray(point, dtype=float))
    res = shape.signed_distance(pts) < 0
    return bool(res[0]) if np.asarray(point).ndim == 1 else res


def distance_to_boundary(shape, point) -> float | np.ndarray:
    """Signed distance to the shape boundary: negative inside, positive outside."""
    pts = np.atleast_2d(np.asarray(point, dtype=float))
    res = shape.signed_distance(pts)
    return float(res[0]) if np.asarray(point).ndim == 1 else res


# ---------------------------------------------------------------------------
# Scenes
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class PmlLayer:
    """Radial PML annulus B(0, inner_radius + width) minus B(0, inner_radius)."""

    inner_radius: float
    width: float = 0.5


@dataclass(frozen=True)
class Scene:
    obstacle: ObstacleShape
    truncation: TruncationShape
    pml: PmlLayer | None = None

    def __post_init__(self):
        ob = self.obstacle.max_radius
        if isinstance(self.truncation, Circle):
            gap = self.truncation.R - ob
        else:
            gap = self.truncation.half_side - ob
        if gap <= 0:
            raise GeometryError(
                f"truncation boundary does not strictly contain the obstacle (gap {gap:.3g})"
            )
        if self.pml is not None and self.pml.inner_radius < self.truncation.max_radius - 1e-12:
            raise GeometryError("the PML must start outside the truncation boundary")

    @property
    def gap(self) -> float:
        if isinstance(self.truncation, Circle):
            return self.truncation.R - self.obstacle.max_radius
        return self.truncation.half_side - self.obstacle.max_radius

    @property
    def outer_radius(self) -> float:
        if self.pml is None:
            return self.truncation.max_radius
        return self.pml.inner_radius + self.pml.width

    @classmethod
    def ball(cls, R: float, pml_width: float | None = 0.5, radius: float = 1.0) -> "Scene":
        pml = PmlLayer(R, pml_width) if pml_width else None
        return cls(Disc((0.0, 0.0), radius), Circle(R), pml)

    @classmethod
    def square(cls, R_square: float, pml_width: float | None = 0.5, radius: float = 1.0) -> "Scene":
        pml = PmlLayer(1.5 * R_square, pml_width) if pml_width else None
        return cls(Disc((0.0, 0.0), radius), Square(R_square), pml)


def _shape_to_dict(shape) -> dict:
    if isinstance(shape, Disc):
        return {"kind": "disc", "params": {"center": list(shape.center), "radius": shape.radius}}
    if isinstance(shape, PolarCurve):
        return {"kind": "polar_curve", "params": {"preset": shape.preset}}
    if isinstance(shape, Polygon):
        return {"kind": "polygon", "params": {"vertices": [list(v) for v in shape.vertices]}}
    if isinstance(shape, Circle):
        return {"kind": "circle", "R": shape.R}
    if isinstance(shape, Square):
        return {"kind": "square", "R": shape.half_side, "corner_radius": shape.corner_radius}
    raise GeometryError(f"cannot serialise {type(shape).__name__}")


def scene_to_dict(scene: Scene) -> dict:
    d = {"obstacle": _shape_to_dict(scene.obstacle), "truncation": _shape_to_dict(scene.truncation)}
    if scene.pml is not None:
        d["pml"] = {"inner_radius": scene.pml.inner_radius, "width": scene.pml.width}
    return d


def _obstacle_from_dict(d: dict) -> ObstacleShape:
    kind, params = d.get("kind"), d.get("params", {})
    if kind == "disc":
        return Disc(tuple(params.get("center", (0.0, 0.0))), float(params.get("radius", 1.0)))
    if kind == "polar_curve":
        return PolarCurve(params.get("preset", "butterfly"))
    if kind == "butterfly":
        return preset_butterfly()
    if kind == "polygon":
        if "preset" in params:
            if params["preset"] != "trapping":
                raise GeometryError(f"unknown polygon preset {params['preset']!r}")
            return preset_trapping_polygon()
        return Polygon(tuple(tuple(map(float, v)) for v in params["vertices"]))
    raise GeometryError(f"unknown obstacle kind {kind!r}")


def _truncation_from_dict(d: dict) -> TruncationShape:
    kind = d.get("kind")
    if kind == "circle":
        return Circle(float(d["R"]))
    if kind == "square":
        return Square(float(d["R"]), float(d.get("corner_radius", 0.0)))
    raise GeometryError(f"unknown truncation kind {kind!r}")


def scene_from_dict(d: dict) -> Scene:
    allowed = {"obstacle", "truncation", "pml"}
    unknown = set(d) - allowed
    if unknown:
        raise GeometryError(f"unknown scene keys: {sorted(unknown)}")
    obstacle = _obstacle_from_dict(d["obstacle"])
    truncation = _truncation_from_dict(d["truncation"])
    pml = None
    if d.get("pml"):
        p = d["pml"]
        width = float(p.get("width", 0.5))
        inner = p.get("inner_radius")
        if inner is None:
            inner = truncation.R if isinstance(truncation, Circle) else 1.5 * truncation.half_side
        pml = PmlLayer(float(inner), width)
    return Scene(obstacle, truncation, pml)


def dumps_scene(scene: Scene) -> str:
    return json.dumps(scene_to_dict(scene), indent=2)


def loads_scene(text: str) -> Scene:
    return scene_from_dict(json.loads(text))
