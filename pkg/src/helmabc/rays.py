"""Billiard rays between the obstacle and the truncation boundary.

Rays move at unit speed and reflect specularly at both boundaries.  At each
hit on Γ_tr the ray weight is multiplied by the ABC's reflection coefficient
α_ref(θ), θ being the angle to the normal.  Also provided: emanating rays
from the obstacle, direct-ray classification, the unfolding of square
billiards, predicted R-exponents and a Monte-Carlo reflected-energy
estimate (a heuristic, not a rigorous bound).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from helmabc.exceptions import GeometryError, RayTracingError
from helmabc.geometry import Circle, Disc, PolarCurve, Polygon, Scene, Square, _resample_closed
from helmabc.pade import PadeAbc, reflection_coefficient

__all__ = [
    "Ray",
    "HitRecord",
    "RayPath",
    "first_hit",
    "emanating_ray",
    "reflect",
    "trace",
    "DirectRaySet",
    "direct_ray_set",
    "boundary_samples",
    "UnfoldResult",
    "unfold_hypercube",
    "square_billiard",
    "periodic_length",
    "predicted_exponent",
    "ReentrantEstimate",
    "reentrant_energy",
    "ball_hit_angles",
    "gamma_tr_hits",
]

_TANGENT_TOL = 1e-9


@dataclass(frozen=True)
class Ray:
    x: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        xi = np.asarray(self.xi, dtype=float)
        nrm = np.linalg.norm(xi)
        if nrm == 0:
            raise ValueError("ray direction must be non-zero")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "xi", xi / nrm)

    def reversed(self) -> "Ray":
        return Ray(self.x, -self.xi)


@dataclass(frozen=True)
class HitRecord:
    point: np.ndarray
    boundary: str  # "GammaD" or "GammaTr"
    theta: float
    path_length: float
    weight: float
    normal: np.ndarray = field(repr=False, default=None)


@dataclass
class RayPath:
    start: Ray
    hits: list[HitRecord]
    final: Ray
    termination: str  # max_bounces | max_length | tangency | vertex
    length: float

    def hits_on(self, boundary: str) -> list[HitRecord]:
        return [h for h in self.hits if h.boundary == boundary]

    @property
    def weight(self) -> float:
        return self.hits[-1].weight if self.hits else 1.0


def reflect(xi: np.ndarray, n: np.ndarray) -> np.ndarray:
    return xi - 2.0 * np.dot(xi, n) * n


# ---------------------------------------------------------------------------
# Intersections
# ---------------------------------------------------------------------------
def _circle_roots(x, d, c, r):
    w = x - c
    b = np.dot(d, w)
    cc = np.dot(w, w) - r * r
    disc = b * b - cc
    if disc < 0:
        return ()
    s = math.sqrt(disc)
    # stable pair of roots
    q = -b - s if b >= 0 else -b + s
    if q == 0:
        return (0.0,)
    return tuple(sorted((q, cc / q)))


def _segments_hit(x, d, verts, tmin, closed=True):
    best = None
    n = len(verts)
    for i in range(n if closed else n - 1):
        a, b = verts[i], verts[(i + 1) % n]
        e = b - a
        den = d[0] * e[1] - d[1] * e[0]
        if den == 0:
            continue
        w = a - x
        t = (w[0] * e[1] - w[1] * e[0]) / den
        s = (w[0] * d[1] - w[1] * d[0]) / den
        if t > tmin and -1e-14 <= s <= 1 + 1e-14 and (best is None or t < best[0]):
            nrm = np.array([e[1], -e[0]]) / np.linalg.norm(e)
            best = (t, i, s, nrm)
    return best


def _polar_hit(shape: PolarCurve, x, d, tmin, step=1e-3):
    rmax = shape.max_radius * (1 + 1e-9)
    roots = _circle_roots(x, d, np.zeros(2), rmax)
    if len(roots) < 2 or roots[1] <= tmin:
        return None
    t0, t1 = max(tmin, roots[0]), roots[1]

    def g(t):
        p = x + np.multiply.outer(t, d)
        th = np.arctan2(p[..., 1], p[..., 0])
        return np.hypot(p[..., 0], p[..., 1]) - shape.rho(th)

    n = max(int(math.ceil((t1 - t0) / step)), 2)
    ts = np.linspace(t0, t1, n + 1)
    gs = g(ts)
    pos = gs > 0
    # first crossing from outside to inside after having been outside
    idx = np.flatnonzero(pos[:-1] & ~pos[1:])
    if len(idx) == 0:
        return None
    i = idx[0]
    t = brentq(lambda s: float(g(s)), ts[i], ts[i + 1], xtol=1e-15, maxiter=200)
    p = x + t * d
    return t, shape.normal(math.atan2(p[1], p[0]))


def first_hit(shape, x: np.ndarray, d: np.ndarray, tmin: float, interior: bool):
    """First intersection of the ray x + t d (t > tmin) with a shape boundary.

    ``interior`` says whether the ray travels inside the shape (truncation
    boundaries) or outside it (obstacles).  Returns ``(t, normal, vertex)``
    with the outward normal of the shape, or None.
    """
    if isinstance(shape, (Disc, Circle)):
        c = np.array(shape.center) if isinstance(shape, Disc) else np.zeros(2)
        r = shape.radius if isinstance(shape, Disc) else shape.R
        ts = [t for t in _circle_roots(x, d, c, r) if t > tmin]
        if not ts:
            return None
        t = ts[0]
        p = x + t * d
        return t, (p - c) / np.linalg.norm(p - c), False
    if isinstance(shape, Polygon):
        hit = _segments_hit(x, d, shape.array, tmin)
        if hit is None:
            return None
        t, i, s, nrm = hit
        L = shape.edge_lengths()[i]
        vertex = min(s, 1 - s) * L < 1e-12
        return t, nrm * shape.orientation, vertex
    if isinstance(shape, Square):
        a, rc = shape.half_side, shape.corner_radius
        if rc == 0:
            hit = _segments_hit(x, d, shape.outline(), tmin)
            if hit is None:
                return None
            t, i, s, nrm = hit
            vertex = min(s, 1 - s) * 2 * a < 1e-12
            return t, nrm, vertex
        best = None
        for sgn, axis in ((1, 0), (-1, 0), (1, 1), (-1, 1)):
            if d[axis] * sgn <= 0:
                continue
            t = (sgn * a - x[axis]) / d[axis]
            p = x + t * d
            if t > tmin and abs(p[1 - axis]) <= a - rc and (best is None or t < best[0]):
                nrm = np.zeros(2)
                nrm[axis] = sgn
                best = (t, nrm, False)
        for cx in (a - rc, -(a - rc)):
            for cy in (a - rc, -(a - rc)):
                c = np.array([cx, cy])
                for t in _circle_roots(x, d, c, rc):
                    p = x + t * d
                    if t > tmin and abs(p[0]) >= a - rc and abs(p[1]) >= a - rc and np.sign(p[0]) == np.sign(cx) and np.sign(p[1]) == np.sign(cy):
                        if best is None or t < best[0]:
                            best = (t, (p - c) / rc, False)
        return best
    if isinstance(shape, PolarCurve):
        res = _polar_hit(shape, x, d, tmin)
        if res is None:
            return None
        return res[0], res[1], False
    raise GeometryError(f"unsupported shape {type(shape).__name__}")


def _obstacle_normal(obstacle, x):
    return np.asarray(obstacle.normal_at(np.asarray(x, float)), dtype=float).reshape(2)


def emanating_ray(obstacle, x_prime, a) -> Ray:
    """Ray leaving the boundary point x' for incident direction a.

    On the illuminated side (a·n ≤ 0) the direction is the mirror image
    a − 2(n·a)n; on the shadow side it is a itself.
    """
    a = np.asarray(a, dtype=float)
    a = a / np.linalg.norm(a)
    n = _obstacle_normal(obstacle, x_prime)
    an = float(np.dot(a, n))
    xi = a - 2 * an * n if an <= 0 else a
    return Ray(np.asarray(x_prime, dtype=float), xi)


# ---------------------------------------------------------------------------
# Tracing
# ---------------------------------------------------------------------------
def _scale(scene: Scene) -> float:
    return scene.truncation.max_radius


def _check_inside(scene: Scene, p: np.ndarray, tol: float):
    ob = scene.obstacle
    if isinstance(ob, PolarCurve):
        outside = math.hypot(*p) >= float(ob.rho(math.atan2(p[1], p[0]))) - tol
    else:
        outside = float(ob.signed_distance(p[None, :])[0]) >= -tol
    inside = float(scene.truncation.signed_distance(p[None, :])[0]) <= tol
    if not (outside and inside):
        raise RayTracingError(f"ray left the domain at {p.tolist()} (numerical drift)")


def trace(
    scene: Scene,
    ray: Ray,
    abc: PadeAbc,
    max_bounces: int = 100,
    max_length: float = math.inf,
    stop_at: str | None = None,
) -> RayPath:
    """Follow a billiard ray, recording every boundary hit.

    Terminates after ``max_bounces`` hits, when the next hit lies beyond
    ``max_length``, at a tangential hit, at a polygon vertex, or at the first
    hit on the boundary named by ``stop_at``.
    """
    R = _scale(scene)
    eps = 1e-12 * R
    tol = 1e-8 * R
    x, xi = ray.x.copy(), ray.xi.copy()
    weight, total = 1.0, 0.0
    hits: list[HitRecord] = []
    reason = "max_bounces"
    for _ in range(max_bounces):
        h_ob = first_hit(scene.obstacle, x, xi, eps, interior=False)
        h_tr = first_hit(scene.truncation, x, xi, eps, interior=True)
        if h_tr is None:
            raise RayTracingError(f"ray from {x.tolist()} along {xi.tolist()} never meets the truncation boundary")
        if h_ob is not None and h_ob[0] < h_tr[0]:
            t, n, vertex = h_ob
            name = "GammaD"
        else:
            t, n, vertex = h_tr
            name = "GammaTr"
        if total + t > max_length:
            x = x + (max_length - total) * xi
            total = max_length
            reason = "max_length"
            break
        x = x + t * xi
        total += t
        _check_inside(scene, x, tol)
        cosv = min(1.0, abs(float(np.dot(xi, n))))
        theta = math.acos(cosv)
        if name == "GammaTr" and theta < math.pi / 2 - _TANGENT_TOL:
            weight *= float(reflection_coefficient(abc, theta))
        hits.append(HitRecord(x.copy(), name, theta, t, weight, n))
        if vertex:
            reason = "vertex"
            break
        if theta >= math.pi / 2 - _TANGENT_TOL:
            reason = "tangency"
            break
        xi = reflect(xi, n)
        xi /= np.linalg.norm(xi)
        if stop_at == name:
            reason = f"hit_{name}"
            break
    return RayPath(ray, hits, Ray(x, xi), reason, total)


# ---------------------------------------------------------------------------
# Direct rays
# ---------------------------------------------------------------------------
def boundary_samples(obstacle, n: int) -> np.ndarray:
    """n points uniformly spaced in arclength (polygon samples avoid vertices)."""
    if isinstance(obstacle, Disc):
        t = (np.arange(n) + 0.5) * 2 * math.pi / n
        return np.array(obstacle.center) + obstacle.radius * np.column_stack([np.cos(t), np.sin(t)])
    if isinstance(obstacle, Polygon):
        L = obstacle.perimeter()
        return np.array([obstacle.point(s) for s in (np.arange(n) + 0.5) * L / n])
    if isinstance(obstacle, PolarCurve):
        dense = obstacle._dense(max(20000, 20 * n))
        pts = _resample_closed(dense, obstacle.perimeter() / n)
        return obstacle.project(pts)
    raise GeometryError(f"unsupported obstacle {type(obstacle).__name__}")


def _is_direct(scene: Scene, x_prime, a, abc) -> bool:
    ray = emanating_ray(scene.obstacle, x_prime, a)
    path = trace(scene, ray, abc, max_bounces=1)
    return bool(path.hits) and path.hits[0].boundary == "GammaTr"


@dataclass
class DirectRaySet:
    fraction: float
    points: np.ndarray
    direct: np.ndarray
    extremal_point: np.ndarray
    extremal_direct: bool


def direct_ray_set(obstacle, truncation, a, samples: int = 1000, abc: PadeAbc | None = None) -> DirectRaySet:
    """Classify emanating rays as direct (reach Γ_tr before Γ_D again)."""
    from helmabc.pade import impedance

    abc = impedance() if abc is None else abc
    scene = Scene(obstacle, truncation)
    a = np.asarray(a, dtype=float)
    a = a / np.linalg.norm(a)
    pts = boundary_samples(obstacle, samples)
    direct = np.array([_is_direct(scene, p, a, abc) for p in pts], dtype=bool)
    fine = boundary_samples(obstacle, max(4000, samples))
    ext = fine[np.argmax(fine @ a)]
    if isinstance(obstacle, Polygon):
        # the maximiser of a·x may be a vertex; step onto an adjacent edge
        ext = _nudge_off_vertex(obstacle, ext, a)
    ext_direct = _is_direct(scene, ext, a, abc)
    return DirectRaySet(float(direct.mean()) if samples else 0.0, pts, direct, ext, ext_direct)


def _nudge_off_vertex(poly: Polygon, p, a):
    v = poly.array
    d = np.linalg.norm(v - p, axis=1)
    i = int(np.argmin(d))
    if d[i] > 1e-9:
        return p
    best = None
    for j in ((i - 1) % len(v), (i + 1) % len(v)):
        q = v[i] + 1e-6 * (v[j] - v[i])
        if best is None or q @ a > best @ a:
            best = q
    return best


# ---------------------------------------------------------------------------
# Square billiards and unfolding
# ---------------------------------------------------------------------------
@dataclass
class UnfoldResult:
    unfolded: np.ndarray  # straight-line positions
    positions: np.ndarray  # folded back into the square
    directions: np.ndarray
    degenerate: bool  # a corner was hit within 1e-12


def _fold(y, R):
    u = np.mod(y + R / 2, 2 * R)
    refl = u > R
    return np.where(refl, 2 * R - u, u) - R / 2, np.where(refl, -1.0, 1.0)


def unfold_hypercube(R: float, ray: Ray, times) -> UnfoldResult:
    """Positions of the billiard in [−R/2, R/2]² via the unfolded straight line.

    The straight line x + tξ is folded back coordinate-wise by reflections in
    the lines x_i = ±R/2 (period 2R per coordinate).
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(np.abs(ray.x) > R / 2 + 1e-12):
        raise ValueError("ray must start inside the square")
    y = ray.x[None, :] + times[:, None] * ray.xi[None, :]
    pos, sign = _fold(y, R)
    dirs = sign * ray.xi[None, :]
    degenerate = _corner_hit(R, ray, float(times.max()) if len(times) else 0.0)
    return UnfoldResult(y, pos, dirs, degenerate)


def _corner_hit(R, ray, T, tol=1e-12) -> bool:
    # wall-crossing times per coordinate; a corner is a simultaneous crossing
    crossings = []
    for i in range(2):
        v = ray.xi[i]
        if abs(v) < 1e-300:
            crossings.append(np.array([]))
            continue
        u0 = ray.x[i] + R / 2
        kmin = math.floor((u0 + min(0, v * T)) / R) - 1
        kmax = math.ceil((u0 + max(0, v * T)) / R) + 1
        ks = np.arange(kmin, kmax + 1)
        t = (ks * R - u0) / v
        crossings.append(np.sort(t[(t > 0) & (t <= T)]))
    a, b = crossings
    if len(a) == 0 or len(b) == 0:
        return False
    j = np.searchsorted(b, a)
    near = np.minimum(np.abs(a - b[np.clip(j, 0, len(b) - 1)]), np.abs(a - b[np.clip(j - 1, 0, len(b) - 1)]))
    return bool(np.any(near < tol))


def square_billiard(R: float, ray: Ray, times):
    """Reference simulation in [−R/2, R/2]²: step from wall to wall, reflecting.

    Returns positions and directions at the requested (any order) times.
    """
    times = np.asarray(times, dtype=float)
    order = np.argsort(times)
    out_p = np.empty((len(times), 2))
    out_d = np.empty((len(times), 2))
    x, xi = ray.x.astype(float).copy(), ray.xi.astype(float).copy()
    t_now = 0.0
    h = R / 2
    for idx in order:
        target = times[idx]
        while True:
            dt = math.inf
            axis = -1
            for i in range(2):
                if xi[i] > 0:
                    ti = (h - x[i]) / xi[i]
                elif xi[i] < 0:
                    ti = (-h - x[i]) / xi[i]
                else:
                    continue
                if ti < dt:
                    dt, axis = ti, i
            if t_now + dt > target:
                break
            x = x + dt * xi
            x[axis] = math.copysign(h, x[axis])  # snap onto the wall
            xi[axis] = -xi[axis]
            t_now += dt
        out_p[idx] = x + (target - t_now) * xi
        out_d[idx] = xi
    return out_p, out_d


def periodic_length(R: float, p) -> float:
    """Unit-speed length after which direction p/|p| (p integer) returns to its start: 2R|p|."""
    p = np.asarray(p, dtype=float)
    return 2.0 * R * float(np.linalg.norm(p))


# ---------------------------------------------------------------------------
# Exponents and reflected energy
# ---------------------------------------------------------------------------
def predicted_exponent(truncation, abc: PadeAbc) -> float:
    """Expected decay exponent of the relative error in R: 2·m_ord for circles, 0 otherwise."""
    if isinstance(truncation, Circle):
        return 2.0 * abc.m_ord
    if isinstance(truncation, Square):
        return 0.0
    raise GeometryError(f"unsupported truncation {type(truncation).__name__}")


@dataclass
class ReentrantEstimate:
    value: float
    n_rays: int
    label: str = "HEURISTIC"


def _segment_enters_ball(p, d, length, c, r) -> bool:
    w = c - p
    t = min(max(float(np.dot(w, d)), 0.0), length)
    return float(np.linalg.norm(p + t * d - c)) <= r


def reentrant_energy(
    scene: Scene,
    abc: PadeAbc,
    n_rays: int,
    region="domain",
    a=None,
    seed: int = 0,
) -> ReentrantEstimate:
    """Monte-Carlo mean of α_ref(θ) times the indicator that the reflected ray enters ``region``.

    Emanating rays start at random boundary points (uniform in arclength)
    with a random incident direction unless ``a`` is given.  Only rays that
    reach Γ_tr directly contribute.  ``region`` is ``"domain"`` (the whole
    truncated domain) or ``("ball", center, radius)``.

    This is a heuristic diagnostic; it carries the label HEURISTIC.
    """
    if n_rays <= 0:
        return ReentrantEstimate(0.0, 0)
    rng = np.random.default_rng(seed)
    ob = scene.obstacle
    dense = boundary_samples(ob, 4096)
    seg = np.linalg.norm(np.roll(dense, -1, axis=0) - dense, axis=1)
    cum = np.r_[0.0, np.cumsum(seg)]
    total = 0.0
    for _ in range(n_rays):
        s = rng.uniform(0, cum[-1])
        i = int(np.searchsorted(cum, s, side="right") - 1)
        f = (s - cum[i]) / seg[i]
        x = (1 - f) * dense[i] + f * dense[(i + 1) % len(dense)]
        if isinstance(ob, (Disc, PolarCurve)):
            x = ob.project(x)[0]
        if a is None:
            ang = rng.uniform(0, 2 * math.pi)
            ai = np.array([math.cos(ang), math.sin(ang)])
        else:
            ai = np.asarray(a, dtype=float)
        try:
            ray = emanating_ray(ob, x, ai)
            path = trace(scene, ray, abc, max_bounces=1)
        except (GeometryError, RayTracingError):
            continue
        if not path.hits or path.hits[0].boundary != "GammaTr" or path.termination == "tangency":
            continue
        hit = path.hits[0]
        w = hit.weight
        if region == "domain":
            enters = True
        else:
            _, c, r = region
            d = path.final.xi
            nxt = first_hit(scene.truncation, hit.point, d, 1e-12 * _scale(scene), interior=True)
            length = nxt[0] if nxt is not None else 2 * _scale(scene)
            enters = _segment_enters_ball(hit.point, d, length, np.asarray(c, float), r)
        total += w * enters
    return ReentrantEstimate(total / n_rays, n_rays)


# ---------------------------------------------------------------------------
# Hit-angle statistics
# ---------------------------------------------------------------------------
def ball_hit_angles(R: float, n_rays: int, seed: int = 0, source_radius: float = 1.0):
    """Angles to the normal at the first hit on the circle |x| = R.

    Rays start uniformly (by area) in B(0, source_radius) with uniform random
    directions; no obstacle is present.

    Returns
    -------
    theta : ndarray, shape (n_rays,)
    impact : ndarray, shape (n_rays,)
        Distance from the origin to the ray's line, |x × ξ|.
    """
    if source_radius >= R:
        raise ValueError("sources must lie strictly inside the circle")
    rng = np.random.default_rng(seed)
    rad = source_radius * np.sqrt(rng.uniform(0, 1, n_rays))
    ang = rng.uniform(0, 2 * math.pi, n_rays)
    x = np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
    phi = rng.uniform(0, 2 * math.pi, n_rays)
    xi = np.column_stack([np.cos(phi), np.sin(phi)])
    b = np.einsum("ij,ij->i", x, xi)
    c = np.einsum("ij,ij->i", x, x) - R**2
    t = -b + np.sqrt(b * b - c)
    hit = x + t[:, None] * xi
    cross = np.abs(xi[:, 0] * hit[:, 1] - xi[:, 1] * hit[:, 0])
    theta = np.arctan2(cross, np.abs(np.einsum("ij,ij->i", xi, hit)))
    impact = np.abs(x[:, 0] * xi[:, 1] - x[:, 1] * xi[:, 0])
    return theta, impact


def gamma_tr_hits(scene: Scene, abc: PadeAbc, n_rays: int, max_bounces: int = 10, seed: int = 0):
    """Angles and accumulated weights of every Γ_tr hit of random emanating rays.

    Start points are uniform in arclength on the obstacle and incident
    directions uniform on the circle.  Rays that start at a polygon vertex or
    drift out of the domain are skipped.

    Returns
    -------
    theta, weight : ndarray
    """
    rng = np.random.default_rng(seed)
    pts = boundary_samples(scene.obstacle, max(n_rays, 1))
    pts = pts[rng.permutation(len(pts))][:n_rays]
    thetas, weights = [], []
    for x in pts:
        ang = rng.uniform(0, 2 * math.pi)
        a = np.array([math.cos(ang), math.sin(ang)])
        try:
            path = trace(scene, emanating_ray(scene.obstacle, x, a), abc, max_bounces=max_bounces)
        except (GeometryError, RayTracingError):
            continue
        for h in path.hits_on("GammaTr"):
            thetas.append(h.theta)
            weights.append(h.weight)
    return np.array(thetas), np.array(weights)
