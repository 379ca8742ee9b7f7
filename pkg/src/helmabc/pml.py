"""Radial PML reference solutions and the Mie series for a sound-soft disc.

The PML uses the complex radial stretch r̃ = r + (i/k)∫σ with the quadratic
profile σ(r) = σ₀((r − R_in)/W)².  In polar coordinates the stretched
operator is ∇·(A∇u) + k² b u with

    A_rr = r̃ / (r d),   A_φφ = r d / r̃,   b = r̃ d / r,   d = 1 + iσ/k,

and A = I, b = 1 inside r < R_in.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
import scipy.special as ss

from helmabc.exceptions import MeshError
from helmabc.fem import (
    FieldSolution,
    LinearSystem,
    assemble_volume,
    plane_wave,
    solve,
)
from helmabc.meshing import REGION_PML, Mesh

__all__ = [
    "PmlConfig",
    "default_sigma0",
    "pml_coefficients",
    "assemble_pml",
    "solve_pml",
    "mie_disc",
    "mie_terms",
    "wronskian_defect",
    "disc_abc_modes",
    "disc_abc_exact",
    "disc_abc_relative_error",
]


def default_sigma0(width: float, damping: float = 1e-6) -> float:
    """σ₀ giving round-trip amplitude damping ``exp(−2∫σ) = damping`` at normal incidence.

    With σ quadratic, ∫σ over the layer is σ₀W/3, independent of k.
    """
    return 3.0 * math.log(1.0 / damping) / (2.0 * width)


@dataclass(frozen=True)
class PmlConfig:
    R_inner: float
    width: float = 0.5
    sigma0: float | None = None

    def __post_init__(self):
        if self.width <= 0 or self.R_inner <= 0:
            raise ValueError("PML radius and width must be positive")
        if self.sigma0 is None:
            object.__setattr__(self, "sigma0", default_sigma0(self.width))
        if self.sigma0 <= 0:
            raise ValueError("sigma0 must be positive")

    @property
    def R_outer(self) -> float:
        return self.R_inner + self.width

    def sigma(self, r):
        s = np.clip((np.asarray(r) - self.R_inner) / self.width, 0.0, None)
        return self.sigma0 * s**2

    def sigma_integral(self, r):
        s = np.clip((np.asarray(r) - self.R_inner) / self.width, 0.0, None)
        return self.sigma0 * self.width * s**3 / 3.0


def pml_coefficients(config: PmlConfig, k: float):
    """Return ``coef(x) -> (A, b)`` for quadrature points x of shape (..., 2)."""

    def coef(x):
        r = np.hypot(x[..., 0], x[..., 1])
        rt = r + 1j / k * config.sigma_integral(r)
        d = 1.0 + 1j * config.sigma(r) / k
        arr = rt / (r * d)
        aff = r * d / rt
        n = x / r[..., None]
        t = np.stack([-n[..., 1], n[..., 0]], axis=-1)
        A = arr[..., None, None] * n[..., :, None] * n[..., None, :] + aff[..., None, None] * t[..., :, None] * t[..., None, :]
        inside = config.sigma(r) == 0
        A[inside] = np.eye(2)
        b = np.where(inside, 1.0, rt * d / r)
        return A, b

    return coef


def assemble_pml(mesh: Mesh, k: float, config: PmlConfig, a, g_D=None) -> LinearSystem:
    """Complex-stretched system: Dirichlet ``g_D`` on Γ_D, zero on the outer circle."""
    t0 = time.perf_counter()
    if not np.any(mesh.boundary_tags == "GammaOuter"):
        raise MeshError("PML mesh needs GammaOuter edges (generate with include_pml=True)")
    a = np.asarray(a, dtype=float)
    g_D = plane_wave(k, a) if g_D is None else g_D
    S, _ = assemble_volume(mesh, k, pml_coefficients(config, k), coef_regions=(REGION_PML,), with_mass=False)
    S = S.tocsr()
    dn = mesh.nodes_with_tag("GammaD")
    on = np.setdiff1d(mesh.nodes_with_tag("GammaOuter"), dn)
    fixed = np.r_[dn, on]
    vals = np.r_[g_D(mesh.points[dn]), np.zeros(len(on))]
    is_fixed = np.zeros(mesh.n_nodes, bool)
    is_fixed[fixed] = True
    free = np.flatnonzero(~is_fixed)
    Sf = S[free]
    del S
    rhs = -(Sf[:, fixed] @ vals)
    A = Sf[:, free]
    del Sf
    meta = {
        "assembly_time": time.perf_counter() - t0,
        "sigma0": config.sigma0,
        "pml_inner": config.R_inner,
        "pml_width": config.width,
        "a": a.tolist(),
    }
    return LinearSystem(A.tocsr(), rhs, True, mesh, free, fixed, vals, np.zeros(0, np.int64), k, meta)


def solve_pml(mesh: Mesh, k: float, config: PmlConfig, a, g_D=None) -> FieldSolution:
    return solve(assemble_pml(mesh, k, config, a, g_D))


# ---------------------------------------------------------------------------
# Mie series
# ---------------------------------------------------------------------------
def mie_terms(k: float, radius: float) -> int:
    """Truncation order n_max = ka + 8 (ka)^(1/3) + 20."""
    ka = k * radius
    return int(math.ceil(ka + 8 * ka ** (1 / 3) + 20))


def wronskian_defect(n: np.ndarray, x: float) -> float:
    """max |J_n Y_n' − J_n' Y_n − 2/(πx)| relative to 2/(πx)."""
    w = ss.jv(n, x) * ss.yvp(n, x) - ss.jvp(n, x) * ss.yv(n, x)
    ref = 2.0 / (math.pi * x)
    return float(np.max(np.abs(w - ref)) / ref)


def mie_disc(k: float, radius: float, a, points, n_max: int | None = None) -> np.ndarray:
    """Outgoing field equal to exp(ik x·a) on the boundary of the disc B(0, radius).

    Parameters
    ----------
    points : array_like, shape (n, 2)
        Evaluation points with |x| ≥ radius.
    n_max : int, optional
        Series truncation; defaults to :func:`mie_terms`.

    Raises
    ------
    ValueError
        If a point lies inside the disc, or the Bessel values fail the
        Wronskian or tail checks.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    r = np.hypot(pts[:, 0], pts[:, 1])
    if np.any(r < radius * (1 - 1e-12)):
        raise ValueError("mie_disc evaluated inside the disc")
    a = np.asarray(a, dtype=float)
    phi = np.arctan2(pts[:, 1], pts[:, 0]) - math.atan2(a[1], a[0])
    ka = k * radius
    N = mie_terms(k, radius) if n_max is None else n_max
    n = np.arange(0, N + 1)
    if wronskian_defect(n, ka) > 1e-12:
        raise ValueError("Bessel function values failed the Wronskian check")
    if abs(ss.jv(N, ka)) > 1e-12:
        raise ValueError(f"series tail too large at n_max = {N}")
    coef = ss.jv(n, ka) / ss.hankel1(n, ka)
    H = ss.hankel1(n[None, :], k * r[:, None])
    # sum over ±n: J_{-n}/H_{-n} H_{-n} = J_n/H_n H_n, i^{-n} e^{-inφ} + i^n e^{inφ} = 2 i^n cos(nφ)
    w = np.where(n == 0, 1.0, 2.0)
    terms = (w * (1j ** n) * coef)[None, :] * H * np.cos(n[None, :] * phi[:, None])
    return terms.sum(axis=1)


# ---------------------------------------------------------------------------
# Separable ABC solution: disc obstacle inside a concentric circle
# ---------------------------------------------------------------------------
def disc_abc_modes(k: float, radius: float, R: float, abc, n_max: int | None = None, curvature_correction: bool = False):
    """Mode coefficients (n, α_n, β_n, c_n) for the ABC problem on radius < r < R.

    Mode n of the truncated solution is α_n H¹_n(kr) + β_n H²_n(kr) and of the
    exact outgoing solution c_n H¹_n(kr); both equal J_n(k·radius) at r = radius
    (times i^n, applied by the callers).  The tangential Laplacian acts on
    mode n as −n²/R², so the ABC gives
    q(t_n)(α H¹'(kR) + β H²'(kR)) − i p(t_n)(α H¹(kR) + β H²(kR)) = 0
    with t_n = n²/(kR)²; the curvature correction adds H(kR)/(2kR) terms.
    """
    N = mie_terms(k, radius) if n_max is None else n_max
    n = np.arange(0, N + 1)
    ka, kR = k * radius, k * R
    t = n**2 / kR**2
    pv = np.polyval(np.asarray(abc.p, float)[::-1], t)
    qv = np.polyval(np.asarray(abc.q, float)[::-1], t)
    h1a, h2a = ss.hankel1(n, ka), ss.hankel2(n, ka)
    b1 = qv * ss.h1vp(n, kR) - 1j * pv * ss.hankel1(n, kR)
    b2 = qv * ss.h2vp(n, kR) - 1j * pv * ss.hankel2(n, kR)
    if curvature_correction:
        b1 = b1 + ss.hankel1(n, kR) / (2 * kR)
        b2 = b2 + ss.hankel2(n, kR) / (2 * kR)
    jn = ss.jv(n, ka)
    det = h1a * b2 - h2a * b1
    alpha = jn * b2 / det
    beta = -jn * b1 / det
    c = jn / h1a
    return n, alpha, beta, c


def disc_abc_exact(k: float, radius: float, R: float, a, points, abc, curvature_correction: bool = False) -> np.ndarray:
    """Exact solution of the ABC-truncated problem for a disc inside a concentric circle."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    r = np.hypot(pts[:, 0], pts[:, 1])
    if np.any(r < radius * (1 - 1e-12)) or np.any(r > R * (1 + 1e-12)):
        raise ValueError("points must lie in the annulus radius <= r <= R")
    a = np.asarray(a, dtype=float)
    phi = np.arctan2(pts[:, 1], pts[:, 0]) - math.atan2(a[1], a[0])
    n, alpha, beta, _ = disc_abc_modes(k, radius, R, abc, curvature_correction=curvature_correction)
    w = np.where(n == 0, 1.0, 2.0) * (1j**n)
    radial = alpha * ss.hankel1(n[None, :], k * r[:, None]) + beta * ss.hankel2(n[None, :], k * r[:, None])
    return (w[None, :] * radial * np.cos(n[None, :] * phi[:, None])).sum(axis=1)


def disc_abc_relative_error(
    k: float,
    radius: float,
    R: float,
    abc,
    region_radius: float | None = None,
    panels: int | None = None,
    curvature_correction: bool = False,
) -> float:
    """Exact L² relative error between the outgoing and ABC-truncated solutions.

    Integrates mode by mode over radius < r < min(R, region_radius) with
    composite 16-point Gauss-Legendre quadrature (default: about four panels
    per wavelength); the result does not depend on the incident direction.
    """
    r_hi = R if region_radius is None else min(R, region_radius)
    if panels is None:
        panels = max(8, int(math.ceil(4 * k * (r_hi - radius) / (2 * math.pi))))
    x, wg = np.polynomial.legendre.leggauss(16)
    edges = np.linspace(radius, r_hi, panels + 1)
    half = np.diff(edges)[:, None] / 2
    rr = (edges[:-1, None] + half * (x[None, :] + 1)).ravel()
    w = (half * wg[None, :]).ravel() * rr
    n, alpha, beta, c = disc_abc_modes(k, radius, R, abc, curvature_correction=curvature_correction)
    mult = np.where(n == 0, 1.0, 2.0)
    kr = k * rr[:, None]
    h1 = ss.hankel1(n[None, :], kr)
    u = c[None, :] * h1
    v = alpha[None, :] * h1 + beta[None, :] * ss.hankel2(n[None, :], kr)
    num = np.sum(mult[None, :] * w[:, None] * np.abs(u - v) ** 2)
    den = np.sum(mult[None, :] * w[:, None] * np.abs(u) ** 2)
    return float(math.sqrt(num / den))
