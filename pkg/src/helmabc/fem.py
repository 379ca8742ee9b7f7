"""Finite element solver for the truncated exterior Helmholtz problem.

Unknowns are the volume field v (P1 or P2, isoparametric) and, for ABCs
with a non-constant denominator, an auxiliary field λ on Γ_tr holding
k⁻¹∂_n v.  With the complex-symmetric (unconjugated) pairing the system is

    S v − k B₀ λ          = F        (volume rows, S = K − k²M)
    −i B_p v + B_q λ      = G        (Γ_tr rows)

where ``B_c = Σ_j c_j k^(−2j) ∫ ∂_s^j u ∂_s^j μ ds`` and B₀ is the boundary
mass matrix.  When q is constant the second row is solved for λ exactly and
substituted, leaving the symmetric system (S − ik/q₀ B_p) v = F + k/q₀ G.
Dirichlet nodes on Γ_D are fixed by nodal interpolation and eliminated.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from helmabc.exceptions import MeshError
from helmabc.linsolve import solve_sparse
from helmabc.meshing import Mesh
from helmabc.pade import PadeAbc, admissibility_check, impedance

__all__ = [
    "AbcProblem",
    "LinearSystem",
    "FieldSolution",
    "triangle_quadrature",
    "shape_functions",
    "assemble_volume",
    "assemble_boundary",
    "assemble",
    "solve",
    "solve_abc",
    "l2_norm",
    "relative_error",
    "plane_wave",
    "plane_wave_abc_data",
    "manufactured_plane_wave",
    "direction_from_angle",
]

_CHUNK = 100_000


# ---------------------------------------------------------------------------
# Reference element
# ---------------------------------------------------------------------------
def triangle_quadrature():
    """7-point degree-5 rule on the reference triangle (weights sum to 1/2)."""
    s15 = math.sqrt(15.0)
    a1, a2 = (6 - s15) / 21, (6 + s15) / 21
    w1, w2 = (155 - s15) / 1200, (155 + s15) / 1200
    pts = np.array(
        [
            [1 / 3, 1 / 3],
            [a1, a1], [1 - 2 * a1, a1], [a1, 1 - 2 * a1],
            [a2, a2], [1 - 2 * a2, a2], [a2, 1 - 2 * a2],
        ]
    )
    w = 0.5 * np.array([9 / 40, w1, w1, w1, w2, w2, w2])
    return pts, w


def shape_functions(order: int, xi: np.ndarray):
    """Values (nq, nb) and reference gradients (nq, nb, 2) of Lagrange basis functions."""
    x, y = xi[:, 0], xi[:, 1]
    l1, l2, l3 = 1 - x - y, x, y
    if order == 1:
        N = np.column_stack([l1, l2, l3])
        G = np.tile(np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]), (len(x), 1, 1))
        return N, G
    N = np.column_stack([l1 * (2 * l1 - 1), l2 * (2 * l2 - 1), l3 * (2 * l3 - 1), 4 * l1 * l2, 4 * l2 * l3, 4 * l3 * l1])
    dl = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])  # gradients of l1, l2, l3
    L = np.column_stack([l1, l2, l3])
    G = np.empty((len(x), 6, 2))
    for i in range(3):
        G[:, i, :] = (4 * L[:, i] - 1)[:, None] * dl[i]
    for m, (i, j) in enumerate([(0, 1), (1, 2), (2, 0)]):
        G[:, 3 + m, :] = 4 * (L[:, i][:, None] * dl[j] + L[:, j][:, None] * dl[i])
    return N, G


def _edge_quadrature(order: int, npts: int = 4):
    t, w = np.polynomial.legendre.leggauss(npts)
    t, w = 0.5 * (t + 1), 0.5 * w
    if order == 1:
        N = np.column_stack([1 - t, t])
        dN = np.tile([-1.0, 1.0], (npts, 1))
    else:
        N = np.column_stack([(1 - t) * (1 - 2 * t), t * (2 * t - 1), 4 * t * (1 - t)])
        dN = np.column_stack([4 * t - 3, 4 * t - 1, 4 - 8 * t])
    return N, dN, w


def _geometry(mesh: Mesh, elems: np.ndarray, N, G):
    X = mesh.points[elems]  # (ne, nb, 2)
    J = np.einsum("ebi,qbj->eqij", X, G)
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    inv = np.empty_like(J)
    inv[..., 0, 0] = J[..., 1, 1] / det
    inv[..., 1, 1] = J[..., 0, 0] / det
    inv[..., 0, 1] = -J[..., 0, 1] / det
    inv[..., 1, 0] = -J[..., 1, 0] / det
    grads = np.einsum("qbj,eqji->eqbi", G, inv)  # ∇φ = J^{-T} ∇_ξ φ
    xq = np.einsum("qb,ebi->eqi", N, X)
    return xq, det, grads


def _to_csr(rows, cols, vals, n):
    return sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n))


# ---------------------------------------------------------------------------
# Volume and boundary operators
# ---------------------------------------------------------------------------
CoefFn = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]


def assemble_volume(mesh: Mesh, k: float, coefficient: CoefFn | None = None, coef_regions=(2,), with_mass: bool = True):
    """Return (S, M) with S = ∫ (A∇u)·∇w − k² ∫ b u w and M = ∫ u w.

    M is None when ``with_mass`` is false.

    ``coefficient(xq)`` returns ``(A, b)`` at quadrature points of shape
    (..., 2, 2) and (...); it is only evaluated on elements whose region is in
    ``coef_regions``.  Elsewhere A = I and b = 1 exactly.
    """
    xi, w = triangle_quadrature()
    N, G = shape_functions(mesh.order, xi)
    n = mesh.n_nodes
    S = sp.csr_matrix((n, n), dtype=complex)
    M = sp.csr_matrix((n, n), dtype=float) if with_mass else None
    for a in range(0, mesh.n_elements, _CHUNK):
        elems = mesh.elements[a : a + _CHUNK]
        xq, det, grads = _geometry(mesh, elems, N, G)
        if np.any(det <= 0):
            raise MeshError("non-positive Jacobian in an element (inverted or badly curved)")
        dw = det * w
        mloc = np.einsum("eq,qa,qb->eab", dw, N, N)
        kloc = np.einsum("eq,eqai,eqbi->eab", dw, grads, grads).astype(complex)
        sloc = kloc - k**2 * mloc
        if coefficient is not None:
            sel = np.isin(mesh.regions[a : a + _CHUNK], list(coef_regions))
            if np.any(sel):
                A, b = coefficient(xq[sel])
                ka = np.einsum("eq,eqai,eqij,eqbj->eab", dw[sel], grads[sel], A, grads[sel])
                ma = np.einsum("eq,eq,qa,qb->eab", dw[sel], b, N, N)
                sloc[sel] = ka - k**2 * ma
        rows = np.repeat(elems[:, :, None], elems.shape[1], axis=2)
        cols = np.repeat(elems[:, None, :], elems.shape[1], axis=1)
        S = S + _to_csr(rows, cols, sloc, n)
        if with_mass:
            M = M + _to_csr(rows, cols, mloc, n)
        del rows, cols, sloc, kloc, mloc, grads
    return S, M


def assemble_boundary(mesh: Mesh, edges: np.ndarray, weight: Callable[[np.ndarray], np.ndarray] | None = None):
    """Boundary mass ∫ c u μ ds and tangential stiffness ∫ ∂_s u ∂_s μ ds over the given edges.

    ``weight`` gives c at quadrature points (default c = 1).
    """
    N, dN, w = _edge_quadrature(mesh.order)
    X = mesh.points[edges]  # (nbe, nb, 2)
    dx = np.einsum("qb,ebi->eqi", dN, X)
    jac = np.linalg.norm(dx, axis=2)  # |x'(t)|
    mw = jac * w
    if weight is not None:
        xq = np.einsum("qb,ebi->eqi", N, X)
        mw = mw * np.asarray(weight(xq.reshape(-1, 2)), dtype=float).reshape(jac.shape)
    mloc = np.einsum("eq,qa,qb->eab", mw, N, N)
    sloc = np.einsum("eq,qa,qb->eab", w / jac, dN, dN)
    n = mesh.n_nodes
    rows = np.repeat(edges[:, :, None], edges.shape[1], axis=2)
    cols = np.repeat(edges[:, None, :], edges.shape[1], axis=1)
    return _to_csr(rows, cols, mloc, n), _to_csr(rows, cols, sloc, n)


def boundary_load(mesh: Mesh, edges: np.ndarray, g: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """∫ g μ ds for every node (zero away from ``edges``)."""
    N, dN, w = _edge_quadrature(mesh.order)
    X = mesh.points[edges]
    xq = np.einsum("qb,ebi->eqi", N, X)
    jac = np.linalg.norm(np.einsum("qb,ebi->eqi", dN, X), axis=2)
    gv = np.asarray(g(xq.reshape(-1, 2)), dtype=complex).reshape(jac.shape)
    loc = np.einsum("eq,eq,qa->ea", gv, jac * w, N)
    out = np.zeros(mesh.n_nodes, dtype=complex)
    np.add.at(out, edges.ravel(), loc.ravel())
    return out


def volume_load(mesh: Mesh, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    xi, w = triangle_quadrature()
    N, G = shape_functions(mesh.order, xi)
    out = np.zeros(mesh.n_nodes, dtype=complex)
    for a in range(0, mesh.n_elements, _CHUNK):
        elems = mesh.elements[a : a + _CHUNK]
        xq, det, _ = _geometry(mesh, elems, N, G)
        fv = np.asarray(f(xq.reshape(-1, 2)), dtype=complex).reshape(det.shape)
        loc = np.einsum("eq,eq,qa->ea", fv, det * w, N)
        np.add.at(out, elems.ravel(), loc.ravel())
    return out


# ---------------------------------------------------------------------------
# Problem description
# ---------------------------------------------------------------------------
def direction_from_angle(angle: float) -> np.ndarray:
    return np.array([math.cos(angle), math.sin(angle)])


def plane_wave(k: float, a) -> Callable[[np.ndarray], np.ndarray]:
    a = np.asarray(a, dtype=float)

    def g(x):
        x = np.asarray(x, dtype=float)
        return np.exp(1j * k * (x @ a))

    return g


@dataclass
class AbcProblem:
    """Exterior Dirichlet problem truncated with a Padé-family ABC.

    Parameters
    ----------
    k : float
        Wavenumber.
    a : array_like
        Unit incident direction; Dirichlet data defaults to ``exp(ik x·a)``.
    abc : PadeAbc
        Boundary condition on Γ_tr; only (0,0), (1,0) and (1,1) shapes are
        supported by the FEM.
    f, g_D, g_I : callable, optional
        Volume source, Dirichlet data and ABC right-hand side, each a
        function of an (n, 2) array of points.
    curvature_correction : bool
        Impedance only: use ∂_n v − ikv + (κ/2) v = 0, κ the curvature of
        Γ_tr (1/R on a circle).
    """

    k: float
    a: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0]))
    abc: PadeAbc = field(default_factory=impedance)
    f: Callable | None = None
    g_D: Callable | None = None
    g_I: Callable | None = None
    curvature_correction: bool = False

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        if self.k <= 0:
            raise ValueError("k must be positive")
        if abs(np.linalg.norm(self.a) - 1) > 1e-12:
            raise ValueError("incident direction must be a unit vector")
        if self.abc.M > 1 or self.abc.N > 1:
            raise ValueError(
                f"FEM supports ABCs with M, N <= 1 only; got {self.abc.label}"
            )
        if self.curvature_correction and (self.abc.M, self.abc.N) != (0, 0):
            raise ValueError("the curvature correction applies to the impedance condition only")
        if not admissibility_check(self.abc).passed:
            raise ValueError(f"ABC {self.abc.label} is not admissible")
        if self.g_D is None:
            self.g_D = plane_wave(self.k, self.a)


@dataclass
class LinearSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    symmetric: bool
    mesh: Mesh
    free: np.ndarray  # free volume node ids
    dirichlet: np.ndarray  # Dirichlet node ids
    dirichlet_values: np.ndarray
    lam_nodes: np.ndarray  # Γ_tr nodes carrying λ (empty when eliminated)
    k: float
    meta: dict = field(default_factory=dict)
    # λ recovery when eliminated: λ = (i B_p v + G)/q0 solved against boundary mass
    _recover: Callable | None = field(default=None, repr=False)

    @property
    def n_dofs(self) -> int:
        return self.matrix.shape[0]


@dataclass
class FieldSolution:
    mesh: Mesh
    values: np.ndarray
    k: float
    lam: np.ndarray | None = None
    lam_nodes: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def restrict(self, sub: Mesh, node_map: np.ndarray) -> "FieldSolution":
        return FieldSolution(sub, self.values[node_map], self.k, meta=dict(self.meta))


def _check_abc_mesh(mesh: Mesh):
    if mesh.regions is not None and np.any(mesh.regions != 0):
        raise MeshError("ABC problems need a mesh of the computational domain only (use submesh)")
    for tag in ("GammaD", "GammaTr"):
        if not np.any(mesh.boundary_tags == tag):
            raise MeshError(f"mesh has no {tag} edges")
    if np.any(mesh.boundary_tags == "GammaOuter"):
        raise MeshError("mesh/scene mismatch: GammaOuter edges present in an ABC mesh")
    mesh.validate()


def assemble(problem: AbcProblem, mesh: Mesh, validate: bool = True) -> LinearSystem:
    """Assemble the ABC system, eliminating λ when q is constant."""
    t0 = time.perf_counter()
    if validate:
        _check_abc_mesh(mesh)
    k, abc = problem.k, problem.abc
    S, _ = assemble_volume(mesh, k, with_mass=False)
    if problem.f is not None:
        F = volume_load(mesh, problem.f)
    else:
        F = np.zeros(mesh.n_nodes, dtype=complex)
    tr_edges = mesh.edges_with_tag("GammaTr")
    B0, B1 = assemble_boundary(mesh, tr_edges)
    p = list(abc.p) + [0.0] * (2 - len(abc.p))
    q = list(abc.q) + [0.0] * (2 - len(abc.q))
    Bp = p[0] * B0 + p[1] * k**-2 * B1
    Bq = q[0] * B0 + q[1] * k**-2 * B1
    G = boundary_load(mesh, tr_edges, problem.g_I) if problem.g_I is not None else np.zeros(mesh.n_nodes, complex)

    dnodes = mesh.nodes_with_tag("GammaD")
    gd = problem.g_D(mesh.points[dnodes])
    is_d = np.zeros(mesh.n_nodes, bool)
    is_d[dnodes] = True
    free = np.flatnonzero(~is_d)
    n_nodes = mesh.n_nodes

    if abc.N == 0:
        A = S - (1j * k / q[0]) * Bp
        if problem.curvature_correction:
            tr = mesh.scene.truncation if mesh.scene is not None else None
            if tr is None or not hasattr(tr, "curvature_at"):
                raise ValueError("the curvature correction needs the mesh's scene")
            Bk, _ = assemble_boundary(mesh, tr_edges, lambda x: 0.5 * tr.curvature_at(x))
            A = A + Bk
        A = A.tocsr()
        b = F + (k / q[0]) * G
        Aff = A[free][:, free]
        rhs = b[free] - A[free][:, dnodes] @ gd
        lam_nodes = np.zeros(0, dtype=np.int64)
        symmetric = True
    else:
        lam_nodes = np.unique(tr_edges)
        nl = len(lam_nodes)
        P = sp.csr_matrix((np.ones(nl), (lam_nodes, np.arange(nl))), shape=(n_nodes, nl))
        Kvl = -k * (B0 @ P)
        Klv = -1j * (P.T @ Bp)
        Kll = P.T @ Bq @ P
        A = sp.bmat([[S, Kvl], [Klv, Kll]], format="csr")
        b = np.r_[F, P.T @ G]
        keep = np.r_[free, n_nodes + np.arange(nl)]
        Aff = A[keep][:, keep]
        rhs = b[keep] - A[keep][:, dnodes] @ gd
        symmetric = False
    meta = {"assembly_time": time.perf_counter() - t0, "abc": abc.label, "a": problem.a.tolist()}
    return LinearSystem(Aff.tocsr(), rhs, symmetric, mesh, free, dnodes, gd, lam_nodes, k, meta)


def solve(system: LinearSystem, check_residual: float = 1e-10) -> FieldSolution:
    """Direct sparse solve; raises SolverError if the residual exceeds ``check_residual``."""
    t0 = time.perf_counter()
    x, info = solve_sparse(system.matrix, system.rhs, symmetric=system.symmetric, check_residual=check_residual)
    mesh = system.mesh
    v = np.empty(mesh.n_nodes, dtype=complex)
    v[system.dirichlet] = system.dirichlet_values
    nf = len(system.free)
    v[system.free] = x[:nf]
    lam = x[nf:] if len(system.lam_nodes) else None
    meta = dict(system.meta)
    meta.update(
        solve_time=time.perf_counter() - t0,
        residual=info["residual"],
        backend=info["backend"],
        dofs=system.n_dofs,
    )
    return FieldSolution(mesh, v, system.k, lam, system.lam_nodes if lam is not None else None, meta)


def solve_abc(problem: AbcProblem, mesh: Mesh) -> FieldSolution:
    return solve(assemble(problem, mesh))


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------
def _region_mask(region) -> Callable[[np.ndarray], np.ndarray] | None:
    if region is None or region == "all":
        return None
    if isinstance(region, tuple) and region[0] == "ball":
        _, center, radius = region
        c = np.asarray(center, dtype=float)

        def mask(x):
            return np.linalg.norm(x - c, axis=-1) <= radius

        return mask
    raise ValueError(f"unknown region {region!r}; use 'all' or ('ball', center, radius)")


def l2_norm(mesh: Mesh, values: np.ndarray, region="all", exact: Callable | None = None) -> float:
    """L² norm of a nodal field, with quadrature-point masking for ball regions.

    With ``exact`` given, returns the norm of (field − exact) using exact
    values at quadrature points.
    """
    mask = _region_mask(region)
    xi, w = triangle_quadrature()
    N, G = shape_functions(mesh.order, xi)
    total = 0.0
    for a in range(0, mesh.n_elements, _CHUNK):
        elems = mesh.elements[a : a + _CHUNK]
        xq, det, _ = _geometry(mesh, elems, N, G)
        uq = np.einsum("qb,eb->eq", N, values[elems])
        if exact is not None:
            uq = uq - np.asarray(exact(xq.reshape(-1, 2))).reshape(uq.shape)
        wq = det * w
        if mask is not None:
            wq = wq * mask(xq)
        total += float(np.sum(wq * np.abs(uq) ** 2))
    return math.sqrt(total)


def _same_mesh(a: Mesh, b: Mesh) -> bool:
    if a is b:
        return True
    return (
        a.points.shape == b.points.shape
        and a.elements.shape == b.elements.shape
        and np.array_equal(a.elements, b.elements)
        and np.allclose(a.points, b.points, rtol=0, atol=1e-14)
    )


def relative_error(u_ref: FieldSolution, v: FieldSolution, region="all") -> float:
    """‖u_ref − v‖ / ‖u_ref‖ in L² over the mesh (optionally intersected with a ball)."""
    if not _same_mesh(u_ref.mesh, v.mesh):
        raise MeshError("relative_error needs both solutions on the same mesh")
    num = l2_norm(u_ref.mesh, u_ref.values - v.values, region)
    den = l2_norm(u_ref.mesh, u_ref.values, region)
    if den == 0:
        raise ValueError("reference field has zero norm on the region")
    return num / den


# ---------------------------------------------------------------------------
# Manufactured plane-wave data on a circle
# ---------------------------------------------------------------------------
def plane_wave_abc_data(k: float, a, R: float, abc: PadeAbc) -> Callable[[np.ndarray], np.ndarray]:
    """g_I = q(−k⁻²Δ_Γ)(k⁻¹∂_n u) − i p(−k⁻²Δ_Γ)u for u = exp(ik x·a) on the circle of radius R.

    Tangential derivatives are taken analytically in the polar angle; points
    are located on the circle by their polar angle.
    """
    a = np.asarray(a, dtype=float)
    phi_a = math.atan2(a[1], a[0])
    beta = k * R
    p = list(abc.p) + [0.0] * (2 - len(abc.p))
    q = list(abc.q) + [0.0] * (2 - len(abc.q))

    def g(x):
        phi = np.arctan2(x[:, 1], x[:, 0])
        c, s = np.cos(phi - phi_a), np.sin(phi - phi_a)
        u = np.exp(1j * beta * c)
        d2u = (-1j * beta * c - beta**2 * s**2) * u
        f = 1j * c * u  # k⁻¹ ∂_r u
        d2f = (-1j * c + beta * (c**2 - s**2) - beta * s**2 - 1j * beta**2 * c * s**2) * u
        scale = 1.0 / (k * R) ** 2
        qf = q[0] * f - q[1] * scale * d2f
        pu = p[0] * u - p[1] * scale * d2u
        return qf - 1j * pu

    return g


def manufactured_plane_wave(k: float, a, mesh: Mesh, abc: PadeAbc | None = None, R: float | None = None):
    """Solve with data for which the exact solution is the plane wave itself.

    Returns ``(solution, relative L² error against the plane wave)``.
    """
    abc = impedance() if abc is None else abc
    if R is None:
        R = float(np.median(np.hypot(*mesh.points[mesh.nodes_with_tag("GammaTr")].T)))
    u = plane_wave(k, a)
    prob = AbcProblem(k, np.asarray(a, float), abc, g_D=u, g_I=plane_wave_abc_data(k, a, R, abc))
    sol = solve_abc(prob, mesh)
    err = l2_norm(mesh, sol.values, exact=u) / l2_norm(mesh, u(mesh.points))
    return sol, err
