import math

import numpy as np
import pytest

from helmabc.exceptions import MeshError
from helmabc.fem import l2_norm, shape_functions, triangle_quadrature
from helmabc.geometry import Circle, Disc, PmlLayer, Scene
from helmabc.meshing import REGION_INTERIOR, generate_mesh, submesh
from helmabc.pade import compute_pade, impedance
from helmabc.pml import (
    PmlConfig,
    assemble_pml,
    default_sigma0,
    disc_abc_exact,
    disc_abc_relative_error,
    mie_disc,
    mie_terms,
    pml_coefficients,
    solve_pml,
    wronskian_defect,
)

A_DIR = np.array([1.0, 0.0])


# --- configuration ----------------------------------------------------------
def test_default_sigma0_damping():
    W = 0.5
    s0 = default_sigma0(W)
    cfg = PmlConfig(2.0, W)
    assert cfg.sigma0 == s0
    assert math.exp(-2 * float(cfg.sigma_integral(2.0 + W))) == pytest.approx(1e-6, rel=1e-12)
    assert cfg.R_outer == 2.5


@pytest.mark.parametrize("kw", [dict(width=0.0), dict(R_inner=-1.0), dict(sigma0=-2.0)])
def test_config_rejects_bad_values(kw):
    base = dict(R_inner=2.0, width=0.5)
    base.update(kw)
    with pytest.raises(ValueError):
        PmlConfig(**base)


def test_coefficients_identity_inside():
    cfg = PmlConfig(2.0, 0.5)
    coef = pml_coefficients(cfg, 10.0)
    rng = np.random.default_rng(0)
    r = rng.uniform(1.0, 2.0, 500)
    t = rng.uniform(0, 2 * math.pi, 500)
    x = np.c_[r * np.cos(t), r * np.sin(t)]
    A, b = coef(x)
    assert np.abs(A - np.eye(2)).max() < 1e-15
    assert np.abs(b - 1).max() == 0


def test_coefficients_in_layer():
    cfg = PmlConfig(2.0, 0.5)
    k = 10.0
    coef = pml_coefficients(cfg, k)
    r = np.linspace(2.05, 2.5, 10)
    x = np.c_[r * math.cos(0.3), r * math.sin(0.3)]
    A, b = coef(x)
    n = x / r[:, None]
    arr = np.einsum("ni,nij,nj->n", n, A, n)
    t = np.c_[-n[:, 1], n[:, 0]]
    aff = np.einsum("ni,nij,nj->n", t, A, t)
    np.testing.assert_allclose(arr * aff, 1.0, atol=1e-14)
    rt = r + 1j / k * cfg.sigma_integral(r)
    d = 1 + 1j * cfg.sigma(r) / k
    np.testing.assert_allclose(b, rt * d / r, rtol=1e-14)
    np.testing.assert_allclose(A, np.swapaxes(A, 1, 2), atol=1e-15)
    assert np.all(b.imag > 0)


# --- Mie series ---------------------------------------------------------------
def test_mie_boundary_trace():
    k = 10.0
    ph = np.linspace(0, 2 * math.pi, 100, endpoint=False)
    pts = np.c_[np.cos(ph), np.sin(ph)]
    a = np.array([math.cos(0.2), math.sin(0.2)])
    assert np.abs(mie_disc(k, 1.0, a, pts) - np.exp(1j * k * pts @ a)).max() < 1e-12


def test_mie_far_field_bounded():
    r = np.linspace(5, 50, 40)
    pts = np.c_[r * math.cos(0.7), r * math.sin(0.7)]
    amp = np.abs(mie_disc(10.0, 1.0, A_DIR, pts)) * np.sqrt(r)
    assert amp.max() / amp.min() < 1.2


def test_mie_radiation_residual_decays():
    k, ang = 10.0, 0.7
    d = np.array([math.cos(ang), math.sin(ang)])

    def residual(R, h=1e-5):
        up, um, u0 = (mie_disc(k, 1.0, A_DIR, (R + s) * d[None])[0] for s in (h, -h, 0.0))
        return abs((up - um) / (2 * h) - 1j * k * u0) * math.sqrt(R)

    assert residual(40.0) / residual(10.0) < 0.3


def test_mie_doubled_truncation():
    k = 10.0
    pts = np.array([[1.0, 0.0], [1.5, 0.5], [-3.0, 2.0], [0.0, -10.0]])
    n = mie_terms(k, 1.0)
    assert np.abs(mie_disc(k, 1.0, A_DIR, pts) - mie_disc(k, 1.0, A_DIR, pts, n_max=2 * n)).max() < 1e-10


def test_mie_rejects_inside_points():
    with pytest.raises(ValueError, match="inside"):
        mie_disc(10.0, 1.0, A_DIR, [[0.5, 0.0]])


def test_wronskian():
    assert wronskian_defect(np.arange(0, mie_terms(40.0, 1.0) + 1), 40.0) < 1e-12


def test_mie_terms_rule():
    assert mie_terms(10.0, 1.0) == math.ceil(10 + 8 * 10 ** (1 / 3) + 20)


# --- separable ABC oracle ---------------------------------------------------------
def test_separable_solution_on_boundaries():
    k, R = 7.0, 2.0
    ph = np.linspace(0, 2 * math.pi, 50, endpoint=False)
    inner = np.c_[np.cos(ph), np.sin(ph)]
    v = disc_abc_exact(k, 1.0, R, A_DIR, inner, impedance())
    np.testing.assert_allclose(v, np.exp(1j * k * inner @ A_DIR), atol=1e-12)
    # impedance condition ∂_r v − ikv = 0 on r = R, one-sided second-order difference
    h = 1e-4
    ring = np.c_[np.cos(ph), np.sin(ph)]

    def v_at(r):
        return disc_abc_exact(k, 1.0, R, A_DIR, r * ring, impedance())

    dv = (3 * v_at(R) - 4 * v_at(R - h) + v_at(R - 2 * h)) / (2 * h)
    assert np.abs(dv - 1j * k * v_at(R)).max() < 1e-5 * k * np.abs(v_at(R)).max()


@pytest.mark.parametrize("pair", [(0, 0), (1, 1)])
def test_relative_error_oracle_two_routes(pair):
    """Mode-wise radial quadrature agrees with brute-force polar quadrature of the two fields."""
    k, R = 5.0, 2.0
    abc = compute_pade(*pair)
    a = np.array([math.cos(0.4), math.sin(0.4)])
    x, w = np.polynomial.legendre.leggauss(60)
    r = 1 + (x + 1) / 2 * (R - 1)
    wr = w * (R - 1) / 2 * r
    ph = np.linspace(0, 2 * math.pi, 256, endpoint=False)
    rr, pp = np.meshgrid(r, ph, indexing="ij")
    pts = np.c_[(rr * np.cos(pp)).ravel(), (rr * np.sin(pp)).ravel()]
    W = np.repeat(wr, 256)
    u = mie_disc(k, 1.0, a, pts)
    v = disc_abc_exact(k, 1.0, R, a, pts, abc)
    brute = math.sqrt(np.sum(W * np.abs(u - v) ** 2) / np.sum(W * np.abs(u) ** 2))
    assert disc_abc_relative_error(k, 1.0, R, abc) == pytest.approx(brute, rel=1e-12)


@pytest.mark.parametrize(
    "k,R,glob,local",
    [
        (20, 2, 0.05255848055510119, 0.05255848055510119),
        (20, 4, 0.012321832691830879, 0.012693057785744605),
        (40, 2, 0.05036051129296354, 0.05036051129296354),
        (40, 4, 0.011438895848446996, 0.011862320769414758),
    ],
)
def test_separable_relative_errors_frozen(k, R, glob, local):
    assert disc_abc_relative_error(k, 1.0, R, impedance()) == pytest.approx(glob, rel=1e-10)
    assert disc_abc_relative_error(k, 1.0, R, impedance(), region_radius=2.0) == pytest.approx(local, rel=1e-10)


def test_separable_error_panel_independent():
    a = disc_abc_relative_error(20, 1.0, 4, impedance())
    b = disc_abc_relative_error(20, 1.0, 4, impedance(), panels=200)
    assert a == pytest.approx(b, rel=1e-12)


# --- PML solves -----------------------------------------------------------------
def _mie_error(sub, values, k):
    def exact(x):
        r = np.hypot(*x.T)
        return mie_disc(k, 1.0, A_DIR, x * np.maximum(1.0, 1.0 / r)[:, None])

    return l2_norm(sub, values, exact=exact) / l2_norm(sub, values)


@pytest.fixture(scope="module")
def pml_k5():
    mesh = generate_mesh(Scene.ball(2.0), 5.0, include_pml=True)
    sub, node_map = submesh(mesh, (REGION_INTERIOR,))
    return mesh, sub, node_map


def test_pml_vs_mie_k5(pml_k5):
    mesh, sub, node_map = pml_k5
    sol = solve_pml(mesh, 5.0, PmlConfig(2.0, 0.5), A_DIR)
    assert sol.meta["residual"] < 1e-10
    assert _mie_error(sub, sol.values[node_map], 5.0) < 0.01
    dn = mesh.nodes_with_tag("GammaD")
    np.testing.assert_array_equal(sol.values[dn], np.exp(1j * 5.0 * mesh.points[dn] @ A_DIR))
    on = mesh.nodes_with_tag("GammaOuter")
    assert np.all(sol.values[on] == 0)


def test_pml_sigma_doubling_k5(pml_k5):
    mesh, sub, node_map = pml_k5
    u1 = solve_pml(mesh, 5.0, PmlConfig(2.0, 0.5), A_DIR).values[node_map]
    u2 = solve_pml(mesh, 5.0, PmlConfig(2.0, 0.5, 2 * default_sigma0(0.5)), A_DIR).values[node_map]
    assert l2_norm(sub, u1 - u2) / l2_norm(sub, u1) < 0.005


def test_pml_moved_outward():
    # the two meshes differ, so bound the change by the triangle inequality through the Mie series
    k = 5.0
    errs = []
    for R_in in (2.0, 2.25):
        mesh = generate_mesh(Scene(Disc((0, 0), 1.0), Circle(2.0), PmlLayer(R_in, 0.5)), k, include_pml=True)
        sub, node_map = submesh(mesh, (REGION_INTERIOR,))
        sol = solve_pml(mesh, k, PmlConfig(R_in, 0.5), A_DIR)
        errs.append(_mie_error(sub, sol.values[node_map], k))
    assert sum(errs) < 0.005


def test_pml_needs_outer_boundary():
    mesh = generate_mesh(Scene.ball(2.0), 3.0, C=1.0)
    with pytest.raises(MeshError, match="GammaOuter"):
        assemble_pml(mesh, 3.0, PmlConfig(2.0, 0.5), A_DIR)


def test_pml_system_symmetric(pml_k5):
    mesh, _, _ = pml_k5
    sysm = assemble_pml(mesh, 5.0, PmlConfig(2.0, 0.5), A_DIR)
    assert abs(sysm.matrix - sysm.matrix.T).max() < 1e-12
    assert sysm.meta["sigma0"] == default_sigma0(0.5)


def test_quadrature_points_inside_layer_only_modified(pml_k5):
    mesh, _, _ = pml_k5
    xi, _ = triangle_quadrature()
    N, _ = shape_functions(2, xi)
    interior = mesh.elements[mesh.regions == REGION_INTERIOR]
    xq = np.einsum("qb,ebi->eqi", N, mesh.points[interior]).reshape(-1, 2)
    A, b = pml_coefficients(PmlConfig(2.0, 0.5), 5.0)(xq)
    assert np.abs(A - np.eye(2)).max() < 1e-15 and np.all(b == 1)
