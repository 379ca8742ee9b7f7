"""Tagged triangulations of the truncated exterior domain.

Meshes are built from a hexagonal lattice at spacing ``0.85 h`` clipped to
the domain, boundary curves resampled at the same spacing, a constrained
Delaunay triangulation (``triangle``), three Laplacian sweeps on interior
nodes, and midpoint insertion on any edge still longer than ``h``.  P2 meshes
add edge midpoints; midpoints of edges lying on a curved boundary are
projected onto the exact curve (isoparametric elements).

Region ids: 0 is the computational domain inside the truncation boundary,
1 the buffer between the truncation boundary and the PML, 2 the PML.
"""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from helmabc.exceptions import MeshError, MeshParseError
from helmabc.geometry import Circle, Scene

log = logging.getLogger(__name__)

__all__ = [
    "TAGS",
    "Mesh",
    "mesh_size",
    "generate_mesh",
    "export_mesh",
    "import_mesh",
    "submesh",
    "element_angles",
]

TAGS = ("GammaD", "GammaTr", "GammaOuter")
REGION_INTERIOR, REGION_BUFFER, REGION_PML = 0, 1, 2

_LATTICE_FACTOR = 0.85
_MIN_ANGLE_Q = 25


def mesh_size(k: float, C: float, p: int) -> float:
    """h = C k^(-1 - 1/(2p))."""
    return C * k ** (-1.0 - 1.0 / (2 * p))


@dataclass
class Mesh:
    """Triangulation with P1 (3-node) or P2 (6-node) elements.

    Node ordering for P2 elements is (v0, v1, v2, m01, m12, m20).  Boundary
    edges store (a, b) or (a, b, mid) node indices with a tag in ``TAGS``.
    """

    points: np.ndarray
    elements: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    h_target: float
    regions: np.ndarray | None = None
    scene: Scene | None = field(default=None, repr=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.elements = np.asarray(self.elements, dtype=np.int64)
        self.boundary_edges = np.asarray(self.boundary_edges, dtype=np.int64).reshape(-1, self.elements.shape[1] // 3 + 1)
        self.boundary_tags = np.asarray(self.boundary_tags, dtype="<U10")
        if self.regions is None:
            self.regions = np.zeros(len(self.elements), dtype=np.int64)
        self.regions = np.asarray(self.regions, dtype=np.int64)

    @property
    def order(self) -> int:
        return 2 if self.elements.shape[1] == 6 else 1

    @property
    def n_nodes(self) -> int:
        return len(self.points)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def vertex_elements(self) -> np.ndarray:
        return self.elements[:, :3]

    def vertex_ids(self) -> np.ndarray:
        return np.unique(self.vertex_elements)

    def edges(self) -> np.ndarray:
        t = self.vertex_elements
        e = np.sort(np.r_[t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=1)
        return np.unique(e, axis=0)

    def signed_areas(self) -> np.ndarray:
        p = self.points[self.vertex_elements]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def max_diameter(self) -> float:
        p = self.points[self.vertex_elements]
        return float(np.max(np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)))

    def euler_characteristic(self) -> int:
        return len(self.vertex_ids()) - len(self.edges()) + self.n_elements

    def edges_with_tag(self, tag: str) -> np.ndarray:
        return self.boundary_edges[self.boundary_tags == tag]

    def nodes_with_tag(self, tag: str) -> np.ndarray:
        return np.unique(self.edges_with_tag(tag))

    def validate(self) -> None:
        """Raise MeshError unless the mesh is conforming, oriented and fully tagged."""
        n = self.n_nodes
        if self.elements.size and (self.elements.min() < 0 or self.elements.max() >= n):
            raise MeshError("element node index out of range")
        area = self.signed_areas()
        if np.any(area <= 1e-14 * self.h_target**2):
            raise MeshError(f"{np.count_nonzero(area <= 1e-14 * self.h_target**2)} degenerate or inverted elements")
        bad = set(np.unique(self.boundary_tags)) - set(TAGS)
        if bad:
            raise MeshError(f"unknown boundary tags {sorted(bad)}")
        t = self.vertex_elements
        e = np.sort(np.r_[t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=1)
        key = e[:, 0] * n + e[:, 1]
        uniq, counts = np.unique(key, return_counts=True)
        if np.any(counts > 2):
            raise MeshError("non-conforming mesh: an edge is shared by more than two elements")
        be = np.sort(self.boundary_edges[:, :2], axis=1)
        bkey = be[:, 0] * n + be[:, 1]
        if len(np.unique(bkey)) != len(bkey):
            raise MeshError("boundary edge listed twice")
        if not np.all(np.isin(bkey, uniq)):
            raise MeshError("dangling boundary edge (not an element edge)")
        exterior = uniq[counts == 1]
        untagged = np.setdiff1d(exterior, bkey)
        if len(untagged):
            raise MeshError(f"{len(untagged)} exterior edges carry no tag")


def element_angles(points: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Interior angles (degrees), shape (n_elements, 3)."""
    out = []
    for q in range(3):
        u = points[tri[:, (q + 1) % 3]] - points[tri[:, q]]
        v = points[tri[:, (q + 2) % 3]] - points[tri[:, q]]
        c = np.sum(u * v, axis=1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        out.append(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))
    return np.column_stack(out)


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------
def _components(scene: Scene, include_pml: bool):
    """Boundary curves as (shape, tag or None, closed curve object)."""
    comps = [(scene.obstacle, "GammaD"), (scene.truncation, "GammaTr")]
    if include_pml:
        if scene.pml is None:
            raise MeshError("include_pml requested but the scene has no PML")
        inner = Circle(scene.pml.inner_radius)
        if not (isinstance(scene.truncation, Circle) and abs(scene.truncation.R - inner.R) < 1e-12):
            comps.append((inner, None))
        comps.append((Circle(scene.pml.inner_radius + scene.pml.width), "GammaOuter"))
    return comps


def _inside_domain(scene: Scene, include_pml: bool, pts: np.ndarray, margin: float) -> np.ndarray:
    keep = np.ones(len(pts), dtype=bool)
    for a in range(0, len(pts), 20000):
        chunk = pts[a : a + 20000]
        ok = _cheap_outside(scene.obstacle, chunk, margin)
        if include_pml:
            ok &= np.hypot(chunk[:, 0], chunk[:, 1]) < scene.outer_radius - margin
        else:
            ok &= scene.truncation.signed_distance(chunk) < -margin
        keep[a : a + 20000] = ok
    return keep


def _cheap_outside(obstacle, pts: np.ndarray, margin: float) -> np.ndarray:
    # only a coarse inside/outside test is needed; the KD-tree filter handles the margin
    if hasattr(obstacle, "rho"):
        th = np.arctan2(pts[:, 1], pts[:, 0])
        return np.hypot(pts[:, 0], pts[:, 1]) > obstacle.rho(th)
    return obstacle.signed_distance(pts) > margin


def _lattice(radius: float, s: float) -> np.ndarray:
    dy = s * math.sqrt(3) / 2
    ny, nx = int(radius / dy) + 2, int(radius / s) + 2
    j, i = np.mgrid[-ny : ny + 1, -nx : nx + 1]
    return np.column_stack([((i + 0.5 * (j % 2)) * s).ravel(), (j * dy).ravel()])


def _smooth(P, T, free, hmax=math.inf, sweeps=3):
    E = np.unique(np.sort(np.r_[T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]], axis=1), axis=0)
    adj = sp.coo_matrix(
        (np.ones(2 * len(E)), (np.r_[E[:, 0], E[:, 1]], np.r_[E[:, 1], E[:, 0]])), shape=(len(P),) * 2
    ).tocsr()
    deg = np.asarray(adj.sum(axis=1)).ravel()
    for _ in range(sweeps):
        old = P.copy()
        new = (adj @ P) / deg[:, None]
        P[free] = new[free]
        # undo moves that invert or badly distort an element
        bad = element_angles(P, T).min(axis=1) < 20.0
        bad_old = element_angles(old, T).min(axis=1) < 20.0
        revert = np.zeros(len(P), dtype=bool)
        revert[T[bad & ~bad_old].ravel()] = True
        # and moves that stretch an edge beyond the target size
        L_new = np.linalg.norm(P[E[:, 0]] - P[E[:, 1]], axis=1)
        L_old = np.linalg.norm(old[E[:, 0]] - old[E[:, 1]], axis=1)
        revert[E[(L_new > hmax) & (L_old <= hmax)].ravel()] = True
        area = _areas(P, T)
        revert[T[area <= 0].ravel()] = True
        P[revert & free] = old[revert & free]
    return P, E


def _areas(P, T):
    d1, d2 = P[T[:, 1]] - P[T[:, 0]], P[T[:, 2]] - P[T[:, 0]]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def generate_mesh(
    scene: Scene,
    k: float,
    C: float = 2 * math.pi / 5,
    p: int = 2,
    include_pml: bool = False,
    h: float | None = None,
    max_iterations: int = 12,
) -> Mesh:
    """Mesh the truncated domain (and optionally the buffer and PML annulus).

    Parameters
    ----------
    scene : Scene
    k : float
        Wavenumber; sets ``h = C k^(-1 - 1/(2p))`` unless ``h`` is given.
    C : float
        Mesh constant.
    p : int
        Element order, 1 or 2.
    include_pml : bool
        Also mesh the region between the truncation boundary and the outer PML circle.

    Raises
    ------
    MeshError
        If the obstacle-truncation gap is below 3h or generation fails.
    """
    import triangle

    if k <= 0 or C <= 0:
        raise MeshError("k and C must be positive")
    if p not in (1, 2):
        raise MeshError("element order must be 1 or 2")
    if h is None:
        h = mesh_size(k, C, p)
    if scene.gap < 3 * h:
        raise MeshError(
            f"obstacle-truncation gap {scene.gap:.4g} is below 3h = {3 * h:.4g}; use a smaller mesh constant C"
        )
    s = _LATTICE_FACTOR * h
    comps = _components(scene, include_pml)

    bpts, segs, seg_tag = [], [], []
    offset = 0
    for shape, tag in comps:
        pts = shape.sample(s)
        n = len(pts)
        bpts.append(pts)
        idx = np.arange(n) + offset
        segs.append(np.column_stack([idx, np.roll(idx, -1)]))
        seg_tag += [tag] * n
        offset += n
    B = np.vstack(bpts)
    S = np.vstack(segs)
    nB = len(B)

    radius = scene.outer_radius if include_pml else scene.truncation.max_radius
    X = _lattice(radius, s)
    X = X[_inside_domain(scene, include_pml, X, 0.5 * s)]
    d, _ = cKDTree(B).query(X)
    X = X[d > 0.6 * s]
    V = np.vstack([B, X])
    hole = scene.obstacle.interior_point()

    for _ in range(max_iterations):
        tri = triangle.triangulate({"vertices": V, "segments": S, "holes": [hole]}, f"pq{_MIN_ANGLE_Q}YY")
        P = tri["vertices"].copy()
        T = tri["triangles"].astype(np.int64)
        if not np.allclose(P[:nB], B):
            raise MeshError("triangulator moved boundary nodes")
        free = np.ones(len(P), dtype=bool)
        free[:nB] = False
        P, E = _smooth(P, T, free, h)
        L = np.linalg.norm(P[E[:, 0]] - P[E[:, 1]], axis=1)
        long = L > h
        log.debug("mesh pass: %d nodes, %d edges longer than h", len(P), int(long.sum()))
        if not long.any():
            break
        V = np.vstack([P, 0.5 * (P[E[long, 0]] + P[E[long, 1]])])
    else:
        raise MeshError(f"mesh refinement did not reach h = {h:.4g} in {max_iterations} passes")

    area = _areas(P, T)
    flip = area < 0
    T[flip] = T[flip][:, [0, 2, 1]]

    # tags from the constructed segments
    seg_tag = np.array([t if t is not None else "" for t in seg_tag], dtype="<U10")
    tagged = seg_tag != ""
    bedges, btags = S[tagged], seg_tag[tagged]

    # regions by centroid
    cen = P[T].mean(axis=1)
    regions = np.zeros(len(T), dtype=np.int64)
    if include_pml:
        outside_tr = scene.truncation.signed_distance(cen) > 0
        regions[outside_tr] = REGION_BUFFER
        regions[np.hypot(cen[:, 0], cen[:, 1]) > scene.pml.inner_radius] = REGION_PML

    mesh = Mesh(P, T, bedges, btags, h, regions, scene)
    if p == 2:
        mesh = _to_p2(mesh, comps)
    return mesh


def _to_p2(mesh: Mesh, comps) -> Mesh:
    P, T = mesh.points, mesh.elements
    n = len(P)
    local = np.r_[T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]]
    key = np.sort(local, axis=1)
    edges, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.ravel()
    mids = 0.5 * (P[edges[:, 0]] + P[edges[:, 1]])
    ne = len(T)
    mid_ids = n + inv.reshape(3, ne).T
    elements = np.column_stack([T, mid_ids])

    # project midpoints of edges lying on curves; includes internal interfaces
    lookup = {tuple(e): i for i, e in enumerate(edges)}
    bmid = np.array([lookup[tuple(sorted(e))] for e in mesh.boundary_edges[:, :2]], dtype=np.int64)
    tag_shape = {tag: shape for shape, tag in comps if tag is not None}
    for tag, shape in tag_shape.items():
        sel = bmid[mesh.boundary_tags == tag]
        if len(sel):
            mids[sel] = shape.project(mids[sel])
    for shape, tag in comps:
        if tag is None:
            r = np.hypot(P[edges[:, 0], 0], P[edges[:, 0], 1])
            r2 = np.hypot(P[edges[:, 1], 0], P[edges[:, 1], 1])
            on = (np.abs(r - shape.R) < 1e-9) & (np.abs(r2 - shape.R) < 1e-9)
            mids[on] = shape.project(mids[on])
    bedges = np.column_stack([mesh.boundary_edges[:, :2], n + bmid])
    return Mesh(np.vstack([P, mids]), elements, bedges, mesh.boundary_tags, mesh.h_target, mesh.regions, mesh.scene)


def submesh(mesh: Mesh, regions=(REGION_INTERIOR,)) -> tuple[Mesh, np.ndarray]:
    """Restrict to elements whose region is in ``regions``.

    Returns the submesh and ``node_map`` with ``node_map[i]`` the parent
    index of submesh node ``i``.
    """
    sel = np.isin(mesh.regions, list(regions))
    elems = mesh.elements[sel]
    node_map = np.unique(elems)
    new_index = -np.ones(mesh.n_nodes, dtype=np.int64)
    new_index[node_map] = np.arange(len(node_map))
    n = mesh.n_nodes
    t = elems[:, :3]
    ekey = np.sort(np.r_[t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=1)
    ekey = set((ekey[:, 0] * n + ekey[:, 1]).tolist())
    be = np.sort(mesh.boundary_edges[:, :2], axis=1)
    keep = np.array([a * n + b in ekey for a, b in be], dtype=bool)
    sub = Mesh(
        mesh.points[node_map],
        new_index[elems],
        new_index[mesh.boundary_edges[keep]],
        mesh.boundary_tags[keep],
        mesh.h_target,
        mesh.regions[sel],
        mesh.scene,
    )
    return sub, node_map


# ---------------------------------------------------------------------------
# Text format
# ---------------------------------------------------------------------------
def export_mesh(mesh: Mesh) -> str:
    """Serialise to the plain-text VERTICES / TRIANGLES / BOUNDARY format.

    ::

        H <h_target>
        VERTICES <n>
        <x> <y>                        (n lines)
        TRIANGLES <m> <nodes per element>
        <i0> ... <i5> <region>         (m lines, 0-based indices)
        BOUNDARY <b>
        <i0> <i1> [<mid>] <tag>        (b lines)

    Lines starting with ``#`` and blank lines are ignored.
    """
    buf = io.StringIO()
    buf.write("# helmabc mesh\n")
    buf.write(f"H {mesh.h_target!r}\n")
    buf.write(f"VERTICES {mesh.n_nodes}\n")
    for x, y in mesh.points.tolist():
        buf.write(f"{x!r} {y!r}\n")
    buf.write(f"TRIANGLES {mesh.n_elements} {mesh.elements.shape[1]}\n")
    for row, reg in zip(mesh.elements.tolist(), mesh.regions.tolist()):
        buf.write(" ".join(map(str, row)) + f" {reg}\n")
    buf.write(f"BOUNDARY {len(mesh.boundary_edges)}\n")
    for row, tag in zip(mesh.boundary_edges.tolist(), mesh.boundary_tags.tolist()):
        buf.write(" ".join(map(str, row)) + f" {tag}\n")
    return buf.getvalue()


def import_mesh(text: str) -> Mesh:
    """Parse the text format written by :func:`export_mesh`.

    Raises
    ------
    MeshParseError
        With the offending line number on malformed headers, counts or indices.
    """
    lines = [(i + 1, ln.strip()) for i, ln in enumerate(text.splitlines())]
    lines = [(i, ln) for i, ln in lines if ln and not ln.startswith("#")]
    pos = 0

    def header(name):
        nonlocal pos
        if pos >= len(lines):
            raise MeshParseError(f"missing {name} section", lines[-1][0] if lines else None)
        lineno, ln = lines[pos]
        parts = ln.split()
        if parts[0] != name:
            raise MeshParseError(f"expected section {name}, found {parts[0]!r}", lineno)
        pos += 1
        try:
            return lineno, [int(v) for v in parts[1:]]
        except ValueError:
            raise MeshParseError(f"malformed {name} header", lineno) from None

    h = 0.0
    if lines and lines[0][1].split()[0] == "H":
        try:
            h = float(lines[0][1].split()[1])
        except (IndexError, ValueError):
            raise MeshParseError("malformed H line", lines[0][0]) from None
        pos = 1

    lineno, args = header("VERTICES")
    if len(args) != 1 or args[0] < 0:
        raise MeshParseError("VERTICES needs one non-negative count", lineno)
    nv = args[0]
    pts = np.empty((nv, 2))
    for j in range(nv):
        if pos >= len(lines):
            raise MeshParseError("unexpected end of file in VERTICES", lineno)
        ln_no, ln = lines[pos]
        try:
            x, y = (float(v) for v in ln.split())
        except ValueError:
            raise MeshParseError("vertex line needs two numbers", ln_no) from None
        pts[j] = x, y
        pos += 1

    lineno, args = header("TRIANGLES")
    if len(args) != 2 or args[1] not in (3, 6):
        raise MeshParseError("TRIANGLES needs a count and 3 or 6 nodes per element", lineno)
    nt, npe = args
    elems = np.empty((nt, npe), dtype=np.int64)
    regs = np.empty(nt, dtype=np.int64)
    for j in range(nt):
        if pos >= len(lines):
            raise MeshParseError("unexpected end of file in TRIANGLES", lineno)
        ln_no, ln = lines[pos]
        try:
            vals = [int(v) for v in ln.split()]
        except ValueError:
            raise MeshParseError("triangle line must hold integers", ln_no) from None
        if len(vals) != npe + 1:
            raise MeshParseError(f"triangle line needs {npe} indices and a region", ln_no)
        idx = vals[:npe]
        if min(idx) < 0 or max(idx) >= nv:
            raise MeshParseError(f"vertex index out of range [0, {nv})", ln_no)
        elems[j], regs[j] = idx, vals[npe]
        pos += 1

    lineno, args = header("BOUNDARY")
    if len(args) != 1:
        raise MeshParseError("BOUNDARY needs one count", lineno)
    nb = args[0]
    width = npe // 3 + 1
    bedges = np.empty((nb, width), dtype=np.int64)
    tags = []
    t = elems[:, :3]
    ekey = np.sort(np.r_[t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=1)
    ekeys = set((ekey[:, 0] * nv + ekey[:, 1]).tolist())
    for j in range(nb):
        if pos >= len(lines):
            raise MeshParseError("unexpected end of file in BOUNDARY", lineno)
        ln_no, ln = lines[pos]
        parts = ln.split()
        if len(parts) != width + 1:
            raise MeshParseError(f"boundary line needs {width} indices and a tag", ln_no)
        try:
            idx = [int(v) for v in parts[:width]]
        except ValueError:
            raise MeshParseError("boundary indices must be integers", ln_no) from None
        if min(idx) < 0 or max(idx) >= nv:
            raise MeshParseError(f"vertex index out of range [0, {nv})", ln_no)
        if parts[-1] not in TAGS:
            raise MeshParseError(f"unknown tag {parts[-1]!r}", ln_no)
        a, b = sorted(idx[:2])
        if a * nv + b not in ekeys:
            raise MeshParseError(f"dangling boundary edge ({idx[0]}, {idx[1]}) is not an element edge", ln_no)
        bedges[j] = idx
        tags.append(parts[-1])
        pos += 1
    if pos != len(lines):
        raise MeshParseError("trailing content after BOUNDARY section", lines[pos][0])
    return Mesh(pts, elems, bedges, np.array(tags, dtype="<U10"), h, regs)
