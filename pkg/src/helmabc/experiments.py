"""Paired ABC / PML runs, relative errors and scaling fits.

Each row meshes the PML configuration once; the ABC problem is solved on the
region-0 submesh, so both solutions live on identical nodes and the error is
computed without interpolation.
"""

from __future__ import annotations

import csv
import gc
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from helmabc.fem import AbcProblem, direction_from_angle, relative_error, solve_abc
from helmabc.geometry import Circle, Disc, PmlLayer, Scene, preset_butterfly, scene_from_dict
from helmabc.meshing import generate_mesh, mesh_size, submesh
from helmabc.pade import PadeAbc, compute_pade
from helmabc.pml import PmlConfig, solve_pml

__all__ = [
    "TABLES",
    "REFERENCE_VALUES",
    "ExperimentSpec",
    "ExperimentRow",
    "ExperimentResult",
    "build_scene",
    "estimate_dofs",
    "run_case",
    "run",
    "scaling_fit",
    "emit",
    "write_csv",
    "read_csv",
    "write_svg",
]

# Published relative errors, keyed by (table, k, R, angle).
REFERENCE_VALUES = {
    ("ball", 20, 2, 0.0): 0.0484546,
    ("ball", 20, 4, 0.0): 0.00972861,
    ("ball", 20, 8, 0.0): 0.00216756,
    ("ball", 40, 2, 0.0): 0.0489765,
    ("ball", 40, 4, 0.0): 0.0105276,
    ("ball", 40, 8, 0.0): 0.00219439,
    ("ball", 80, 2, 0.0): 0.0496579,
    ("ball", 80, 4, 0.0): 0.0107677,
    ("ball", 160, 2, 0.0): 0.0489148,
    ("butterfly", 20, 2, 7 * math.pi / 16): 0.0623217,
    ("butterfly", 20, 2, math.pi / 16): 0.0570241,
    ("butterfly", 40, 2, 7 * math.pi / 16): 0.0624238,
    ("butterfly", 40, 2, math.pi / 16): 0.0587955,
    ("butterfly", 80, 2, 7 * math.pi / 16): 0.0627993,
    ("butterfly", 80, 2, math.pi / 16): 0.0583194,
    ("square_fixedR", 20, 2, math.pi / 8): 0.0832785,
    ("square_fixedR", 20, 4, math.pi / 8): 0.0587430,
    ("square_fixedR", 20, 8, math.pi / 8): 0.0661221,
    ("square_fixedR", 40, 2, math.pi / 8): 0.0802873,
    ("square_fixedR", 40, 4, math.pi / 8): 0.0578503,
    ("square_fixedR", 40, 8, math.pi / 8): 0.0528049,
    ("square_fixedR", 80, 2, math.pi / 8): 0.0772161,
    # square_growR rows are labelled by the equivalent R_square at k = 10
    ("square_growR", 20, 2, math.pi / 8): 0.0862636,
    ("square_growR", 40, 4, math.pi / 8): 0.0593898,
    ("square_growR", 80, 8, math.pi / 8): 0.0532693,
    ("square_growR", 160, 16, math.pi / 8): 0.0515193,
}

# Table id -> (rows of (k, R), incident angles)
TABLES = {
    "ball": ([(k, R) for k in (20, 40, 80, 160) for R in (2, 4, 8)], [0.0]),
    "butterfly": ([(k, 2) for k in (20, 40, 80)], [7 * math.pi / 16, math.pi / 16]),
    "square_fixedR": ([(k, R) for k in (20, 40, 80) for R in (2, 4, 8)], [math.pi / 8]),
    "square_growR": ([(20, 2), (40, 4), (80, 8), (160, 16)], [math.pi / 8]),
}

PML_WIDTH = 0.5


def build_scene(table: str, k: float, R: float, custom: dict | None = None) -> Scene:
    """Scene for a table row; ``R`` is R for circles and R_square for squares."""
    if table == "ball":
        return Scene.ball(R, PML_WIDTH)
    if table == "butterfly":
        return Scene(preset_butterfly(), Circle(R), PmlLayer(R, PML_WIDTH))
    if table == "square_fixedR":
        return Scene.square(R, PML_WIDTH)
    if table == "square_growR":
        # equivalent problem: R_square = 1 and the obstacle shrinks like 10/k
        return Scene.square(1.0, PML_WIDTH, radius=10.0 / k)
    if table == "custom":
        if custom is None:
            raise ValueError("custom tables need a scene description")
        return scene_from_dict(custom)
    raise ValueError(f"unknown table {table!r}")


def _disc_area(scene: Scene) -> float:
    ob = scene.obstacle
    if isinstance(ob, Disc):
        return math.pi * ob.radius**2
    return math.pi * ob.max_radius**2 * 0.5


def estimate_dofs(scene: Scene, k: float, C: float, p: int) -> int:
    """P2/P1 node-count estimate for the PML mesh (calibrated on lattice meshes)."""
    h = mesh_size(k, C, p)
    area = math.pi * scene.outer_radius**2 - _disc_area(scene)
    tri = 3.27 * area / h**2
    return int(tri * (2.02 if p == 2 else 0.51))


@dataclass
class ExperimentSpec:
    """A set of paired runs.

    ``rows`` are (k, R) pairs; ``R`` means R_square for the square tables.
    """

    table: str
    rows: list[tuple[float, float]]
    abc: tuple[int, int] = (0, 0)
    angles: list[float] = field(default_factory=lambda: [0.0])
    C: float = 2 * math.pi / 5
    p: int = 2
    out: str | None = None
    dof_cap: int = 500_000
    sigma0: float | None = None
    custom_scene: dict | None = None
    workers: int = 1
    curvature_correction: bool = False

    def __post_init__(self):
        if self.table not in (*TABLES, "custom"):
            raise ValueError(f"unknown table {self.table!r}")
        self.rows = [(float(k), float(R)) for k, R in self.rows]
        too_big = []
        for k, R in self.rows:
            n = estimate_dofs(build_scene(self.table, k, R, self.custom_scene), k, self.C, self.p)
            if n > self.dof_cap:
                too_big.append((k, R, n))
        if too_big:
            desc = ", ".join(f"(k={k:g}, R={R:g}): ~{n:,} dofs" for k, R, n in too_big)
            raise ValueError(f"rows exceed the dof cap {self.dof_cap:,}: {desc}")

    @classmethod
    def from_table(cls, table: str, kmax: float = 40, Rmax: float = math.inf, **kw) -> "ExperimentSpec":
        rows, angles = TABLES[table]
        rows = [(k, R) for k, R in rows if k <= kmax and R <= Rmax]
        kw.setdefault("angles", angles)
        return cls(table, rows, **kw)

    @property
    def pade(self) -> PadeAbc:
        return compute_pade(*self.abc)


@dataclass
class ExperimentRow:
    table: str
    k: float
    R: float
    angle: float
    rel_error_global: float = math.nan
    rel_error_local_ball2: float = math.nan
    dofs_abc: int = 0
    dofs_pml: int = 0
    sigma0: float = math.nan
    t_mesh: float = 0.0
    t_abc: float = 0.0
    t_pml: float = 0.0
    status: str = "ok"
    message: str = ""

    @property
    def reference_value(self) -> float | None:
        key = (self.table, int(round(self.k)), int(round(self.R)), self.angle)
        for (t, k, R, ang), v in REFERENCE_VALUES.items():
            if (t, k, R) == key[:3] and abs(ang - self.angle) < 1e-12:
                return v
        return None


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    rows: list[ExperimentRow]

    def row(self, k, R, angle=None) -> ExperimentRow:
        for r in self.rows:
            if r.k == k and r.R == R and (angle is None or abs(r.angle - angle) < 1e-12):
                return r
        raise KeyError((k, R, angle))


def run_case(
    table: str,
    k: float,
    R: float,
    angle: float,
    abc: PadeAbc,
    C: float = 2 * math.pi / 5,
    p: int = 2,
    sigma0: float | None = None,
    custom_scene: dict | None = None,
    curvature_correction: bool = False,
) -> ExperimentRow:
    """One paired ABC/PML computation on a shared mesh."""
    row = ExperimentRow(table, float(k), float(R), float(angle))
    scene = build_scene(table, k, R, custom_scene)
    a = direction_from_angle(angle)
    t0 = time.perf_counter()
    mesh = generate_mesh(scene, k, C=C, p=p, include_pml=True)
    sub, node_map = submesh(mesh, (0,))
    row.t_mesh = time.perf_counter() - t0

    t0 = time.perf_counter()
    cfg = PmlConfig(scene.pml.inner_radius, scene.pml.width, sigma0)
    ref_full = solve_pml(mesh, k, cfg, a)
    ref = ref_full.restrict(sub, node_map)
    row.dofs_pml = int(ref_full.meta["dofs"])
    row.sigma0 = float(cfg.sigma0)
    del ref_full, mesh
    gc.collect()
    row.t_pml = time.perf_counter() - t0

    t0 = time.perf_counter()
    v = solve_abc(AbcProblem(k, a, abc, curvature_correction=curvature_correction), sub)
    row.dofs_abc = int(v.meta["dofs"])
    row.t_abc = time.perf_counter() - t0

    row.rel_error_global = relative_error(ref, v)
    row.rel_error_local_ball2 = relative_error(ref, v, ("ball", (0.0, 0.0), 2.0))
    return row


def _run_row(args) -> ExperimentRow:
    table, k, R, angle, abc, C, p, sigma0, custom, curv = args
    try:
        return run_case(table, k, R, angle, abc, C, p, sigma0, custom, curv)
    except Exception as exc:  # noqa: BLE001 - failed rows are recorded, later rows still run
        return ExperimentRow(table, float(k), float(R), float(angle), status="failed", message=f"{type(exc).__name__}: {exc}")


def run(spec: ExperimentSpec) -> ExperimentResult:
    """Run every (k, R, angle) row; failures are recorded per row."""
    abc = spec.pade
    jobs = [
        (spec.table, k, R, ang, abc, spec.C, spec.p, spec.sigma0, spec.custom_scene, spec.curvature_correction)
        for k, R in spec.rows
        for ang in spec.angles
    ]
    if spec.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            rows = list(pool.map(_run_row, jobs))
    else:
        rows = [_run_row(j) for j in jobs]
    rows.sort(key=lambda r: (r.k, r.R, r.angle))
    result = ExperimentResult(spec, rows)
    if spec.out:
        emit(result, spec.out)
    return result


# ---------------------------------------------------------------------------
# Fits and output
# ---------------------------------------------------------------------------
def scaling_fit(R, err, min_points: int = 3) -> tuple[float, float]:
    """Least-squares slope and intercept of log(err) against log(R)."""
    R = np.asarray(R, dtype=float)
    err = np.asarray(err, dtype=float)
    if len(np.unique(R)) < min_points:
        raise ValueError(f"scaling_fit needs at least {min_points} distinct R values")
    slope, intercept = np.polyfit(np.log(R), np.log(err), 1)
    return float(slope), float(intercept)


CSV_FIELDS = [f for f in ExperimentRow.__dataclass_fields__]


def write_csv(result: ExperimentResult, path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        w.writeheader()
        for r in result.rows:
            d = asdict(r)
            for key in ("k", "R", "angle", "rel_error_global", "rel_error_local_ball2", "sigma0"):
                d[key] = repr(float(d[key]))
            w.writerow(d)
    return path


def read_csv(path) -> list[ExperimentRow]:
    rows = []
    with Path(path).open(encoding="utf-8") as fh:
        for d in csv.DictReader(fh):
            kw = {}
            for name, f in ExperimentRow.__dataclass_fields__.items():
                val = d[name]
                if f.type == "float":
                    val = float(val)
                elif f.type == "int":
                    val = int(val)
                kw[name] = val
            rows.append(ExperimentRow(**kw))
    return rows


def write_svg(result: ExperimentResult, path) -> Path:
    """Relative error vs k (one series per R) and vs R on log axes (one series per k).

    Data lines carry SVG ids ``series-k-*`` and ``series-R-*``.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ok = [r for r in result.rows if r.status == "ok"]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.8))
    n_series = 0
    for R in sorted({r.R for r in ok}):
        pts = sorted((r.k, r.rel_error_global, r.angle) for r in ok if r.R == R)
        for ang in sorted({p[2] for p in pts}):
            sel = [(k, e) for k, e, a in pts if a == ang]
            ax1.plot(*zip(*sel), "o-", label=f"R={R:g}, angle={ang:.3f}", gid=f"series-k-{n_series}")
            n_series += 1
    ax1.set_xlabel("k")
    ax1.set_ylabel("relative error")
    ax1.legend(fontsize=7)
    for k in sorted({r.k for r in ok}):
        pts = sorted((r.R, r.rel_error_global, r.angle) for r in ok if r.k == k)
        for ang in sorted({p[2] for p in pts}):
            sel = [(R, e) for R, e, a in pts if a == ang]
            ax2.loglog(*zip(*sel), "s--", label=f"k={k:g}, angle={ang:.3f}", gid=f"series-R-{n_series}")
            n_series += 1
    ax2.set_xlabel("R")
    ax2.legend(fontsize=7)
    fig.suptitle(f"{result.spec.table}: relative L2 error")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def emit(result: ExperimentResult, out_dir, formats=("csv", "svg")) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    if "csv" in formats:
        files["csv"] = write_csv(result, out / f"{result.spec.table}.csv")
    if "svg" in formats:
        files["svg"] = write_svg(result, out / f"{result.spec.table}.svg")
    spec = asdict(result.spec)
    (out / f"{result.spec.table}_spec.json").write_text(json.dumps(spec, indent=2), encoding="utf-8")
    return files
