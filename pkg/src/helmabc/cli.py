"""Command-line entry point ``helmabc``.

Subcommands: pade, mesh, solve, reference, mie, rays, experiment.  Every
subcommand accepts ``--config FILE`` (JSON object whose keys are the
subcommand's long flag names, dashes or underscores); flags given on the
command line override config values and unknown keys are rejected.  Runs
that write files also write ``manifest.json`` into the output directory.

Exit codes: 0 success, 1 numerical failure, 2 usage error, 3 I/O error.
Failures print one line ``error[<category>]: <message>`` to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np

import helmabc
from helmabc.exceptions import (
    GeometryError,
    InadmissiblePadeError,
    MeshError,
    MeshParseError,
    RayTracingError,
    SolverError,
)

EXIT_OK, EXIT_NUMERICAL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------
SCENE_PRESETS = ("ball", "square", "butterfly", "trapping")


def parse_scene(value: str, pml_width: float = 0.5):
    """A scene JSON file, or ``preset:R`` with preset in ball/square/butterfly/trapping."""
    from helmabc.geometry import (
        Circle,
        PmlLayer,
        Scene,
        loads_scene,
        preset_butterfly,
        preset_trapping_polygon,
    )

    path = Path(value)
    if path.suffix.lower() == ".json" or path.exists():
        return loads_scene(path.read_text(encoding="utf-8"))
    name, _, rest = value.partition(":")
    if name not in SCENE_PRESETS:
        raise UsageError(f"--scene: {value!r} is neither a file nor one of {', '.join(p + ':R' for p in SCENE_PRESETS)}")
    try:
        R = float(rest) if rest else 2.0
    except ValueError:
        raise UsageError(f"--scene: bad radius in {value!r}") from None
    if name == "ball":
        return Scene.ball(R, pml_width)
    if name == "square":
        return Scene.square(R, pml_width)
    obstacle = preset_butterfly() if name == "butterfly" else preset_trapping_polygon()
    return Scene(obstacle, Circle(R), PmlLayer(R, pml_width))


def parse_pair(value: str) -> tuple[int, int]:
    try:
        M, N = (int(s) for s in value.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected M,N (two integers), got {value!r}") from None
    return M, N


def _versions() -> dict:
    import scipy

    out = {"helmabc": helmabc.__version__, "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}
    try:
        import triangle

        out["triangle"] = getattr(triangle, "__version__", "unknown")
    except ImportError:
        pass
    from helmabc.linsolve import backend_name

    out["solver_backend"] = backend_name()
    return out


def write_manifest(out_dir: Path, command: str, params: dict, outputs: list[str], extra: dict | None = None) -> Path:
    """Merge this run into ``out_dir/manifest.json`` (one entry per output file)."""
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "manifest.json"
    data = {"runs": {}}
    if path.exists():
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            data = {"runs": {}}
    entry = {
        "command": command,
        "parameters": params,
        "outputs": outputs,
        "versions": _versions(),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    if extra:
        entry.update(extra)
    for name in outputs:
        data.setdefault("runs", {})[name] = entry
    path.write_text(json.dumps(data, indent=2, default=_json_default), encoding="utf-8")
    return path


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def _effective(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("func", "config")}


def _write_field_csv(path: Path, mesh, values, node_ids=None):
    ids = np.arange(mesh.n_nodes) if node_ids is None else node_ids
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", "x", "y", "re", "im"])
        for i, (x, y), v in zip(ids, mesh.points, values):
            w.writerow([int(i), repr(float(x)), repr(float(y)), repr(float(v.real)), repr(float(v.imag))])


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------
def cmd_pade(args) -> int:
    from helmabc.pade import admissibility_check, compute_pade, reflection_profile

    abc = compute_pade(args.M, args.N)
    rep = admissibility_check(abc)
    fmt = lambda xs: ", ".join(f"{x:.17g}" for x in xs) or "(none)"  # noqa: E731
    print(f"pair: ({abc.M},{abc.N})")
    print(f"p: {fmt(abc.p)}")
    print(f"q: {fmt(abc.q)}")
    print(f"m_ord: {abc.m_ord}")
    print("zeros: " + (", ".join(f"{t:.17g} (multiplicity {m})" for t, m in abc.zeros) or "(none)"))
    print(f"psi: {fmt(abc.psi)}")
    print(f"admissible: {'yes' if rep.passed else 'no'} ({rep.message}; interlacing {'yes' if rep.interlacing else 'no'})")
    thetas = np.linspace(0.0, math.pi / 2, args.n_theta, endpoint=False)
    rows = reflection_profile(abc, thetas).as_array()
    lines = ["theta_rad,t,alpha_ref"] + [f"{th:.17g},{math.sin(th) ** 2:.17g},{al:.17g}" for th, al in rows]
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text("\n".join(lines) + "\n", encoding="utf-8")
        write_manifest(out.parent, "pade", _effective(args), [out.name])
    else:
        print("\n".join(lines))
    return EXIT_OK


def cmd_mesh(args) -> int:
    from helmabc.meshing import element_angles, export_mesh, generate_mesh

    scene = parse_scene(args.scene)
    if args.pml and scene.pml is None:
        raise UsageError("--pml requested but the scene has no PML layer")
    mesh = generate_mesh(scene, args.k, C=args.C, p=args.order, include_pml=args.pml)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(export_mesh(mesh), encoding="utf-8")
    ang = element_angles(mesh.points, mesh.vertex_elements)
    print(
        f"nodes {mesh.n_nodes}  triangles {mesh.n_elements}  h {mesh.h_target:.6g}  "
        f"max diameter {mesh.max_diameter():.6g}  min angle {ang.min():.2f} deg"
    )
    write_manifest(out.parent, "mesh", _effective(args), [out.name], {"nodes": mesh.n_nodes})
    return EXIT_OK


def _direction(args):
    from helmabc.fem import direction_from_angle

    return direction_from_angle(args.a_angle)


def cmd_solve(args) -> int:
    from helmabc.fem import AbcProblem, solve_abc
    from helmabc.meshing import generate_mesh
    from helmabc.pade import compute_pade

    scene = parse_scene(args.scene)
    abc = compute_pade(*args.abc)
    problem = AbcProblem(args.k, _direction(args), abc, curvature_correction=args.curvature_correction)
    mesh = generate_mesh(scene, args.k, C=args.C, p=args.order, include_pml=False)
    sol = solve_abc(problem, mesh)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_field_csv(out, mesh, sol.values)
    print(f"dofs {sol.meta['dofs']}  residual {sol.meta['residual']:.3e}  backend {sol.meta['backend']}")
    write_manifest(out.parent, "solve", _effective(args), [out.name], {"dofs": sol.meta["dofs"]})
    return EXIT_OK


def cmd_reference(args) -> int:
    from helmabc.meshing import generate_mesh, submesh
    from helmabc.pml import PmlConfig, solve_pml

    scene = parse_scene(args.scene, args.pml_width)
    if scene.pml is None:
        raise UsageError("the scene has no PML layer")
    mesh = generate_mesh(scene, args.k, C=args.C, p=args.order, include_pml=True)
    cfg = PmlConfig(scene.pml.inner_radius, scene.pml.width, args.sigma0)
    full = solve_pml(mesh, args.k, cfg, _direction(args))
    sub, node_map = submesh(mesh, (0,))
    sol = full.restrict(sub, node_map)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_field_csv(out, sub, sol.values)
    print(f"dofs {full.meta['dofs']}  sigma0 {cfg.sigma0:.6g}  residual {full.meta['residual']:.3e}")
    write_manifest(out.parent, "reference", _effective(args), [out.name], {"sigma0": cfg.sigma0})
    return EXIT_OK


def _read_points(path: Path) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        s = line.split("#", 1)[0].replace(",", " ").split()
        if not s:
            continue
        try:
            x, y = float(s[0]), float(s[1])
        except (ValueError, IndexError):
            if not rows and lineno == 1:
                continue  # header line
            raise MeshParseError(f"expected 'x y' in points file {path}", lineno) from None
        rows.append((x, y))
    if not rows:
        raise MeshParseError(f"no points in {path}")
    return np.array(rows)


def cmd_mie(args) -> int:
    from helmabc.pml import mie_disc

    pts = _read_points(Path(args.points))
    vals = mie_disc(args.k, args.radius, _direction(args), pts)
    lines = ["x,y,re,im"] + [f"{x:.17g},{y:.17g},{v.real:.17g},{v.imag:.17g}" for (x, y), v in zip(pts, vals)]
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text("\n".join(lines) + "\n", encoding="utf-8")
        write_manifest(out.parent, "mie", _effective(args), [out.name])
    else:
        print("\n".join(lines))
    return EXIT_OK


def _histogram_lines(theta, weight, bins):
    edges = np.linspace(0.0, math.pi / 2, bins + 1)
    idx = np.clip(np.searchsorted(edges, theta, side="right") - 1, 0, bins - 1)
    lines = ["theta_lo,theta_hi,count,mean_weight"]
    for b in range(bins):
        sel = idx == b
        mw = float(weight[sel].mean()) if sel.any() else 0.0
        lines.append(f"{edges[b]:.17g},{edges[b + 1]:.17g},{int(sel.sum())},{mw:.17g}")
    return lines


def cmd_rays(args) -> int:
    from helmabc import rays
    from helmabc.geometry import Square
    from helmabc.pade import compute_pade

    scene = parse_scene(args.scene, None)
    abc = compute_pade(*args.abc)
    if args.mode == "direct":
        a = _direction(args)
        res = rays.direct_ray_set(scene.obstacle, scene.truncation, a, samples=args.n, abc=abc)
        lines = ["x,y,direct"] + [f"{x:.17g},{y:.17g},{int(d)}" for (x, y), d in zip(res.points, res.direct)]
        print(f"direct fraction {res.fraction:.6f}  extremal point {res.extremal_point.tolist()} direct {res.extremal_direct}")
    elif args.mode == "angles":
        theta, weight = rays.gamma_tr_hits(scene, abc, args.n, max_bounces=args.max_bounces, seed=args.seed)
        lines = _histogram_lines(theta, weight, args.bins)
        print(f"GammaTr hits {len(theta)}  max theta {theta.max() if len(theta) else float('nan'):.6g}")
    elif args.mode == "unfold":
        if not isinstance(scene.truncation, Square):
            raise UsageError("--mode unfold needs a square truncation")
        side = 2 * scene.truncation.half_side
        rng = np.random.default_rng(args.seed)
        x0 = rng.uniform(-side / 2, side / 2, 2)
        ang = rng.uniform(0, 2 * math.pi)
        ray = rays.Ray(x0, np.array([math.cos(ang), math.sin(ang)]))
        times = np.sort(rng.uniform(0, args.length * side, args.n))
        unf = rays.unfold_hypercube(side, ray, times)
        direct, _ = rays.square_billiard(side, ray, times)
        dev = np.linalg.norm(unf.positions - direct, axis=1)
        lines = ["t,x_unfolded,y_unfolded,x,y,x_direct,y_direct,deviation"] + [
            f"{t:.17g},{u[0]:.17g},{u[1]:.17g},{p[0]:.17g},{p[1]:.17g},{d[0]:.17g},{d[1]:.17g},{e:.3e}"
            for t, u, p, d, e in zip(times, unf.unfolded, unf.positions, direct, dev)
        ]
        print(f"max deviation {dev.max() if len(dev) else 0.0:.3e}  degenerate {unf.degenerate}")
    else:
        est = rays.reentrant_energy(scene, abc, args.n, seed=args.seed)
        lines = ["label,n_rays,value", f"{est.label},{est.n_rays},{est.value:.17g}"]
        print(f"[{est.label}] reentrant energy {est.value:.6g} over {est.n_rays} rays")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text("\n".join(lines) + "\n", encoding="utf-8")
        write_manifest(out.parent, "rays", _effective(args), [out.name])
    else:
        print("\n".join(lines))
    return EXIT_OK


EXPERIMENT_SPEC_KEYS = {"table", "rows", "abc", "angles", "C", "p", "dof_cap", "sigma0", "scene", "curvature_correction"}


def _spec_from_file(path: Path, args):
    from helmabc.experiments import ExperimentSpec

    d = json.loads(path.read_text(encoding="utf-8"))
    unknown = set(d) - EXPERIMENT_SPEC_KEYS
    if unknown:
        raise UsageError(f"unknown keys in experiment spec {path}: {sorted(unknown)}")
    table = d.get("table", "custom")
    kw = {k: d[k] for k in ("angles", "C", "p", "sigma0") if k in d}
    return ExperimentSpec(
        table,
        [tuple(r) for r in d["rows"]],
        abc=tuple(d.get("abc", args.abc)),
        dof_cap=int(d.get("dof_cap", args.dof_cap)),
        custom_scene=d.get("scene"),
        workers=args.workers,
        curvature_correction=bool(d.get("curvature_correction", args.curvature_correction)),
        **kw,
    )


def cmd_experiment(args) -> int:
    from helmabc.experiments import ExperimentSpec, emit, run

    if args.spec:
        spec = _spec_from_file(Path(args.spec), args)
    else:
        if args.table is None:
            raise UsageError("experiment needs --table or --spec")
        spec = ExperimentSpec.from_table(
            args.table,
            kmax=args.kmax,
            Rmax=args.Rmax,
            abc=args.abc,
            C=args.C,
            dof_cap=args.dof_cap,
            sigma0=args.sigma0,
            workers=args.workers,
            curvature_correction=args.curvature_correction,
        )
    result = run(spec)
    out = Path(args.out_dir)
    files = emit(result, out)
    for r in result.rows:
        ref = r.reference_value
        print(
            f"{r.table} k={r.k:g} R={r.R:g} angle={r.angle:.4f} global={r.rel_error_global:.6g} "
            f"local={r.rel_error_local_ball2:.6g} published={ref if ref is not None else '-'} {r.status} {r.message}".rstrip()
        )
    write_manifest(out, "experiment", _effective(args), [Path(f).name for f in files.values()], {"rows": len(result.rows)})
    failed = [r for r in result.rows if r.status != "ok"]
    return EXIT_NUMERICAL if failed else EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="helmabc", description="Padé ABCs, FEM/PML solvers and ray diagnostics for 2D Helmholtz scattering.")
    parser.add_argument("--version", action="version", version=f"helmabc {helmabc.__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--config", help="JSON file with flag values (flags override it)")
        p.set_defaults(func=func)
        return p

    p = add("pade", cmd_pade, "Padé coefficients, orders, vanishing angles and a reflection table")
    p.add_argument("--M", type=int, required=True)
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--n-theta", type=int, default=18, help="rows in the reflection table (default 18)")
    p.add_argument("--out", help="write the reflection table here instead of stdout")

    p = add("mesh", cmd_mesh, "generate and export a mesh")
    p.add_argument("--scene", required=True, help="scene JSON file or preset:R (" + ", ".join(SCENE_PRESETS) + ")")
    p.add_argument("--k", type=float, required=True)
    p.add_argument("--C", type=float, default=2 * math.pi / 5)
    p.add_argument("--order", type=int, choices=(1, 2), default=2)
    p.add_argument("--pml", action="store_true", help="append the PML annulus")
    p.add_argument("--out", required=True)

    for name, func, help_ in (
        ("solve", cmd_solve, "solve the ABC-truncated problem and write the nodal field"),
        ("reference", cmd_reference, "solve the PML reference problem and write the field on the truncated domain"),
    ):
        p = add(name, func, help_)
        p.add_argument("--scene", required=True)
        p.add_argument("--k", type=float, required=True)
        p.add_argument("--a-angle", type=float, default=0.0, help="incident direction angle in radians")
        p.add_argument("--order", type=int, choices=(1, 2), default=2)
        p.add_argument("--C", type=float, default=2 * math.pi / 5)
        p.add_argument("--out", required=True, help="field CSV (node_id,x,y,re,im)")
        if name == "solve":
            p.add_argument("--abc", type=parse_pair, default=(0, 0), help="Padé pair M,N (default 0,0)")
            p.add_argument("--curvature-correction", action="store_true", help="impedance only: add the κ/2 term")
        else:
            p.add_argument("--sigma0", type=float, default=None, help="PML strength (default from 1e-6 damping)")
            p.add_argument("--pml-width", type=float, default=0.5)

    p = add("mie", cmd_mie, "evaluate the sound-soft disc series solution")
    p.add_argument("--k", type=float, required=True)
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--a-angle", type=float, default=0.0)
    p.add_argument("--points", required=True, help="text file with one 'x y' (or x,y) per line")
    p.add_argument("--out")

    p = add("rays", cmd_rays, "billiard-ray diagnostics")
    p.add_argument("--scene", required=True)
    p.add_argument("--abc", type=parse_pair, default=(0, 0))
    p.add_argument("--n", type=int, default=1000, help="rays, samples or sample times")
    p.add_argument("--mode", choices=("direct", "angles", "unfold", "reentrant"), default="direct")
    p.add_argument("--a-angle", type=float, default=0.0, help="incident angle for --mode direct")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bins", type=int, default=18)
    p.add_argument("--max-bounces", type=int, default=10)
    p.add_argument("--length", type=float, default=50.0, help="unfold horizon in units of the square side")
    p.add_argument("--out")

    p = add("experiment", cmd_experiment, "paired ABC/PML relative-error tables")
    p.add_argument("--table", choices=("ball", "butterfly", "square_fixedR", "square_growR"))
    p.add_argument("--spec", help="JSON experiment spec (keys: " + ", ".join(sorted(EXPERIMENT_SPEC_KEYS)) + ")")
    p.add_argument("--kmax", type=float, default=40)
    p.add_argument("--Rmax", type=float, default=math.inf)
    p.add_argument("--abc", type=parse_pair, default=(0, 0))
    p.add_argument("--C", type=float, default=2 * math.pi / 5)
    p.add_argument("--sigma0", type=float, default=None)
    p.add_argument("--dof-cap", type=int, default=500_000)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--curvature-correction", action="store_true")
    p.add_argument("--out-dir", required=True)
    return parser


def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:
        if name in action.choices:
            return action.choices[name]
    raise UsageError(f"unknown subcommand {name!r}")


def _prescan(argv):
    command = next((a for a in argv if not a.startswith("-")), None)
    config = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            config = argv[i + 1]
        elif a.startswith("--config="):
            config = a.split("=", 1)[1]
    return command, config


def _apply_config(parser, argv):
    """Load --config (if any) into the subparser's defaults, then parse."""
    command, config = _prescan(argv)
    if config and command:
        path = Path(config)
        cfg = json.loads(path.read_text(encoding="utf-8"))
        if not isinstance(cfg, dict):
            raise UsageError(f"config {path} must hold a JSON object")
        subp = _subparser(parser, command)
        dests = {a.dest: a for a in subp._actions if a.dest not in ("help", "config", "func")}
        defaults = {}
        for key, val in cfg.items():
            dest = key.lstrip("-").replace("-", "_")
            if dest not in dests:
                raise UsageError(f"unknown config key {key!r} for {command}")
            action = dests[dest]
            try:
                if action.type is parse_pair and isinstance(val, list):
                    val = tuple(int(v) for v in val)
                elif isinstance(val, str) and action.type is not None:
                    val = action.type(val)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"bad value for config key {key!r}: {exc}") from None
            if action.choices is not None and val not in action.choices:
                raise UsageError(f"config key {key!r}: {val!r} not in {list(action.choices)}")
            defaults[dest] = val
            action.required = False
        subp.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()

    def fail(category, code, exc):
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"error[{category}]: {msg}", file=sys.stderr)
        return code

    try:
        args = _apply_config(parser, argv)
        return args.func(args)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (UsageError, argparse.ArgumentTypeError) as exc:
        return fail("usage", EXIT_USAGE, exc)
    except (MeshParseError, OSError, json.JSONDecodeError) as exc:
        return fail("io", EXIT_IO, exc)
    except (SolverError, RayTracingError, MeshError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return fail("numerical", EXIT_NUMERICAL, exc)
    except (InadmissiblePadeError, GeometryError, ValueError) as exc:
        return fail("usage", EXIT_USAGE, exc)


if __name__ == "__main__":
    sys.exit(main())
