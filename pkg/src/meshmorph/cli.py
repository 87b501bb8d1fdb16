"""Command-line front end.

    meshmorph quality  --mesh m.msh [--out q.csv]
    meshmorph eikonal  --mesh m.msh --marker 2 --h 0.05 --out eps.vtk
    meshmorph repair   --mesh m.msh --out tau.vtk [--out-history badness.csv]
    meshmorph deform   --mesh m.msh --displacement d.csv --out deformed.vtk --quality q.csv
    meshmorph optimize --mesh m.msh --objective perimeter --constraint volume --out-history h.csv
    meshmorph generate --kind ellipse --out ellipse.msh

Settings come from an INI file (``--config``) with sections [eikonal],
[deform], [repair] and [optimize]; command-line flags override the file.
Exit status: 0 success, 1 domain error (one ``error:`` line on stderr), 2
usage error.
"""
import argparse
import configparser
import csv
import io
import sys

import numpy as np

from . import generators
from .cvt import repair_loop
from .deform import DeformConfig, laplace_displacement, solve_displacement
from .eikonal import EikonalConfig, solve_eikonal, wind_field
from .errors import MeshFormatError, MeshMorphError
from .fem import SolverConfig
from .io import load_msh, save_msh, write_vtk
from .mesh import DESIGN, FARFIELD, apply_displacement, boundary_complex, quality_report
from .shape_opt import OBJECTIVES, DriverConfig, run_optimize

COMMANDS = ("repair", "eikonal", "deform", "quality", "optimize", "generate")
COMMAND_HELP = {
    "repair": "tangential CVT repair of the design surface",
    "eikonal": "viscous Eikonal distance to marked boundaries",
    "deform": "extend a boundary displacement into the volume",
    "quality": "mesh quality report as CSV",
    "optimize": "nodal shape optimisation run",
    "generate": "write one of the built-in test meshes",
}


class UsageError(Exception):
    pass


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _markers(text):
    if isinstance(text, (tuple, list)):
        return tuple(int(v) for v in text)
    return tuple(int(v) for v in str(text).replace(",", " ").split())


def _words(text):
    if isinstance(text, (tuple, list)):
        text = " ".join(text)
    return tuple(str(text).replace(",", " ").split())


def _positive(conv):
    def check(text):
        v = conv(text)
        if not v > 0:
            raise ValueError(f"must be positive, got {v}")
        return v
    return check


def _nonneg(conv):
    def check(text):
        v = conv(text)
        if v < 0:
            raise ValueError(f"must be non-negative, got {v}")
        return v
    return check


def _optional(conv):
    def check(text):
        if text is None or str(text).strip().lower() in ("", "auto", "none"):
            return None
        return conv(text)
    return check


# section -> key -> (converter, default, help)
SCHEMA = {
    "eikonal": {
        "h": (_optional(_positive(float)), None, "regularisation h (auto: 0.05 x bbox diagonal)"),
        "marker": (_markers, (FARFIELD,), "boundary marker(s) where eps = 0"),
        "initial_guess": (str, "graph", "Newton start: graph or zero"),
        "supg": (_bool, True, "SUPG stabilisation"),
        "newton_max_steps": (_positive(int), 50, "Newton step limit"),
        "newton_atol": (_positive(float), 1e-10, "Newton absolute residual tolerance"),
    },
    "deform": {
        "alpha": (_positive(float), 1.0, "diffusivity weight"),
        "beta": (_optional(_nonneg(float)), None, "convection weight (auto: 10 / diameter)"),
        "floor": (_optional(_positive(float)), None, "minimum diffusivity (auto: 1e-6 alpha diameter^2)"),
        "supg": (_bool, True, "SUPG stabilisation"),
        "method": (str, "eikonal", "eikonal or laplace"),
    },
    "repair": {
        "tol": (_optional(_positive(float)), None, "offset tolerance (auto: 1e-3 x mean edge)"),
        "max_iter": (_positive(int), 100, "sweep limit"),
        "marker": (_markers, (DESIGN,), "design marker(s)"),
    },
    "optimize": {
        "objective": (str, "perimeter", "perimeter, volume, radial or flux"),
        "constraint": (_words, (), "constraints: volume, centroid, symmetry (repeatable)"),
        "symmetry_axes": (_markers, (), "coordinate planes x_k = 0 for the symmetry constraint"),
        "radius": (_positive(float), 1.0, "radius R of the radial objective"),
        "delta": (_optional(_nonneg(float)), None, "Sobolev weight (auto: 10 x mean edge^2)"),
        "step": (_positive(float), 1.0, "initial step scale"),
        "max_move": (_optional(_positive(float)), None, "largest first normal move (auto: 2 edges)"),
        "max_iter": (_nonneg(int), 50, "outer iteration limit"),
        "gtol": (_positive(float), 1e-4, "relative gradient tolerance"),
        "armijo": (_positive(float), 1e-4, "sufficient-decrease constant"),
        "backtrack": (_positive(float), 0.5, "step reduction factor"),
        "max_trials": (_positive(int), 20, "line-search trials"),
        "repair": (_bool, True, "run the tangential repair inside every step"),
        "alpha": (_positive(float), 1.0, "deformation diffusivity weight"),
        "beta": (_nonneg(float), 0.3, "deformation convection weight"),
        "floor": (_positive(float), 0.25, "deformation diffusivity floor"),
        "h": (_optional(_positive(float)), None, "Eikonal regularisation"),
    },
}

COMMAND_SECTIONS = {
    "eikonal": ("eikonal",),
    "deform": ("eikonal", "deform"),
    "repair": ("repair",),
    "optimize": ("optimize", "repair"),
    "quality": (),
    "generate": (),
}


def _command_keys(sections):
    return [(sec, key) for sec in sections for key in SCHEMA[sec]]


def _flag(sec, key, sections):
    """``--key``, or ``--section-key`` when the key occurs in several sections."""
    shared = sum(key in SCHEMA[s] for s in sections) > 1
    name = f"{sec}_{key}" if shared else key
    return "--" + name.replace("_", "-")


def _epilog(sections):
    lines = []
    for sec in sections:
        lines.append(f"[{sec}] keys (flag, default):")
        for key, (_, default, text) in SCHEMA[sec].items():
            lines.append(f"  {key:17s} {_flag(sec, key, sections):22s} {default!r:14s} {text}")
    return "\n".join(lines)


def build_parser():
    p = argparse.ArgumentParser(prog="meshmorph", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True
    for cmd in COMMANDS:
        secs = COMMAND_SECTIONS[cmd]
        sp = sub.add_parser(cmd, help=COMMAND_HELP[cmd], epilog=_epilog(secs), formatter_class=argparse.RawDescriptionHelpFormatter)
        if cmd == "generate":
            sp.add_argument("--kind", required=True,
                            choices=["disk", "ellipse", "benchmark", "ellipse-hole", "annulus", "strip"])
            sp.add_argument("--resolution", type=int, default=64, help="boundary points (default 64)")
            sp.add_argument("--out", required=True)
            continue
        sp.add_argument("--mesh", required=True, help="Gmsh 2.2 ASCII mesh")
        sp.add_argument("--config", help="INI configuration file")
        sp.add_argument("--threads", type=int, default=1,
                        help="worker threads (the solvers here run serially; accepted for compatibility)")
        for sec, key in _command_keys(secs):
            text = SCHEMA[sec][key][2]
            action = "append" if key == "constraint" else "store"
            sp.add_argument(_flag(sec, key, secs), dest=f"{sec}.{key}", default=None,
                            action=action, help=text)
        if cmd == "quality":
            sp.add_argument("--out", help="CSV path (default: stdout)")
        elif cmd == "eikonal":
            sp.add_argument("--out", required=True, help="VTK output with eps and grad_eps")
        elif cmd == "repair":
            sp.add_argument("--out", required=True, help="VTK output with the offsets")
            sp.add_argument("--out-history", help="CSV of badness per sweep")
        elif cmd == "deform":
            sp.add_argument("--displacement", required=True, help="CSV: vertex-id, dx, dy")
            sp.add_argument("--out", required=True, help="deformed mesh VTK")
            sp.add_argument("--quality", help="quality report CSV")
        elif cmd == "optimize":
            sp.add_argument("--out-history", help="history CSV")
            sp.add_argument("--out", help="final mesh (.msh or .vtk)")
            sp.add_argument("--vtk-dir", help="directory for per-iteration VTK snapshots")
    return p


def load_settings(args, sections):
    """Defaults, then the INI file, then command-line flags."""
    values = {sec: {k: spec[1] for k, spec in SCHEMA[sec].items()} for sec in sections}
    if getattr(args, "config", None):
        cp = configparser.ConfigParser()
        try:
            with open(args.config) as fh:
                cp.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise UsageError(f"cannot read config: {exc}") from None
        for sec in cp.sections():
            if sec not in SCHEMA:
                raise UsageError(f"unknown config section [{sec}]")
            for key, raw in cp.items(sec):
                if key not in SCHEMA[sec]:
                    raise UsageError(f"unknown key {key!r} in [{sec}]")
                if sec in values:
                    values[sec][key] = _convert(sec, key, raw)
    for sec, key in _command_keys(sections):
        raw = getattr(args, f"{sec}.{key}", None)
        if raw is not None:
            values[sec][key] = _convert(sec, key, raw)
    return values


def _convert(sec, key, raw):
    try:
        return SCHEMA[sec][key][0](raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid value for [{sec}] {key}: {exc}") from None


def _eikonal_config(s, markers=None):
    return EikonalConfig(
        h_reg=s["h"],
        dirichlet_markers=markers or s["marker"],
        initial_guess=s["initial_guess"],
        supg=s["supg"],
        newton=SolverConfig(newton_max_steps=s["newton_max_steps"], newton_atol=s["newton_atol"]),
    )


def _quality_csv(q):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value"])
    for name, value in q.as_rows():
        w.writerow([name, repr(float(value)) if isinstance(value, float) else value])
    return buf.getvalue()


def cmd_quality(args, settings):
    text = _quality_csv(quality_report(load_msh(args.mesh)))
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_eikonal(args, settings):
    mesh = load_msh(args.mesh)
    eps = solve_eikonal(mesh, _eikonal_config(settings["eikonal"]))
    write_vtk(mesh, {"eps": eps}, args.out, cell_fields={"grad_eps": wind_field(mesh, eps)})


def cmd_repair(args, settings):
    mesh = load_msh(args.mesh)
    s = settings["repair"]
    b = boundary_complex(mesh)
    res = repair_loop(b, tol=s["tol"], max_iter=s["max_iter"], markers=s["marker"])
    write_vtk(mesh, {"tau": res.offsets}, args.out)
    if args.out_history:
        with open(args.out_history, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sweep", "badness"])
            for k, f in enumerate(res.badness):
                w.writerow([k, repr(float(f))])
    sys.stdout.write(f"iterations={res.iterations} converged={res.converged} "
                     f"badness={res.badness[0]!r}->{res.badness[-1]!r}\n")


def read_displacements(path, dim):
    """CSV rows ``vertex-id, dx, dy[, dz]``; a non-numeric first row is a header."""
    ids, vals = [], []
    with open(path, newline="") as fh:
        for k, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                vid = int(row[0])
                d = [float(v) for v in row[1:1 + dim]]
            except ValueError:
                if k == 1:
                    continue
                raise MeshFormatError(f"cannot parse displacement row {row!r}", k) from None
            if len(d) != dim:
                raise MeshFormatError(f"expected {dim} displacement components", k)
            ids.append(vid)
            vals.append(d)
    return np.array(ids, dtype=np.int64), np.array(vals, dtype=float).reshape(-1, dim)


def cmd_deform(args, settings):
    mesh = load_msh(args.mesh)
    ids, vals = read_displacements(args.displacement, mesh.dim)
    if len(ids) and (ids.min() < 0 or ids.max() >= mesh.n_vertices):
        raise MeshFormatError("displacement vertex id out of range")
    d = settings["deform"]
    design = mesh.vertices_with_marker((DESIGN,))
    extra = np.setdiff1d(ids, design)
    if len(extra):
        raise MeshFormatError(f"vertex {int(extra[0])} is not on the design surface")
    if d["method"] == "laplace":
        v = laplace_displacement(mesh, (ids, vals))
    elif d["method"] == "eikonal":
        e = settings["eikonal"]
        eps1 = solve_eikonal(mesh, _eikonal_config(e, (FARFIELD,)))
        eps2 = solve_eikonal(mesh, _eikonal_config(e, (DESIGN,)))
        cfg = DeformConfig(alpha=d["alpha"], beta=d["beta"], floor=d["floor"], supg=d["supg"])
        v = solve_displacement(mesh, eps1, eps2, (ids, vals), cfg)
    else:
        raise UsageError(f"unknown deformation method {d['method']!r}")
    new = apply_displacement(mesh, v)
    write_vtk(new, {"displacement": v}, args.out)
    q = quality_report(new)
    if args.quality:
        with open(args.quality, "w") as fh:
            fh.write(_quality_csv(q))
    sys.stdout.write(f"inverted={q.inverted} min_angle={q.min_angle!r}\n")


def cmd_optimize(args, settings):
    mesh = load_msh(args.mesh)
    o = settings["optimize"]
    r = settings["repair"]
    if o["objective"] not in OBJECTIVES:
        raise UsageError(f"unknown objective {o['objective']!r}")
    kwargs = {"constraints": o["constraint"]}
    if o["objective"] == "radial":
        kwargs["radius"] = o["radius"]
    if o["objective"] == "perimeter":
        kwargs["symmetry_axes"] = o["symmetry_axes"]
    try:
        spec = OBJECTIVES[o["objective"]](**kwargs)
        if o["objective"] != "perimeter" and o["symmetry_axes"]:
            spec.symmetry_axes = o["symmetry_axes"]
        cfg = DriverConfig(
            delta=o["delta"], step=o["step"], max_move=o["max_move"], max_iter=o["max_iter"],
            gtol=o["gtol"], armijo=o["armijo"], backtrack=o["backtrack"],
            max_trials=o["max_trials"], repair=o["repair"], repair_tol=r["tol"],
            repair_max_iter=r["max_iter"], design_markers=r["marker"], eikonal_h=o["h"],
            deform=DeformConfig(alpha=o["alpha"], beta=o["beta"], floor=o["floor"]),
            vtk_dir=args.vtk_dir,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    hist, final = run_optimize(mesh, spec, cfg, history_csv=args.out_history)
    if args.out:
        if args.out.endswith(".vtk"):
            write_vtk(final, {}, args.out)
        else:
            save_msh(final, args.out)
    sys.stdout.write(f"status={hist.status} iterations={len(hist.records)}\n")


def cmd_generate(args, settings):
    n = args.resolution
    if n < 8:
        raise UsageError("resolution must be at least 8")
    if args.kind == "disk":
        mesh = generators.disk_mesh(1.0, n)
    elif args.kind == "ellipse":
        mesh = generators.ellipse_mesh(1.0, 0.5, n)
    elif args.kind == "benchmark":
        mesh = generators.benchmark_mesh(8 * max(1, n // 8), max(4, n // 4))
    elif args.kind == "ellipse-hole":
        mesh = generators.box_with_hole_mesh(0.8, 0.4, 1.5, 8 * max(1, n // 8), max(4, n // 4))
    elif args.kind == "annulus":
        mesh = generators.annulus_mesh(0.5, 1.5, n, max(4, n // 4))
    else:
        mesh = generators.strip_mesh(n)
    save_msh(mesh, args.out)


HANDLERS = {
    "quality": cmd_quality,
    "eikonal": cmd_eikonal,
    "repair": cmd_repair,
    "deform": cmd_deform,
    "optimize": cmd_optimize,
    "generate": cmd_generate,
}


def _error_line(exc):
    msg = str(exc).replace("\n", " ")
    return f"error: type={type(exc).__name__} message={msg}\n"


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if getattr(args, "threads", 1) < 1:
            raise UsageError("--threads must be at least 1")
        settings = load_settings(args, COMMAND_SECTIONS[args.command])
        HANDLERS[args.command](args, settings)
    except UsageError as exc:
        sys.stderr.write(f"meshmorph {args.command}: {exc}\n")
        return 2
    except (MeshMorphError, OSError) as exc:
        sys.stderr.write(_error_line(exc))
        return 1
    return 0
