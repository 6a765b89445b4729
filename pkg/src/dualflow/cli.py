"""Command-line front end.

Subcommands:

* ``run <config>``: drive a simulation from a flat key-value config file
  (``--override key=value`` wins over file entries, ``--mesh`` swaps in an
  external mesh file, ``--out-dir`` redirects outputs).
* ``bench <id>``: run a named benchmark at its published settings.
* ``convergence <id> --levels k``: refinement study; writes per-level error
  CSVs, a manifest, and prints the observed orders.
* ``cut``: run a case and write only the 1D line cut.

Outputs land in the chosen directory: ``solution.vtk``, ``cut*.csv``,
``errors_L*.csv``, ``diagnostics.csv``, ``manifest.json``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import bench as B
from .driver import ConfigurationError, Simulation, run
from .mesh import build_dual, read_mesh
from .output import write_cut_csv, write_error_csv, write_vtk
from .state import ModelParams
from .transport import TransportConfig

_FLOAT_KEYS = {"cfl", "t_end", "dt_max", "dt_fixed", "c_alpha", "cg_tol",
               "newton_tol", "relax_rtol", "gamma", "cv", "cs", "ch", "mu",
               "kappa", "tau1", "tau2", "rho0", "T0", "eno_margin", "alpha",
               "p_background"}
_INT_KEYS = {"nx", "levels", "output_every", "cg_maxiter", "n_samples"}


def parse_config(path):
    """Flat ``key = value`` text; '#' starts a comment."""
    conf = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(
                    f"{path}:{lineno}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            conf[key] = val
    return conf


def _coerce(conf):
    out = {}
    for key, val in conf.items():
        if isinstance(val, str):
            if key in _FLOAT_KEYS:
                val = float(val)
            elif key in _INT_KEYS:
                val = int(val)
        out[key] = val
    return out


def _case_options(conf):
    opts = {}
    if "mu" in conf and conf.get("case") == "stokes-first":
        opts["mu"] = conf["mu"]
    if conf.get("case") == "acoustic-wave":
        if "alpha" in conf:
            opts["alpha"] = conf["alpha"]
        if "center" in conf:
            opts["center"] = tuple(float(v) for v in
                                   str(conf["center"]).split(","))
    if conf.get("case") == "double-shear-layer":
        if "model" in conf:
            opts["model"] = conf["model"]
        if "p_background" in conf:
            opts["p_background"] = conf["p_background"]
    return opts


def build_setup(conf):
    """Resolve a config dict into (case, transport overrides applied)."""
    if "case" not in conf:
        raise ConfigurationError("config needs a 'case' entry "
                                 f"(one of {', '.join(B.CASE_IDS)})")
    case = B.get_case(conf["case"], **_case_options(conf))
    tc = case.transport
    if "limiter" in conf:
        tc.limiter = conf["limiter"]
    if "c_alpha" in conf:
        tc.c_alpha = conf["c_alpha"]
    if "eno_margin" in conf:
        tc.eno_margin = conf["eno_margin"]
    for key in ("cfl", "t_end", "dt_max"):
        if key in conf:
            setattr(case, key if key != "dt_max" else "dt_max", conf[key])
    return case


def _sim_options(conf):
    opts = {}
    for key in ("cg_tol", "cg_maxiter", "newton_tol", "relax_rtol"):
        if key in conf:
            opts[key] = conf[key]
    return opts


def run_and_write(case, conf, out_dir, mesh_path=None):
    os.makedirs(out_dir, exist_ok=True)
    nx = conf.get("nx") or case.default_nx
    if mesh_path:
        primal = read_mesh(mesh_path)
        dual = build_dual(primal)
        sim = Simulation(primal, dual, case.params, bcs=case.bcs,
                         transport_cfg=case.transport,
                         **_sim_options(conf))
        fields = case.init(primal, dual)
    else:
        primal, dual = case.make_mesh(nx)
        sim = Simulation(primal, dual, case.params, bcs=case.bcs,
                         transport_cfg=case.transport,
                         **_sim_options(conf))
        fields = case.init(primal, dual)

    cap = case.dt_max if "dt_max" not in conf else conf["dt_max"]
    if np.abs(fields.m).max() == 0.0:
        cap = min(cap, B.quiescent_dt_cap(case, dual, fields, case.cfl))
    dt_fixed = conf.get("dt_fixed")

    every = conf.get("output_every", 0)
    observers = []

    def observer(t, step, flds, diag):
        if every and (step + 1) % every == 0:
            write_vtk(os.path.join(out_dir, f"solution_{step + 1:06d}.vtk"),
                      primal, dual, flds, case.params)

    history = run(sim, fields, t_end=case.t_end, cfl=case.cfl, dt_max=cap,
                  dt_fixed=dt_fixed, observer=observer if every else None)

    write_vtk(os.path.join(out_dir, "solution.vtk"), primal, dual, fields,
              case.params)
    with open(os.path.join(out_dir, "diagnostics.csv"), "w") as f:
        f.write("t,dt,mass,momentum_x,momentum_y,energy,max_speed,"
                "div_residual,cg_iterations\n")
        for d in history:
            f.write(f"{d.t:.12e},{d.dt:.12e},{d.mass:.12e},"
                    f"{d.momentum[0]:.12e},{d.momentum[1]:.12e},"
                    f"{d.energy:.12e},{d.max_speed:.12e},"
                    f"{d.div_residual:.6e},{d.cg_iterations}\n")
    return primal, dual, sim, fields, history


def _parse_line(spec, primal):
    """Cut line syntax: 'y=0.0', 'x=0.5' or 'x0,y0:x1,y1'."""
    lo = primal.vertices.min(axis=0)
    hi = primal.vertices.max(axis=0)
    spec = spec.strip()
    if spec.startswith("y="):
        y = float(spec[2:])
        return (lo[0], y), (hi[0], y)
    if spec.startswith("x="):
        x = float(spec[2:])
        return (x, lo[1]), (x, hi[1])
    a, b = spec.split(":")
    return (tuple(float(v) for v in a.split(",")),
            tuple(float(v) for v in b.split(",")))


def cmd_run(args):
    conf = _coerce(parse_config(args.config))
    for item in args.override or []:
        key, val = item.split("=", 1)
        conf[key.strip()] = val.strip()
    conf = _coerce(conf)
    case = build_setup(conf)
    out_dir = args.out_dir or conf.get("out_dir", "out")
    primal, dual, sim, fields, _ = run_and_write(case, conf, out_dir,
                                                 mesh_path=args.mesh)
    if "cut" in conf:
        start, end = _parse_line(str(conf["cut"]), primal)
        write_cut_csv(os.path.join(out_dir, "cut.csv"), dual, fields,
                      start, end, conf.get("n_samples"))
    print(f"wrote {out_dir}/solution.vtk")
    return 0


def cmd_bench(args):
    conf = {"case": args.case}
    if args.nx:
        conf["nx"] = args.nx
    case = build_setup(_coerce(conf))
    out_dir = args.out_dir or f"out/{args.case}"
    primal, dual, sim, fields, history = run_and_write(case, conf, out_dir)
    if case.exact is not None:
        variables = ("u",) if case.name.startswith("taylor") \
            else ("rho", "u", "p")
        if case.name == "stokes-first":
            variables = ("u",)
        errors = B.error_norms(dual, fields,
                               lambda p: case.exact(p, case.t_end), variables)
        write_error_csv(os.path.join(out_dir, "errors.csv"), errors)
        for var, (l2, linf) in errors.items():
            print(f"L2({var}) = {l2:.6e}   Linf({var}) = {linf:.6e}")
    start, end = _parse_line(args.cut or "y=0.0", primal)
    write_cut_csv(os.path.join(out_dir, "cut.csv"), dual, fields, start, end)
    print(f"wrote {out_dir}/ (solution.vtk, cut.csv, diagnostics.csv)")
    return 0


def cmd_convergence(args):
    case0 = build_setup({"case": args.case})
    if case0.exact is None:
        raise ConfigurationError(
            f"{args.case} has no exact reference for a convergence study")
    out_dir = args.out_dir or f"out/{args.case}-convergence"
    os.makedirs(out_dir, exist_ok=True)
    variables = ("u", "p") if case0.name.startswith("taylor-green-inc") \
        else ("rho", "u", "p")
    if case0.name == "stokes-first":
        variables = ("u",)
    nx0 = args.nx or case0.default_nx
    manifest = {"case": args.case, "levels": []}
    series = {v: [] for v in variables}
    for lvl in range(args.levels):
        nx = nx0 * 2**lvl
        case = build_setup({"case": args.case})
        conf = {"nx": nx}
        primal, dual, sim, fields, _ = run_and_write(
            case, conf, os.path.join(out_dir, f"L{lvl}"))
        errors = B.error_norms(dual, fields,
                               lambda p: case.exact(p, case.t_end), variables)
        err_path = os.path.join(out_dir, f"errors_L{lvl}.csv")
        write_error_csv(err_path, errors)
        manifest["levels"].append({
            "level": lvl, "nx": nx, "elements": primal.n_triangles,
            "errors": err_path,
            "cuts": [],
        })
        for v in variables:
            series[v].append(errors[v][0])
        line = f"L{lvl} nx={nx:5d}"
        for v in variables:
            line += f"  L2({v})={errors[v][0]:.4e}"
            if lvl:
                order = np.log2(series[v][-2] / series[v][-1])
                line += f" (O={order:.2f})"
        print(line)
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)
    print(f"wrote {out_dir}/manifest.json")
    return 0


def cmd_cut(args):
    conf = {"case": args.case}
    if args.nx:
        conf["nx"] = args.nx
    case = build_setup(_coerce(conf))
    out_dir = args.out_dir or f"out/{args.case}"
    primal, dual, sim, fields, _ = run_and_write(case, conf, out_dir)
    start, end = _parse_line(args.line, primal)
    path = os.path.join(out_dir, "cut.csv")
    write_cut_csv(path, dual, fields, start, end, args.n_samples)
    print(f"wrote {path}")
    return 0


def main(argv=None):
    ap = argparse.ArgumentParser(
        prog="dualflow",
        description="Hybrid FV/FE solver for incompressible and weakly "
                    "compressible continuum media on staggered triangular "
                    "grids")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p_run = sub.add_parser("run", help="run from a config file")
    p_run.add_argument("config")
    p_run.add_argument("--override", action="append", metavar="KEY=VALUE")
    p_run.add_argument("--mesh", help="external mesh file (plain-text format)")
    p_run.add_argument("--out-dir")
    p_run.set_defaults(func=cmd_run)

    p_bench = sub.add_parser("bench", help="run a named benchmark")
    p_bench.add_argument("case", choices=B.CASE_IDS)
    p_bench.add_argument("--nx", type=int)
    p_bench.add_argument("--cut", help="cut line, e.g. y=0")
    p_bench.add_argument("--out-dir")
    p_bench.set_defaults(func=cmd_bench)

    p_conv = sub.add_parser("convergence", help="refinement study")
    p_conv.add_argument("case", choices=B.CASE_IDS)
    p_conv.add_argument("--levels", type=int, default=4)
    p_conv.add_argument("--nx", type=int, help="coarsest level divisions")
    p_conv.add_argument("--out-dir")
    p_conv.set_defaults(func=cmd_convergence)

    p_cut = sub.add_parser("cut", help="run a case and write a line cut")
    p_cut.add_argument("case", choices=B.CASE_IDS)
    p_cut.add_argument("--line", required=True, help="'y=0', 'x=0.5' or "
                                                     "'x0,y0:x1,y1'")
    p_cut.add_argument("--nx", type=int)
    p_cut.add_argument("--n-samples", type=int, dest="n_samples")
    p_cut.add_argument("--out-dir")
    p_cut.set_defaults(func=cmd_cut)

    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
