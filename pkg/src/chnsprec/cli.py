"""Command-line entry point: ``run``, ``study``, ``spectrum`` and
``precond-compare``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np


def _base_config(args):
    from .driver import PRESETS, RunConfig
    from .iohub import parse_config

    cfg = parse_config(args.config) if args.config else RunConfig(params=PRESETS[args.preset])
    upd = {}
    for key in ("nx", "ny", "solver", "mode"):
        if getattr(args, key, None) is not None:
            upd[key] = getattr(args, key)
    if getattr(args, "steps", None) is not None:
        upd["n_steps"] = args.steps
    if getattr(args, "out", None):
        upd["output_dir"] = args.out
    if getattr(args, "vtk_every", None):
        upd["vtk_every"] = args.vtk_every
    if getattr(args, "multilevel", False):
        from .precond import PrecondSettings
        upd["settings"] = PrecondSettings.multilevel()
    return replace(cfg, **upd)


def _add_run_args(p, steps_default=None):
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--preset", default="benchmark-1", choices=["benchmark-1", "benchmark-2"])
    p.add_argument("--nx", type=int)
    p.add_argument("--ny", type=int)
    p.add_argument("--steps", type=int, default=steps_default)
    p.add_argument("--solver", choices=["krylov", "direct"])
    p.add_argument("--mode", choices=["block-triangular", "baseline", "exact"])
    p.add_argument("--multilevel", action="store_true",
                   help="use AMG approximate inverses instead of direct solves")
    p.add_argument("--out", help="output directory for CSV/VTK files")


def cmd_run(args) -> int:
    from .driver import run
    from .errors import NonConvergenceError

    cfg = _base_config(args)
    dump = Path(args.dump_systems) if args.dump_systems else None

    def report(k, state, rec):
        print(f"step {rec.step:4d}  t={rec.time:.4g}  newton={rec.newton_iters}  "
              f"fgmres/newton={rec.mean_fgmres:.1f}  energy={rec.energy:.6g}  "
              f"cfl={rec.cfl_max:.3f}")

    history = None
    if dump is not None:
        history = _dump_systems(cfg, dump)
    try:
        stats, _, _ = run(cfg, history=history, callback=report)
    except NonConvergenceError as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return 2
    print(f"newton max {stats.max_newton}  avg {stats.avg_newton:.2f}  "
          f"mean fgmres {stats.mean_fgmres():.1f}")
    return 0


def _dump_systems(cfg, directory: Path):
    """Write the first Newton system of the first step, return the start history."""
    from .driver import init_two_step
    from .iohub import save_system
    from .mesh import build_dofmap, build_rect_mesh
    from .model import State, build_newton_system

    mesh = build_rect_mesh(cfg.width, cfg.height, cfg.nx, cfg.ny)
    dof = build_dofmap(mesh, cfg.bc)
    history = init_two_step(cfg.params, mesh, dof)
    state = State(v=history.v_km1.copy(), p=np.zeros(dof.n1), phi=history.phi_km1.copy(),
                  mu=history.mu_km1.copy())
    save_system(build_newton_system(state, history, cfg.params, mesh, dof), directory)
    print(f"saved Newton system to {directory}")
    return history


def cmd_study(args) -> int:
    from .driver import run_study

    base = _base_config(args)
    if args.nx is None:
        base = replace(base, nx=32, ny=64)
    res = run_study(args.preset_name, base)
    print(f"{'member':>16} {'max newton':>10} {'avg newton':>10} {'fgmres/newton':>14}")
    for label, mx, avg, fg in res.table():
        print(f"{label:>16} {mx:>10d} {avg:>10.2f} {fg:>14.1f}")
    for label, msg in res.failures.items():
        print(f"{label}: FAILED ({msg})")
    return 1 if res.failures else 0


def cmd_spectrum(args) -> int:
    from .driver import PRESETS
    from .mesh import build_rect_mesh
    from .spectra import sweep, write_csv

    mesh = build_rect_mesh(1.0, 2.0, args.nx, args.ny)
    params = PRESETS[args.preset]
    if args.tau is not None:
        params = params.with_(tau=args.tau)
    res = sweep(mesh, [params], args.samples, seed=args.seed, lumped=not args.consistent,
                method=args.method)
    worst = max(res.reports, key=lambda r: r.measured_radius / max(r.bound_radius, 1e-300))
    ok = all(r.contained() for r in res.reports)
    print(f"alpha={worst.alpha:.6g} beta={worst.beta:.6g}")
    print(f"max measured radius {max(r.measured_radius for r in res.reports):.6g}, "
          f"bound {worst.bound_radius:.6g}, inclusion {'holds' if ok else 'VIOLATED'}")
    if args.csv:
        write_csv(res, args.csv)
    return 0 if ok else 1


def cmd_precond_compare(args) -> int:
    from .iohub import load_system
    from .precond import compare_preconditioners

    worse = 0
    print(f"{'system':>24} {'block-tri':>9} {'baseline':>9} {'baseline(F30)':>13}")
    for d in args.systems:
        cmp = compare_preconditioners(load_system(d))
        worse += cmp.block_triangular > cmp.baseline
        print(f"{d:>24} {cmp.block_triangular:>9d} {cmp.baseline:>9d} {cmp.baseline_fgmres:>13d}")
    print(f"block-triangular needed more iterations on {worse} of {len(args.systems)}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="chnsprec", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="single rising-bubble simulation")
    _add_run_args(p)
    p.add_argument("--vtk-every", type=int, default=0)
    p.add_argument("--dump-systems", help="save the first Newton system here (Matrix Market)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("study", help="parameter-study preset")
    p.add_argument("preset_name", choices=["vary-all", "vary-sigma", "vary-Re",
                                           "vary-mobility", "vary-penalty",
                                           "benchmark-2-topology"])
    _add_run_args(p, steps_default=10)
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("spectrum", help="spectral inclusion check")
    p.add_argument("--preset", default="benchmark-1", choices=["benchmark-1", "benchmark-2"])
    p.add_argument("--nx", type=int, default=16)
    p.add_argument("--ny", type=int, default=32)
    p.add_argument("--tau", type=float)
    p.add_argument("--samples", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--consistent", action="store_true", help="consistent instead of lumped mass")
    p.add_argument("--method", choices=["reduced", "full"], default="reduced")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("precond-compare", help="baseline vs block-triangular on saved systems")
    p.add_argument("systems", nargs="+", help="directories written by run --dump-systems")
    p.set_defaults(func=cmd_precond_compare)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)
