"""Command line: ``stdgdd {run,sweep,predict,fit,mesh}``.

Exit codes: 0 success, 2 bad configuration or input, 3 a solver failed to
converge, 4 any other failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..adaptdd import FitError, History, fit_models
from ..mesh import build_structured_mesh, write_mesh
from .config import ConfigError, load_config
from .driver import ConvergenceError, RunError, predict_report, run, sweep

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_INTERNAL = 0, 2, 3, 4


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    over = {}
    if args.out:
        over["output_dir"] = str(args.out)
    if args.repeat:
        over.update(timing="measured", repeats=args.repeat)
    cfg = cfg.with_(**over) if over else cfg
    summary = run(cfg, progress=None if args.quiet else
                  lambda c: print(f"step {c.step:3d}  Nh={c.Nhm:7d}  M={c.M:3d}  s={c.s:3d}  iterN={c.iterN:2d}  "
                                  f"iterL={c.iterL:4d}  callC={c.callC:2d}  costs={c.costs:.4e}", flush=True))
    for k, v in summary.totals.items():
        print(f"{k:>6} = {v:.6g}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    res = sweep(cfg, args.M, args.s)
    for note in res.notes:
        print(f"skipped: {note}", file=sys.stderr)
    if args.out:
        res.write_csv(args.out)
    else:
        res.write_csv(sys.stdout)
    return EXIT_OK


def _cmd_predict(args) -> int:
    hist = History.read_csv(args.history)
    rep = predict_report(hist, args.nh, args.elems, args.budget, args.n_min, args.mlev)
    print(rep.format(args.top))
    return EXIT_OK


def _cmd_fit(args) -> int:
    print(fit_models(History.read_csv(args.history), args.mlev).describe())
    return EXIT_OK


def _cmd_mesh(args) -> int:
    nx, ny = args.make
    mesh = build_structured_mesh(nx, ny)
    write_mesh(mesh.with_degree([args.degree] * mesh.n_elements), args.out)
    print(f"wrote {mesh.n_elements} triangles to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stdgdd", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="march a configured run")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
    p.add_argument("--repeat", type=int, default=0, help="measured timing with k repeats per system")
    p.add_argument("-q", "--quiet", action="store_true")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="fix(M) runs over an (M, s) grid on the base mesh")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--M", nargs="+", type=int, required=True)
    p.add_argument("--s", nargs="+", type=int, default=[1])
    p.add_argument("--out", type=Path)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("predict", help="rank (M, s) candidates from a history CSV")
    p.add_argument("--history", required=True, type=Path)
    p.add_argument("--nh", required=True, type=int)
    p.add_argument("--elems", required=True, type=int)
    p.add_argument("--budget", type=int, default=64)
    p.add_argument("--n-min", type=int, default=10)
    p.add_argument("--mlev", type=int, default=5)
    p.add_argument("--top", type=int, default=20)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("fit", help="print the models fitted to a history CSV")
    p.add_argument("--history", required=True, type=Path)
    p.add_argument("--mlev", type=int, default=5)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("mesh", help="write a structured mesh file")
    p.add_argument("--make", nargs=2, type=int, metavar=("NX", "NY"), required=True)
    p.add_argument("--degree", type=int, default=1)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=_cmd_mesh)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FitError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as err:
        print(f"convergence failure: {err}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except RunError as err:
        print(f"run failed: {err}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as err:  # noqa: BLE001 - last-resort category for the exit code
        print(f"internal error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
