"""Command-line entry point: ``swb <subcommand> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .errors import SwbError
from .oracles import gaussian_oracle
from .parallel import run_tcp_worker, serve_master
from .support import load_grid, save_grid

log = logging.getLogger("swb")

# flags that map one-to-one onto ExperimentConfig fields
_CONFIG_FLAGS = [
    ("--J", int), ("--n", int), ("--gamma", float), ("--iterations", int), ("--window", int),
    ("--schedule", str), ("--kappa", float), ("--drift", float), ("--center-spread", float),
    ("--means", str), ("--sigma", float), ("--refine-ns", str), ("--eval-samples", int),
    ("--data", str), ("--n-points", int), ("--dim", int), ("--proposal-sigma", float),
    ("--burn-in", int), ("--thinning", int), ("--prior-sigma", float),
    ("--likelihood-power", float), ("--w2-samples", int), ("--gammas", str),
    ("--snapshot-every", int),
]


def _common(p: argparse.ArgumentParser, with_config: bool = True) -> None:
    if with_config:
        p.add_argument("--config", type=Path, help="INI file with an [experiment] section")
        for flag, typ in _CONFIG_FLAGS:
            p.add_argument(flag, type=typ, default=None)
        p.add_argument("--transport", choices=["inproc", "tcp"], default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=Path, default=None, help="output directory")


def _config(args, kind: str) -> ex.ExperimentConfig:
    base = ex.ExperimentConfig.for_kind(kind)
    if args.config:
        base = base.updated(**ex.read_ini(args.config))
    overrides = {"kind": kind, "seed": args.seed, "transport": args.transport}
    for flag, _ in _CONFIG_FLAGS:
        name = flag[2:].replace("-", "_")
        overrides[name] = getattr(args, name)
    return base.updated(**overrides)


def _finish(report: ex.RunReport, args) -> None:
    if args.out is not None:
        report.write(args.out)
        log.info("wrote %s", args.out)
    wr = ex.csv.writer(sys.stdout)
    wr.writerow(report.columns)
    for r in report.rows:
        wr.writerow([f"{v:.17g}" if isinstance(v, (float, np.floating)) else v for v in r])


def cmd_run(args) -> int:
    _finish(ex.cmd_run(_config(args, "custom")), args)
    return 0


def cmd_vmf(args) -> int:
    _finish(ex.cmd_vmf_drift(_config(args, "vmf-drift")), args)
    return 0


def cmd_wasp(args) -> int:
    _finish(ex.cmd_wasp(_config(args, "wasp")), args)
    return 0


def cmd_refine(args) -> int:
    _finish(ex.cmd_refinement_sweep(_config(args, "custom")), args)
    return 0


def cmd_eval_w2(args) -> int:
    print(f"{ex.cmd_eval_w2(args.a, args.b, args.subsample, args.seed or 0):.17g}")
    return 0


def _address(text: str):
    host, _, port = text.rpartition(":")
    return (host or "127.0.0.1", int(port))


def cmd_serve(args) -> int:
    grid = load_grid(args.grid)
    master = serve_master(
        _address(args.listen), grid, args.J, args.gamma, iterations=args.iterations,
        duration=args.duration, schedule=args.schedule, window=args.window or None,
        stats_sink=sys.stderr if args.stats_every else None, stats_every=args.stats_every,
        ready=lambda addr: log.info("listening on %s:%d", *addr),
    )
    report = ex.RunReport(["iteration"], [(master.t,)], master.weights(), grid,
                          {"J": args.J, "gamma": args.gamma, "iterations": master.t})
    if args.out is not None:
        report.write(args.out)
    for w in master.weights():
        print(f"{w:.17g}")
    return 0


def cmd_worker(args) -> int:
    grid = load_grid(args.grid)
    mean = [float(t) for t in args.mean.replace(",", " ").split()]
    oracle = gaussian_oracle(mean, args.sigma, seed=args.seed)
    w = run_tcp_worker(_address(args.connect), args.worker_id, grid, oracle, args.gamma, args.J)
    log.info("worker %d done after %d iterations", args.worker_id, w.iterations)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        np.savetxt(args.out / f"v{args.worker_id}.txt", w.v, fmt="%.17g")
    return 0


def cmd_make_grid(args) -> int:
    cfg = _config(args, "custom")
    means = [[float(t) for t in row.replace(",", " ").split()] for row in cfg.means.split(";") if row.strip()]
    grid = ex.mesh_grid(ex.gaussian_box(means, cfg.sigma), cfg.n)
    save_grid(grid, args.path)
    print(json.dumps({"path": str(args.path), "n": grid.n}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="swb", description="Stochastic Wasserstein barycenters on a fixed support.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="barycenter of isotropic Gaussians on a box mesh")
    _common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("vmf-drift", help="track the barycenter of drifting vMF measures")
    _common(p)
    p.set_defaults(func=cmd_vmf)

    p = sub.add_parser("wasp", help="merge subset posteriors of a logistic regression")
    _common(p)
    p.set_defaults(func=cmd_wasp)

    p = sub.add_parser("refine", help="objective and cover radius for a list of grid sizes")
    _common(p)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("eval-w2", help="W2 between two point files")
    p.add_argument("a", type=Path)
    p.add_argument("b", type=Path)
    p.add_argument("--subsample", type=int, default=None, help="subsample each side to this many points")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval_w2)

    p = sub.add_parser("make-grid", help="write the mesh used by `run` to a grid file")
    _common(p)
    p.add_argument("path", type=Path)
    p.set_defaults(func=cmd_make_grid)

    p = sub.add_parser("serve-master", help="TCP master for workers in other processes")
    p.add_argument("--grid", type=Path, required=True)
    p.add_argument("--listen", default="127.0.0.1:7070")
    p.add_argument("--J", type=int, required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--duration", type=float, default=None)
    p.add_argument("--schedule", choices=["arrival", "round_robin"], default="arrival")
    p.add_argument("--window", type=int, default=0)
    p.add_argument("--stats-every", type=int, default=0)
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("worker", help="TCP worker sampling an isotropic Gaussian")
    p.add_argument("--grid", type=Path, required=True)
    p.add_argument("--connect", default="127.0.0.1:7070")
    p.add_argument("--worker-id", type=int, required=True)
    p.add_argument("--J", type=int, required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--mean", required=True)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_worker)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SwbError, OSError) as exc:
        print(f"swb: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
