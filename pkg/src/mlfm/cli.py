"""Command line front end: ``mlfm {simulate,truth,fit,compare,experiment}``.

Trajectory files are CSV with columns ``t, x, y, g, G``: one row per
observation, ``g`` the true force there and ``G`` the true integral over the
interval ending at ``t`` (blank on the first row). Distribution files are
JSON objects with ``mean`` and row-major ``cov``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from .core import MlfmModel, PicardConfig
from .gaussian import GaussianDist, wasserstein2
from .harness import (ConfigError, ExperimentConfig, format_value, load_config, obs_grid,
                      raw_csv, replication_seed, run_experiment, summary_csv)
from .inference import marginal_at_obs, optimize_hyper
from .kernels import RbfKernel
from .kubo import KuboTrajectory, extract_angles, ground_truth_conditional, kubo_structure_basis, simulate_exact
from .quadrature import build_grid

log = logging.getLogger("mlfm")

TRAJ_COLUMNS = ["t", "x", "y", "g", "G"]


def _load_config(path, seed):
    cfg = load_config(path) if path else ExperimentConfig()
    return cfg if seed is None else replace(cfg, seed=seed)


def write_trajectory(path, traj: KuboTrajectory):
    g_obs = traj.true_g[np.searchsorted(traj.node_times, traj.times)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRAJ_COLUMNS)
        for i, t in enumerate(traj.times):
            big = format_value(float(traj.true_G[i - 1])) if i > 0 else ""
            writer.writerow([format_value(float(t)), format_value(float(traj.states[i, 0])),
                             format_value(float(traj.states[i, 1])), format_value(float(g_obs[i])), big])


def read_trajectory(path) -> KuboTrajectory:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"t", "x", "y"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: trajectory needs columns t, x, y")
        recs = list(reader)
    if len(recs) < 2:
        raise ValueError(f"{path}: need at least two observations")
    times = np.array([float(r["t"]) for r in recs])
    states = np.array([[float(r["x"]), float(r["y"])] for r in recs])
    return KuboTrajectory(times=times, states=states)


def write_dist(path, dist: GaussianDist, **extra):
    obj = dist.to_json()
    obj.update(_jsonable(extra))
    text = json.dumps(obj, indent=1)
    with open(path, "w") as fh:
        fh.write(text + "\n")


def read_dist(path) -> GaussianDist:
    with open(path) as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict) or "mean" not in obj or "cov" not in obj:
        raise ValueError(f"{path}: expected a JSON object with 'mean' and 'cov'")
    return GaussianDist.from_json(obj)


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value)
    return value


def cmd_simulate(args):
    cfg = _load_config(args.config, args.seed)
    T = args.T if args.T is not None else cfg.T_values[0]
    dt = args.dt if args.dt is not None else cfg.dt_values[0]
    grid = obs_grid(T, dt)
    sim_seq, _ = replication_seed(cfg.seed, T, dt, args.rep).spawn(2)
    traj = simulate_exact(cfg.kernel, grid, cfg.x0, np.random.default_rng(sim_seq))
    write_trajectory(args.out, traj)
    log.info("wrote %d observations to %s", traj.times.size, args.out)


def cmd_truth(args):
    traj = read_trajectory(args.traj)
    grid = build_grid(traj.times)
    dist = ground_truth_conditional(RbfKernel(*args.psi), grid, extract_angles(traj))
    write_dist(args.out, dist, times=traj.times.tolist())


def cmd_fit(args):
    if args.order < 1:
        raise ValueError("--order must be >= 1")
    cfg = _load_config(args.config, None)
    traj = read_trajectory(args.traj)
    grid = build_grid(traj.times)
    model = MlfmModel.build(kubo_structure_basis(), grid,
                            PicardConfig(args.order, cfg.gamma_scale, np.ones((2, 2))))
    seed = 0 if args.seed is None else args.seed
    phi, result = optimize_hyper(traj.state_vector(), cfg.fit, model, RbfKernel(*args.psi),
                                 np.random.default_rng(seed))
    diagnostics = dict(result.diagnostics)
    diagnostics["phi"] = phi
    diagnostics["log_posterior_at_map"] = result.log_posterior_at_map
    write_dist(args.out, marginal_at_obs(result, grid), times=traj.times.tolist(),
               order=args.order, map_g_nodes=result.map_g.reshape(-1),
               nodes=grid.nodes, diagnostics=diagnostics)
    if not diagnostics["converged"]:
        log.warning("optimiser stopped without meeting its tolerance")


def cmd_compare(args):
    a, b = read_dist(args.a), read_dist(args.b)
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    print(repr(wasserstein2(a, b)))


def cmd_experiment(args):
    cfg = _load_config(args.config, args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    raw, summary = run_experiment(cfg, workers=args.workers)
    with open(os.path.join(args.out_dir, "raw.csv"), "w", newline="") as fh:
        fh.write(raw_csv(raw, record_wall_time=args.record_wall_time))
    with open(os.path.join(args.out_dir, "summary.csv"), "w", newline="") as fh:
        fh.write(summary_csv(summary))
    log.info("wrote %d raw rows and %d summary rows to %s", len(raw), len(summary), args.out_dir)


def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted before or after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed")
    common.add_argument("--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="mlfm", description=__doc__.splitlines()[0],
                                     parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate one exact Kubo trajectory")
    p.add_argument("--config", help="experiment config JSON (defaults used if absent)")
    p.add_argument("--out", required=True)
    p.add_argument("--T", type=float, help="interval length (default: first of T_values)")
    p.add_argument("--dt", type=float, help="spacing (default: first of dt_values)")
    p.add_argument("--rep", type=int, default=0, help="replication index for the seed stream")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("truth", parents=[common], help="exact conditional of g at the observations")
    p.add_argument("--traj", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--psi", type=float, nargs=2, default=(1.0, 1.0), metavar=("VAR", "LEN"))
    p.set_defaults(func=cmd_truth)

    p = sub.add_parser("fit", parents=[common], help="MAP + Laplace fit at one order")
    p.add_argument("--traj", required=True)
    p.add_argument("--order", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="experiment config JSON supplying fit settings and gamma_scale")
    p.add_argument("--psi", type=float, nargs=2, default=(1.0, 1.0), metavar=("VAR", "LEN"))
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("compare", parents=[common], help="Wasserstein-2 distance of two JSON Gaussians")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("experiment", parents=[common], help="replication study")
    p.add_argument("--config", help="experiment config JSON (defaults used if absent)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--record-wall-time", action="store_true",
                   help="fill wall_time_s (output is then no longer reproducible byte for byte)")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.seed = getattr(args, "seed", None)
    args.verbose = getattr(args, "verbose", False)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, ValueError, OSError, KeyError, np.linalg.LinAlgError,
            RuntimeError, FloatingPointError) as exc:
        print(f"mlfm {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0
