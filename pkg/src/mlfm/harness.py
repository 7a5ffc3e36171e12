"""Replication study: exact Kubo simulations scored against Laplace fits.

One replication simulates one Kubo trajectory on ``[0, T]`` and fits it at
every truncation order. The score is the Wasserstein-2 distance between the
Laplace marginal at the observation times and the exact conditional law of
the force given the observed turning angles.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .core import DEFAULT_GAMMA_SCALE, MlfmModel, PicardConfig
from .gaussian import wasserstein2
from .inference import FitConfig, marginal_at_obs, optimize_hyper
from .kernels import RbfKernel
from .kubo import extract_angles, ground_truth_conditional, kubo_structure_basis, simulate_exact
from .quadrature import build_grid

log = logging.getLogger(__name__)

RAW_COLUMNS = ["T", "dt", "M", "rep", "wasserstein", "converged", "wrapped_flag", "wall_time_s"]
SUMMARY_COLUMNS = ["T", "dt", "M", "n_reps", "n_converged", "n_wrapped",
                   "mean_wasserstein", "sd_wasserstein", "se_wasserstein"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    T_values: tuple = (3.0, 6.0, 9.0)
    dt_values: tuple = (0.5, 1.0)
    orders: tuple = (3, 10)
    replications: int = 20
    seed: int = 0
    force_kernel: tuple = (1.0, 1.0)
    gamma_scale: float = DEFAULT_GAMMA_SCALE
    x0: tuple = (1.0, 0.0)
    fit: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        for name in ("T_values", "dt_values", "orders", "force_kernel", "x0"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if any(m < 1 for m in self.orders):
            raise ConfigError("orders must be >= 1")
        if len(self.force_kernel) != 2 or len(self.x0) != 2:
            raise ConfigError("force_kernel and x0 must have two entries")
        for T in self.T_values:
            for dt in self.dt_values:
                n_intervals(T, dt)

    @property
    def kernel(self) -> RbfKernel:
        return RbfKernel(*self.force_kernel)


def n_intervals(T: float, dt: float) -> int:
    """``T / dt`` as an integer, or ConfigError if it is not one."""
    if not (T > 0 and dt > 0):
        raise ConfigError(f"T and dt must be positive (T={T}, dt={dt})")
    ratio = T / dt
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > 1e-9 * max(ratio, 1.0):
        raise ConfigError(f"T / dt = {T} / {dt} is not a positive integer")
    return n


def config_from_dict(obj: dict) -> ExperimentConfig:
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(obj) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    obj = dict(obj)
    if "fit" in obj:
        fit_known = {f.name for f in fields(FitConfig)}
        bad = set(obj["fit"]) - fit_known
        if bad:
            raise ConfigError(f"unknown fit config keys: {sorted(bad)}")
        obj["fit"] = FitConfig(**obj["fit"])
    return ExperimentConfig(**obj)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict):
        raise ConfigError("config file must hold a JSON object")
    return config_from_dict(obj)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = asdict(cfg)
    for key, value in out.items():
        if isinstance(value, tuple):
            out[key] = list(value)
    return out


@dataclass
class ResultRow:
    T: float
    dt: float
    M: int
    rep: int
    wasserstein: float | None
    converged: bool
    wrapped_flag: bool
    wall_time_s: float

    @property
    def key(self):
        return (self.T, self.dt, self.M, self.rep)


def _milli(v: float) -> int:
    return int(round(v * 1000))


def replication_seed(master: int, T: float, dt: float, rep: int) -> np.random.SeedSequence:
    """Seed stream that depends only on ``(master, T, dt, rep)``."""
    return np.random.SeedSequence([master, _milli(T), _milli(dt), rep])


def obs_grid(T: float, dt: float):
    return build_grid(np.linspace(0.0, T, n_intervals(T, dt) + 1))


def run_replication(cfg: ExperimentConfig, T: float, dt: float, rep: int) -> list[ResultRow]:
    if not cfg.orders:
        return []
    seq = replication_seed(cfg.seed, T, dt, rep)
    sim_seq, fit_seq = seq.spawn(2)
    grid = obs_grid(T, dt)
    kernel = cfg.kernel
    traj = simulate_exact(kernel, grid, cfg.x0, np.random.default_rng(sim_seq))
    truth = ground_truth_conditional(kernel, grid, extract_angles(traj))
    x = traj.state_vector()
    basis = kubo_structure_basis()

    rows = []
    for M, order_seq in zip(cfg.orders, fit_seq.spawn(len(cfg.orders))):
        start = time.perf_counter()
        model = MlfmModel.build(basis, grid, PicardConfig(M, cfg.gamma_scale, np.ones((2, 2))))
        try:
            _, result = optimize_hyper(x, cfg.fit, model, kernel, np.random.default_rng(order_seq))
            dist = wasserstein2(marginal_at_obs(result, grid), truth)
            converged = bool(result.diagnostics["converged"])
        except (np.linalg.LinAlgError, RuntimeError, FloatingPointError) as exc:
            log.warning("fit failed T=%s dt=%s M=%s rep=%s: %s", T, dt, M, rep, exc)
            dist, converged = None, False
        rows.append(ResultRow(T, dt, M, rep, dist, converged, traj.wrapped,
                              time.perf_counter() - start))
        log.info("T=%s dt=%s M=%s rep=%s W=%s", T, dt, M, rep, dist)
    return rows


def _replication_task(args):
    cfg, T, dt, rep = args
    return run_replication(cfg, T, dt, rep)


def run_experiment(cfg: ExperimentConfig, workers: int = 1):
    """Run every ``(T, dt, rep)`` replication; return ``(raw_rows, summary_rows)``.

    Rows come back in config order whatever the worker count.
    """
    tasks = [(cfg, T, dt, rep)
             for T in cfg.T_values for dt in cfg.dt_values for rep in range(cfg.replications)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_replication_task, tasks))
    else:
        chunks = [_replication_task(t) for t in tasks]
    raw = [row for chunk in chunks for row in chunk]
    return raw, summarize(raw)


def summarize(rows: list[ResultRow]) -> list[dict]:
    groups: dict = {}
    for row in rows:
        groups.setdefault((row.T, row.dt, row.M), []).append(row)
    out = []
    for (T, dt, M), members in groups.items():
        vals = np.array([r.wasserstein for r in members
                         if r.converged and r.wasserstein is not None], dtype=float)
        n = vals.size
        mean = float(np.mean(vals)) if n else None
        sd = float(np.std(vals, ddof=1)) if n > 1 else (0.0 if n == 1 else None)
        se = sd / math.sqrt(n) if sd is not None else None
        out.append({
            "T": T, "dt": dt, "M": M,
            "n_reps": len(members),
            "n_converged": n,
            "n_wrapped": sum(r.wrapped_flag for r in members),
            "mean_wasserstein": mean,
            "sd_wasserstein": sd,
            "se_wasserstein": se,
        })
    return out


def format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def raw_csv(rows: list[ResultRow], record_wall_time: bool = False) -> str:
    """Raw results as CSV text.

    ``wall_time_s`` is left blank unless ``record_wall_time``; timings
    differ between runs and would break byte-for-byte reproducibility.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RAW_COLUMNS)
    for r in rows:
        writer.writerow([format_value(r.T), format_value(r.dt), r.M, r.rep, format_value(r.wasserstein),
                         format_value(r.converged), format_value(r.wrapped_flag),
                         format_value(r.wall_time_s) if record_wall_time else ""])
    return buf.getvalue()


def summary_csv(summary: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for s in summary:
        writer.writerow([format_value(s[c]) for c in SUMMARY_COLUMNS])
    return buf.getvalue()


def read_raw_csv(path) -> list[ResultRow]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(ResultRow(
                T=float(rec["T"]), dt=float(rec["dt"]), M=int(rec["M"]), rep=int(rec["rep"]),
                wasserstein=float(rec["wasserstein"]) if rec["wasserstein"] else None,
                converged=rec["converged"] == "true",
                wrapped_flag=rec["wrapped_flag"] == "true",
                wall_time_s=float(rec["wall_time_s"]) if rec["wall_time_s"] else float("nan"),
            ))
    return rows
