"""Grid sweeps: run every (cell, replicate) of a plan and persist the results.

Results CSV columns (fixed order, see ``COLUMNS``); floats carry 12
significant digits and not-applicable values are empty strings.
"""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, thermo
from .analysis import GridResult, StationaryStats, stationary_stats
from .geometry import LossModel
from .plan import ExperimentPlan
from .simulate import Protocol, ProtocolConfig, auto_stride, run

__all__ = ["COLUMNS", "SchemaError", "cell_seed", "loss_model", "run_cell", "run_sweep",
           "read_results", "grid_from_rows", "load_grid"]

COLUMNS = (
    "protocol", "eta", "eta_eff", "lambda", "radius_fixed", "sigma", "d", "iterations", "seed",
    "diverged", "U_mean", "r_emp", "sigma2_emp", "grad_sq_mean", "lambda_eff_emp", "S_sphere",
    "S_total", "n_dropped", "T_theory", "r_star_sde", "r_star_discr", "F", "G",
)
_STATS = ("U_mean", "r_emp", "sigma2_emp", "grad_sq_mean", "lambda_eff_emp", "S_sphere", "S_total")
_INT_COLUMNS = frozenset({"d", "iterations", "seed", "n_dropped"})
_AXIS_COLUMN = {"eta": "eta", "eta_eff": "eta_eff", "lambda": "lambda", "radius": "radius_fixed"}


class SchemaError(ValueError):
    """A results file does not follow the ResultRow schema."""


def cell_seed(plan_seed: int, cell: int, replicate: int) -> int:
    """64-bit generator seed derived from the plan seed and the cell/replicate indices."""
    ss = np.random.SeedSequence([plan_seed, cell, replicate])
    return int(ss.generate_state(1, np.uint64)[0])


def loss_model(plan: ExperimentPlan) -> LossModel:
    if plan.mu is not None:
        mu = np.asarray(plan.mu, dtype=float)
        return LossModel(mu / np.linalg.norm(mu))
    return LossModel.random(plan.d, plan.mu_seed)


def cell_config(plan: ExperimentPlan, cell: int, replicate: int) -> ProtocolConfig:
    n2 = plan.axes[1].count
    i, j = divmod(cell, n2)
    kw = {plan.axes[0].name: float(plan.axes[0].values()[i]),
          plan.axes[1].name: float(plan.axes[1].values()[j])}
    if "lambda" in kw:
        kw["lam"] = kw.pop("lambda")
    return ProtocolConfig(plan.protocol, sigma=plan.sigma, d=plan.d, iterations=plan.iterations,
                          seed=cell_seed(plan.seed, cell, replicate), **kw)


def run_cell(plan: ExperimentPlan, cell: int, replicate: int) -> dict:
    """Simulate one (cell, replicate) and return its result row as a dict of values."""
    cfg = cell_config(plan, cell, replicate)
    stride = plan.queue_stride
    if stride == "auto":
        stride = auto_stride(cfg, plan.log_every)
    try:
        traj = run(cfg, loss_model(plan), warmup=int(plan.warmup * plan.iterations),
                   queue_size=plan.queue_size, queue_stride=stride,
                   log_every=plan.log_every)
        stats = stationary_stats(traj, cfg, plan.entropy_every, plan.entropy_logs)
    except Exception:  # a failed cell is flagged, the sweep goes on
        stats = StationaryStats(sigma2_emp=cfg.sigma**2, diverged=True)
    return make_row(cfg, stats)


def make_row(cfg: ProtocolConfig, stats: StationaryStats) -> dict:
    row = {c: None for c in COLUMNS}
    row.update(protocol=cfg.protocol.value, eta=cfg.eta, eta_eff=cfg.eta_eff, radius_fixed=cfg.radius,
               sigma=cfg.sigma, d=cfg.d, iterations=cfg.iterations, seed=cfg.seed,
               diverged=stats.diverged, n_dropped=stats.n_dropped)
    row["lambda"] = cfg.lam
    s2 = stats.sigma2_emp if math.isfinite(stats.sigma2_emp) else cfg.sigma**2
    T = thermo.temperature(cfg, s2)
    row["T_theory"] = T
    if cfg.protocol is not Protocol.FIXED_SPHERE:
        row["r_star_sde"] = thermo.predicted_radius_sde(cfg, s2)
    if stats.diverged:
        return row
    for name in _STATS:
        v = getattr(stats, name)
        row[name] = v if math.isfinite(v) else None
    if cfg.protocol is not Protocol.FIXED_SPHERE:
        row["r_star_discr"] = thermo.predicted_radius_discrete(cfg, stats.grad_sq_mean, s2)
    if math.isfinite(stats.S_total):
        V = stats.r_emp**2 / 2
        F, G = thermo.potentials(stats.U_mean, stats.S_total, T, cfg.lam or 0.0, V)
        row["F"] = F
        if cfg.protocol is not Protocol.FIXED_SPHERE:
            row["G"] = G
    return row


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        return "%.12g" % v
    return str(v)


def _job(args):
    plan, cell, rep = args
    return cell, rep, run_cell(plan, cell, rep)


def run_sweep(plan: ExperimentPlan, output: str | os.PathLike | None = None,
              workers: int | None = None, progress=None) -> Path:
    """Run every (cell, replicate) of ``plan``; write ``results.csv`` and ``manifest.json``.

    Rows are sorted by cell index then replicate, whatever the completion
    order, so the CSV does not depend on the worker count.  The CSV is
    written to a temporary file and moved into place only when complete.
    """
    out_dir = Path(output if output is not None else plan.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    workers = workers or plan.workers
    n_cells = plan.shape[0] * plan.shape[1]
    jobs = [(plan, c, r) for c in range(n_cells) for r in range(plan.seeds)]
    t0 = time.time()
    results = {}
    if workers == 1:
        for job in jobs:
            cell, rep, row = _job(job)
            results[cell, rep] = row
            if progress:
                progress(len(results), len(jobs))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for cell, rep, row in pool.map(_job, jobs, chunksize=1):
                results[cell, rep] = row
                if progress:
                    progress(len(results), len(jobs))
    wall = time.time() - t0

    csv_path = out_dir / "results.csv"
    fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=".results-", suffix=".csv")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(COLUMNS)
            for key in sorted(results):
                writer.writerow([_fmt(results[key][c]) for c in COLUMNS])
        os.replace(tmp, csv_path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    manifest = {
        "version": __version__,
        "plan": plan.to_dict(),
        "mu": loss_model(plan).mu.tolist(),
        "rows": len(results),
        "diverged": sum(1 for r in results.values() if r["diverged"]),
        "wall_time_s": wall,
        "columns": list(COLUMNS),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return csv_path


def read_results(path) -> list[dict]:
    """Parse a results CSV; empty fields become None, counts and seeds ints, the rest floats."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("%s: empty file" % path) from None
        if tuple(header) != COLUMNS:
            raise SchemaError("%s: header does not match the results schema" % path)
        rows = []
        for lineno, rec in enumerate(reader, 2):
            if len(rec) != len(COLUMNS):
                raise SchemaError("%s:%d: expected %d fields, got %d"
                                  % (path, lineno, len(COLUMNS), len(rec)))
            row = {}
            for c, v in zip(COLUMNS, rec):
                if c == "protocol":
                    row[c] = v
                elif c == "diverged":
                    if v not in ("true", "false"):
                        raise SchemaError("%s:%d: bad diverged flag %r" % (path, lineno, v))
                    row[c] = v == "true"
                elif v == "":
                    row[c] = None
                else:
                    try:
                        row[c] = int(v) if c in _INT_COLUMNS else float(v)
                    except ValueError:
                        raise SchemaError("%s:%d: %s is not a number" % (path, lineno, c)) from None
            rows.append(row)
    return rows


def grid_from_rows(rows: list[dict]) -> GridResult:
    """Assemble a :class:`GridResult`, averaging replicates of each cell."""
    if not rows:
        raise SchemaError("no result rows")
    protocols = {r["protocol"] for r in rows}
    if len(protocols) != 1:
        raise SchemaError("results mix protocols: %s" % sorted(protocols))
    try:
        protocol = Protocol(protocols.pop())
    except ValueError as exc:
        raise SchemaError(str(exc)) from None
    c1, c2 = (_AXIS_COLUMN[n] for n in protocol.free_parameters)
    for r in rows:
        if r[c1] is None or r[c2] is None:
            raise SchemaError("row without a value for %s/%s" % (c1, c2))
    ax1 = sorted({r[c1] for r in rows})
    ax2 = sorted({r[c2] for r in rows})
    groups: dict[tuple[int, int], list[StationaryStats]] = {}
    for r in rows:
        st = StationaryStats(diverged=r["diverged"], n_dropped=int(r["n_dropped"] or 0))
        for name in _STATS:
            st.__setattr__(name, r[name] if r[name] is not None else math.nan)
        groups.setdefault((ax1.index(r[c1]), ax2.index(r[c2])), []).append(st)
    if len(groups) != len(ax1) * len(ax2):
        raise SchemaError("results do not form a complete %d x %d grid" % (len(ax1), len(ax2)))
    cells = [[StationaryStats.mean(groups[i, j]) for j in range(len(ax2))] for i in range(len(ax1))]
    return GridResult(protocol, ax1, ax2, cells, d=int(rows[0]["d"]), sigma=float(rows[0]["sigma"]))


def load_grid(path) -> GridResult:
    return grid_from_rows(read_results(path))
