"""Command line: ``sgdthermo {sweep,analyze,oracle,plan-check}``.

Exit codes: 0 success, 1 check failed, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import analysis, thermo
from .plan import PlanError, parse_plan
from .simulate import Protocol
from .sweep import SchemaError, load_grid, run_sweep

log = logging.getLogger("sgdthermo")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
CHECKS = ("v1", "v2", "maxwell", "adiabatic", "first-law")


class CheckMismatch(ValueError):
    """The requested check does not apply to the protocol in the results."""


def run_check(grid: analysis.GridResult, check: str, gamma: float | None = None) -> dict:
    """Dispatch one named check on a grid."""
    p = grid.protocol
    if check == "v1":
        if p is Protocol.FIXED_SPHERE:
            raise CheckMismatch("v1 needs fixed_lr or fixed_elr results")
        return analysis.v1_scaling_check(grid)
    if check == "v2":
        return analysis.v2_argmin_check(grid, grid.d)
    if check == "maxwell":
        if p is Protocol.FIXED_SPHERE:
            return analysis.maxwell_check_fixed_sphere(grid, grid.d)
        fit = analysis.fit_entropy_surface(grid)
        if p is Protocol.FIXED_LR:
            rep = analysis.maxwell_check_fixed_lr(fit, grid.d)
        else:
            rep = analysis.maxwell_check_fixed_elr(fit, grid.d)
        rep["fit"] = {"coefficients": fit.coef.tolist(), "stderr": fit.stderr.tolist(),
                      "r_squared": fit.r_squared}
        return rep
    if check == "adiabatic":
        if p is not Protocol.FIXED_LR:
            raise CheckMismatch("adiabatic needs fixed_lr results")
        if gamma is None:
            gamma = thermo.heat_capacities(grid.d).gamma
        return analysis.adiabatic_check(grid, gamma)
    if check == "first-law":
        return analysis.first_law_check(grid)
    raise CheckMismatch("unknown check %r" % check)


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items() if not isinstance(v, np.ndarray)}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return None if not math.isfinite(obj) else float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def format_report(report: dict) -> str:
    lines = ["check: %s" % report["check"], "protocol: %s" % report["protocol"],
             "result: %s" % ("PASS" if report["pass"] else "FAIL"), "", "diagnostics:"]
    for k, v in report["diagnostics"].items():
        lines.append("  %-36s %s" % (k, "%.6g" % v if isinstance(v, float) else v))
    lines.append("thresholds:")
    for k, v in report["thresholds"].items():
        lines.append("  %-36s %s" % (k, v))
    for fam in report.get("families", []):
        lines.append("  family log10(inv)=%-10.4g cells=%d slope=%+.4f spread=%.4f"
                     % (fam["log10_invariant"], fam["cells"], fam["slope"], fam["spread"]))
    return "\n".join(lines) + "\n"


def write_heatmap(path, grid: analysis.GridResult, heatmaps: np.ndarray) -> None:
    a, b = grid.axis_names
    n1, n2 = grid.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["target_i", "target_j", "target_" + a, "target_" + b, "i", "j", a, b, "delta"])
        for ti in range(n1):
            for tj in range(n2):
                for i in range(n1):
                    for j in range(n2):
                        v = heatmaps[ti, tj, i, j]
                        w.writerow([ti, tj, "%.12g" % grid.axis1[ti], "%.12g" % grid.axis2[tj],
                                    i, j, "%.12g" % grid.axis1[i], "%.12g" % grid.axis2[j],
                                    "" if not np.isfinite(v) else "%.12g" % v])


def analyze(results, check: str, out_dir=None, gamma: float | None = None) -> tuple[dict, list[Path]]:
    """Run ``check`` on a results CSV; write text and JSON reports (and the v2 heatmap)."""
    results = Path(results)
    grid = load_grid(results)
    report = run_check(grid, check, gamma)
    out_dir = Path(out_dir) if out_dir else results.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = "%s_%s" % (results.stem, check)
    paths = [out_dir / (stem + ".txt"), out_dir / (stem + ".json")]
    paths[0].write_text(format_report(report))
    paths[1].write_text(json.dumps(_clean(report), indent=2) + "\n")
    if check == "v2":
        paths.append(out_dir / (stem + "_heatmap.csv"))
        write_heatmap(paths[-1], grid, report["heatmaps"])
    return report, paths


def _cmd_sweep(args) -> int:
    plan = parse_plan(args.plan)

    def progress(done, total):
        log.info("%d/%d runs done", done, total)

    path = run_sweep(plan, args.output, args.workers, progress if args.verbose else None)
    print(path)
    return EXIT_OK


def _cmd_analyze(args) -> int:
    report, paths = analyze(args.results, args.check, args.out, args.gamma)
    sys.stdout.write(format_report(report))
    for p in paths:
        print("wrote", p)
    return EXIT_OK if report["pass"] else EXIT_FAILED


def _cmd_oracle(args) -> int:
    stats = thermo.vmf_stats(args.T, args.d, args.mode)
    out = {"T": args.T, "d": args.d, "mode": args.mode, "kappa": stats.kappa,
           "U": stats.U, "S_sphere": stats.S_sphere, "exact": stats.exact}
    if args.json:
        print(json.dumps(out))
    else:
        print("T        = %.12g" % args.T)
        print("kappa    = %.12g" % stats.kappa)
        print("U        = %.12g" % stats.U)
        print("S_sphere = %.12g" % stats.S_sphere)
    return EXIT_OK


def _cmd_plan_check(args) -> int:
    plan = parse_plan(args.plan)
    n1, n2 = plan.shape
    print("ok: %s, %s x %s = %d cells x %d seeds, %d iterations"
          % (plan.protocol.value, plan.axes[0].name, plan.axes[1].name, n1 * n2, plan.seeds,
             plan.iterations))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgdthermo", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="run every cell of a plan and write results.csv")
    p.add_argument("plan")
    p.add_argument("-o", "--output", help="output directory (default: the plan's)")
    p.add_argument("-j", "--workers", type=int, help="worker processes (default: the plan's)")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("analyze", help="run one verification check on a results file")
    p.add_argument("results")
    p.add_argument("check", choices=CHECKS)
    p.add_argument("--out", help="report directory (default: next to the results)")
    p.add_argument("--gamma", type=float, help="adiabatic exponent (default: C_p/C_V)")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("oracle", help="print VMF energy and entropy at a temperature")
    p.add_argument("-T", "--T", type=float, required=True, dest="T")
    p.add_argument("-d", type=int, default=3)
    p.add_argument("--mode", choices=("exact", "asymptotic"), default="asymptotic")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.set_defaults(func=_cmd_oracle)

    p = sub.add_parser("plan-check", help="validate a plan without running it")
    p.add_argument("plan")
    p.set_defaults(func=_cmd_plan_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (PlanError, SchemaError, CheckMismatch, thermo.UnsupportedDimensionError,
            FileNotFoundError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print("runtime error: %s" % exc, file=sys.stderr)
        return EXIT_RUNTIME
