"""Grid-level checks: radius scaling, potential minimisation, Maxwell relations, adiabats.

A :class:`GridResult` is a rectangular grid over the two free hyperparameters
of one protocol.  Every check here is a deterministic function of it and
returns a plain ``dict`` report with ``diagnostics``, ``thresholds`` and
``pass`` keys.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field, fields

import numpy as np

from . import thermo
from .entropy import DegenerateSampleError, sphere_entropy, total_entropy
from .simulate import Protocol, ProtocolConfig, Trajectory

__all__ = [
    "StationaryStats",
    "GridResult",
    "QuadraticFit",
    "FitError",
    "stationary_stats",
    "analytic_grid",
    "fit_entropy_surface",
    "maxwell_check_fixed_lr",
    "maxwell_check_fixed_elr",
    "maxwell_check_fixed_sphere",
    "v1_scaling_check",
    "v2_argmin_check",
    "adiabatic_check",
    "first_law_check",
]

LN10 = math.log(10.0)
AVERAGE_LOGS = 5000
SHORT_RUN = 250_000


class FitError(ValueError):
    pass


@dataclass
class StationaryStats:
    """Measured stationary quantities of one run (NaN where not applicable)."""

    U_mean: float = math.nan
    r_emp: float = math.nan
    sigma2_emp: float = math.nan
    grad_sq_mean: float = math.nan
    lambda_eff_emp: float = math.nan
    S_sphere: float = math.nan
    S_total: float = math.nan
    n_dropped: int = 0
    diverged: bool = False

    @classmethod
    def mean(cls, items: list["StationaryStats"]) -> "StationaryStats":
        """Seed-average; diverged if any replicate diverged."""
        if len(items) == 1:
            return items[0]
        out = cls(diverged=any(s.diverged for s in items),
                  n_dropped=sum(s.n_dropped for s in items))
        for f in fields(cls):
            if f.type in ("float", float):
                setattr(out, f.name, float(np.mean([getattr(s, f.name) for s in items])))
        return out


def stationary_stats(traj: Trajectory, cfg: ProtocolConfig, entropy_every: int = 40_000,
                     entropy_logs: int = 10) -> StationaryStats:
    """Average a trajectory over its stationary window.

    Loss, radius and gradient norm use the last 5000 logs, or the last half
    of the logs for runs shorter than 250k steps.  Entropies average the
    estimates from the last ``entropy_logs`` queue snapshots.
    """
    stats = StationaryStats(sigma2_emp=cfg.sigma**2, diverged=traj.diverged)
    if traj.diverged or len(traj.iterations) < 2:
        stats.diverged = True
        return stats
    n = len(traj.iterations)
    window = AVERAGE_LOGS if cfg.iterations >= SHORT_RUN else max(1, n // 2)
    sl = slice(max(0, n - window), n)
    stats.U_mean = float(traj.loss_log[sl].mean())
    stats.r_emp = float(traj.radius_log[sl].mean())
    stats.grad_sq_mean = float(traj.grad_sq_log[sl].mean())
    if traj.lambda_eff_log is not None:
        stats.lambda_eff_emp = float(traj.lambda_eff_log[sl].mean())
    s_sph, s_tot, dropped = [], [], 0
    for queue in traj.queue_snapshots(entropy_every, entropy_logs):
        if len(queue) < 2:
            continue
        try:
            est = sphere_entropy(queue / np.linalg.norm(queue, axis=1, keepdims=True))
        except DegenerateSampleError:
            continue
        s_sph.append(est.value)
        s_tot.append(total_entropy(queue))
        dropped = max(dropped, est.n_dropped)
    if s_sph:
        stats.S_sphere = float(np.mean(s_sph))
        stats.S_total = float(np.mean(s_tot))
    stats.n_dropped = dropped
    return stats


@dataclass
class GridResult:
    """Stationary statistics over ``axis1 x axis2`` for one protocol.

    Axis names follow :attr:`Protocol.free_parameters`.  ``cells[i][j]``
    belongs to ``(axis1[i], axis2[j])``.
    """

    protocol: Protocol
    axis1: np.ndarray
    axis2: np.ndarray
    cells: list
    d: int = 3
    sigma: float = 1.0

    def __post_init__(self):
        self.protocol = Protocol(self.protocol)
        self.axis1 = np.asarray(self.axis1, dtype=float)
        self.axis2 = np.asarray(self.axis2, dtype=float)
        if len(self.cells) != len(self.axis1) or any(len(r) != len(self.axis2) for r in self.cells):
            raise ValueError("cells must form a complete len(axis1) x len(axis2) grid")

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.axis1), len(self.axis2)

    @property
    def axis_names(self) -> tuple[str, str]:
        return self.protocol.free_parameters

    def field(self, name: str) -> np.ndarray:
        """Matrix of one stationary quantity; diverged cells are NaN."""
        out = np.full(self.shape, np.nan)
        for i, row in enumerate(self.cells):
            for j, c in enumerate(row):
                if not c.diverged:
                    out[i, j] = getattr(c, name)
        return out

    @property
    def ok(self) -> np.ndarray:
        return ~np.array([[c.diverged for c in row] for row in self.cells], dtype=bool)

    def config(self, i: int, j: int, iterations: int = 0) -> ProtocolConfig:
        a, b = self.axis_names
        kw = {a: float(self.axis1[i]), b: float(self.axis2[j])}
        if "lambda" in kw:
            kw["lam"] = kw.pop("lambda")
        return ProtocolConfig(self.protocol, sigma=self.sigma, d=self.d,
                              iterations=iterations, **kw)

    def theory(self, name: str, fn) -> np.ndarray:
        """Matrix of ``fn(config)`` with the cell's measured noise variance."""
        s2 = self.field("sigma2_emp")
        out = np.empty(self.shape)
        for i in range(self.shape[0]):
            for j in range(self.shape[1]):
                v = s2[i, j] if np.isfinite(s2[i, j]) else self.sigma**2
                out[i, j] = fn(self.config(i, j), v)
        return out

    def temperature(self) -> np.ndarray:
        return self.theory("T", lambda c, s2: thermo.temperature(c, s2))


def analytic_grid(protocol, axis1, axis2, d: int = 3, sigma: float = 1.0) -> GridResult:
    """Grid filled with the asymptotic VMF predictions instead of measurements."""
    protocol = Protocol(protocol)
    grid = GridResult(protocol, axis1, axis2,
                      [[StationaryStats() for _ in axis2] for _ in axis1], d, sigma)
    for i in range(len(axis1)):
        for j in range(len(axis2)):
            cfg = grid.config(i, j)
            st = thermo.theory_state(cfg)
            c = grid.cells[i][j]
            c.U_mean, c.S_sphere, c.S_total = st.U, st.S_sphere, st.S_total
            c.r_emp = math.sqrt(2 * st.V)
            c.sigma2_emp = sigma**2
            c.grad_sq_mean = 0.0
            if protocol is Protocol.FIXED_SPHERE:
                c.lambda_eff_emp = st.p
    return grid


@dataclass
class QuadraticFit:
    """``S = a0 + a1 x + a2 y + a3 x^2 + a4 y^2 + a5 x y`` with ``x, y`` base-10 logs of the axes."""

    coef: np.ndarray
    r_squared: float
    stderr: np.ndarray = field(default_factory=lambda: np.full(6, np.nan))
    center: tuple[float, float] = (0.0, 0.0)
    x_range: tuple[float, float] = (0.0, 0.0)
    y_range: tuple[float, float] = (0.0, 0.0)

    @property
    def a(self):
        return tuple(float(c) for c in self.coef)

    def predict(self, x, y):
        a0, a1, a2, a3, a4, a5 = self.coef
        return a0 + a1 * x + a2 * y + a3 * x * x + a4 * y * y + a5 * x * y

    def dlog(self, x, y) -> tuple[float, float]:
        """Natural-log partial derivatives ``(dS/dln axis1, dS/dln axis2)`` at ``(x, y)``."""
        a0, a1, a2, a3, a4, a5 = self.coef
        return (a1 + 2 * a3 * x + a5 * y) / LN10, (a2 + 2 * a4 * y + a5 * x) / LN10


def _design(x, y):
    return np.column_stack([np.ones_like(x), x, y, x * x, y * y, x * y])


def fit_surface(x, y, s) -> QuadraticFit:
    x, y, s = (np.asarray(v, dtype=float).ravel() for v in (x, y, s))
    A = _design(x, y)
    if len(s) < 6 or np.linalg.matrix_rank(A) < 6:
        raise FitError("quadratic surface needs a full-rank design (got %d points)" % len(s))
    coef, *_ = np.linalg.lstsq(A, s, rcond=None)
    resid = s - A @ coef
    ss_tot = float(np.sum((s - s.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    r2 = 1.0 if ss_tot == 0 else min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    dof = len(s) - 6
    if dof > 0:
        cov = np.linalg.inv(A.T @ A) * ss_res / dof
        stderr = np.sqrt(np.clip(np.diag(cov), 0, None))
    else:
        stderr = np.full(6, np.nan)
    return QuadraticFit(coef=coef, r_squared=r2, stderr=stderr,
                        center=(float(x.mean()), float(y.mean())),
                        x_range=(float(x.min()), float(x.max())),
                        y_range=(float(y.min()), float(y.max())))


def fit_entropy_surface(grid: GridResult, quantity: str = "S_total") -> QuadraticFit:
    """Least-squares quadratic in the base-10 log axes over the non-diverged cells."""
    X, Y = np.meshgrid(np.log10(grid.axis1), np.log10(grid.axis2), indexing="ij")
    S = grid.field(quantity)
    ok = np.isfinite(S)
    return fit_surface(X[ok], Y[ok], S[ok])


def _report(check, protocol, diagnostics, thresholds, passed, **extra):
    out = {"check": check, "protocol": Protocol(protocol).value,
           "diagnostics": diagnostics, "thresholds": thresholds, "pass": bool(passed)}
    out.update(extra)
    return out


def maxwell_check_fixed_lr(fit: QuadraticFit, d: int, tol: float = 0.05) -> dict:
    """``dS/dln eta - dS/dln lambda = (d-1)/2`` on a fit over ``(log eta, log lambda)``.

    The first-order diagnostic is evaluated at the centre of the fitted grid
    so that it does not depend on where the log origin sits; the raw
    ``(a1 - a2)/R`` (derivative at eta = lambda = 1) is reported alongside.
    """
    R = thermo.gas_constant(d)
    a0, a1, a2, a3, a4, a5 = fit.a
    xc, yc = fit.center
    gx, gy = fit.dlog(xc, yc)
    corners = [(x, y) for x in fit.x_range for y in fit.y_range]
    rel = max(abs((lambda g: g[0] - g[1])(fit.dlog(x, y)) - R) / R for x, y in corners)
    diag = {
        "first_order": (gx - gy) / R,
        "first_order_at_origin": (a1 - a2) / (LN10 * R),
        "curvature_eta": (2 * a3 - a5) / (LN10 * R),
        "curvature_lambda": (2 * a4 - a5) / (LN10 * R),
        "max_relative_error": rel,
        "r_squared": fit.r_squared,
    }
    passed = (abs(diag["first_order"] - 1) <= tol and abs(diag["curvature_eta"]) < tol
              and abs(diag["curvature_lambda"]) < tol)
    return _report("maxwell", Protocol.FIXED_LR, diag,
                   {"first_order": [1 - tol, 1 + tol], "curvature": tol}, passed)


def maxwell_check_fixed_elr(fit: QuadraticFit, d: int, tol: float = 0.1,
                            curvature_tol: float = 0.05) -> dict:
    """``dS/dln lambda = -(d-1)/2`` at fixed ELR, on a fit over ``(log eta_eff, log lambda)``."""
    R = thermo.gas_constant(d)
    a0, a1, a2, a3, a4, a5 = fit.a
    _, gy = fit.dlog(*fit.center)
    rel = max(abs(fit.dlog(x, y)[1] + R) / R for x in fit.x_range for y in fit.y_range)
    diag = {
        "first_order": gy / R,
        "first_order_at_origin": a2 / (LN10 * R),
        "curvature_lambda": 2 * a4 / (LN10 * R),
        "cross": a5 / (LN10 * R),
        "max_relative_error": rel,
        "r_squared": fit.r_squared,
    }
    passed = (abs(diag["first_order"] + 1) <= tol and abs(diag["curvature_lambda"]) < curvature_tol
              and abs(diag["cross"]) < curvature_tol)
    return _report("maxwell", Protocol.FIXED_ELR, diag,
                   {"first_order": [-1 - tol, -1 + tol], "curvature": curvature_tol}, passed)


def maxwell_check_fixed_sphere(grid: GridResult, d: int | None = None, tol: float = 0.10) -> dict:
    """Measured effective weight decay against ``T (d-1) / (2 V)`` cell by cell."""
    if grid.protocol is not Protocol.FIXED_SPHERE:
        raise ValueError("needs a fixed-sphere grid")
    if d is not None and d != grid.d:
        grid = GridResult(grid.protocol, grid.axis1, grid.axis2, grid.cells, d, grid.sigma)
    pred = grid.theory("lambda_eff", lambda c, s2: thermo.lambda_eff_sde(c, s2))
    emp = grid.field("lambda_eff_emp")
    rel = np.abs(emp - pred) / pred
    ok = np.isfinite(rel)
    diag = {
        "mean_relative_error": float(rel[ok].mean()) if ok.any() else math.nan,
        "max_relative_error": float(rel[ok].max()) if ok.any() else math.nan,
        "cells": int(ok.sum()),
    }
    return _report("maxwell", Protocol.FIXED_SPHERE, diag, {"mean_relative_error": tol},
                   ok.any() and diag["mean_relative_error"] < tol,
                   relative_error=rel.tolist())


def v1_scaling_check(grid: GridResult, tol: float = 0.03, cell_tol: float = 0.05) -> dict:
    """Fit ``log r`` against ``log(eta/lambda)/4`` (fixed LR) or ``log(eta_eff/lambda)/2`` (fixed ELR).

    Per-cell relative errors against the continuous-time prediction are
    checked everywhere except at the cell with the largest
    ``axis1 * axis2``, where the discretisation correction matters most.
    """
    if grid.protocol is Protocol.FIXED_SPHERE:
        raise ValueError("radius scaling needs a fixed-LR or fixed-ELR grid")
    power = 0.25 if grid.protocol is Protocol.FIXED_LR else 0.5
    X, Y = np.meshgrid(grid.axis1, grid.axis2, indexing="ij")
    x = power * np.log(X / Y)
    r = grid.field("r_emp")
    ok = np.isfinite(r)
    slope, intercept = np.polyfit(x[ok], np.log(r[ok]), 1)
    sde = grid.theory("r_sde", lambda c, s2: thermo.predicted_radius_sde(c, s2))
    gsq = grid.field("grad_sq_mean")
    s2 = grid.field("sigma2_emp")
    discr = np.full(grid.shape, np.nan)
    for i in range(grid.shape[0]):
        for j in range(grid.shape[1]):
            if np.isfinite(gsq[i, j]):
                discr[i, j] = thermo.predicted_radius_discrete(grid.config(i, j), gsq[i, j], s2[i, j])
    err_sde = np.abs(r - sde) / sde
    err_discr = np.abs(r - discr) / discr
    corner = np.unravel_index(np.argmax(X * Y), X.shape)
    mask = ok.copy()
    mask[corner] = False
    max_err = float(err_sde[mask].max()) if mask.any() else 0.0
    corner_abs_sde = float(abs(r[corner] - sde[corner]))
    corner_abs_discr = float(abs(r[corner] - discr[corner]))
    diag = {
        "slope": float(slope),
        "intercept": float(intercept),
        "max_relative_error_sde_excl_corner": max_err,
        "corner": [float(grid.axis1[corner[0]]), float(grid.axis2[corner[1]])],
        "corner_abs_error_sde": corner_abs_sde,
        "corner_abs_error_discr": corner_abs_discr,
        "discrete_closer_at_corner": bool(corner_abs_discr < corner_abs_sde),
    }
    passed = abs(slope - 1) <= tol and max_err < cell_tol
    return _report("v1", grid.protocol, diag, {"slope": [1 - tol, 1 + tol], "cell": cell_tol},
                   passed, relative_error_sde=err_sde.tolist(),
                   relative_error_discr=err_discr.tolist())


def v2_argmin_check(grid: GridResult, d: int | None = None, max_distance: int = 1,
                    min_fraction: float = 0.95) -> dict:
    """For every cell, find which stationary state minimises that cell's potential.

    Fixed LR/ELR: Gibbs energy ``U_i - T* S_i + p* V_i`` over all cells,
    Chebyshev distance in cells.  Fixed sphere: Helmholtz ``U_i - T* S_i``
    over the cells of the same radius column.  ``heatmaps[a][b]`` is the
    potential minus its minimum for target cell ``(a, b)``.
    """
    U = grid.field("U_mean")
    S = grid.field("S_total")
    r = grid.field("r_emp")
    V = r * r / 2
    T = grid.temperature()
    ok = np.isfinite(U) & np.isfinite(S) & np.isfinite(V)
    n1, n2 = grid.shape
    sphere = grid.protocol is Protocol.FIXED_SPHERE
    distances = np.full((n1, n2), -1, dtype=int)
    heatmaps = np.full((n1, n2, n1, n2), np.nan)
    for a in range(n1):
        for b in range(n2):
            if not ok[a, b]:
                continue
            if sphere:
                pot = U - T[a, b] * S
                mask = np.zeros_like(ok)
                mask[:, b] = ok[:, b]
            else:
                pot = U - T[a, b] * S + grid.axis2[b] * V
                mask = ok
            pot = np.where(mask, pot, np.nan)
            i, j = np.unravel_index(np.nanargmin(pot), pot.shape)
            distances[a, b] = max(abs(i - a), abs(j - b))
            heatmaps[a, b] = pot - pot[i, j]
    valid = distances >= 0
    hist = np.bincount(distances[valid].ravel()) if valid.any() else np.zeros(1, int)
    frac_close = float(np.mean(distances[valid] <= max_distance)) if valid.any() else math.nan
    diag = {
        "histogram": hist.tolist(),
        "fraction_exact": float(np.mean(distances[valid] == 0)) if valid.any() else math.nan,
        "fraction_within": frac_close,
        "cells": int(valid.sum()),
    }
    return _report("v2", grid.protocol, diag,
                   {"max_distance": max_distance, "min_fraction": min_fraction},
                   valid.any() and frac_close >= min_fraction,
                   distances=distances.tolist(), heatmaps=heatmaps)


def adiabatic_check(grid: GridResult, gamma: float = 2.0, tol: float = 0.05,
                    decimals: int = 6) -> dict:
    """Slope of ``S_total`` against ``log10 lambda`` along curves of constant ``eta^(g/2) lambda^(1-g/2)``.

    Families are formed from grid cells sharing the (rounded) log-invariant;
    only families with at least three cells are scored.
    """
    if grid.protocol is not Protocol.FIXED_LR:
        raise ValueError("adiabatic check needs a fixed-LR grid")
    S = grid.field("S_total")
    lx, ly = np.log10(grid.axis1), np.log10(grid.axis2)
    families = defaultdict(list)
    for i in range(grid.shape[0]):
        for j in range(grid.shape[1]):
            if np.isfinite(S[i, j]):
                key = round(gamma / 2 * lx[i] + (1 - gamma / 2) * ly[j], decimals)
                families[key].append((ly[j], S[i, j]))
    rows = []
    for key in sorted(families):
        pts = families[key]
        if len(pts) < 3:
            continue
        y, s = np.array(pts).T
        slope = float(np.polyfit(y, s, 1)[0])
        rows.append({"log10_invariant": key, "cells": len(pts), "slope": slope,
                     "spread": float(s.max() - s.min())})
    slopes = np.array([f["slope"] for f in rows])
    diag = {
        "gamma": gamma,
        "families": len(rows),
        "max_abs_slope": float(np.abs(slopes).max()) if rows else math.nan,
        "mean_abs_slope": float(np.abs(slopes).mean()) if rows else math.nan,
    }
    return _report("adiabatic", grid.protocol, diag, {"max_abs_slope": tol},
                   bool(rows) and diag["max_abs_slope"] < tol, families=rows)


def grid_states(grid: GridResult) -> list[list[thermo.ThermoState | None]]:
    """Thermodynamic states assembled from measurements and theory temperatures."""
    T = grid.temperature()
    out = []
    for i, row in enumerate(grid.cells):
        out_row = []
        for j, c in enumerate(row):
            if c.diverged or not np.isfinite(c.S_total):
                out_row.append(None)
                continue
            if grid.protocol is Protocol.FIXED_SPHERE:
                p = c.lambda_eff_emp
            else:
                p = float(grid.axis2[j])
            out_row.append(thermo.ThermoState(
                T=float(T[i, j]), p=float(p), V=c.r_emp**2 / 2, R=thermo.gas_constant(grid.d),
                U=c.U_mean, S_sphere=c.S_sphere, S_total=c.S_total))
        out.append(out_row)
    return out


def first_law_check(grid: GridResult, tol: float = 0.05) -> dict:
    """Central-difference First-Law residual along the grid, relative to its largest term.

    The scale is ``max(|dU|, |T dS|, |p dV|)``: at fixed ELR the energy does
    not move along a lambda sweep, so ``|dU|`` alone is no yardstick.

    Fixed LR/ELR sweep lambda at fixed eta (eta_eff); the fixed sphere sweeps
    eta_eff at fixed radius.  The worst stencil decides the verdict.
    """
    states = grid_states(grid)
    n1, n2 = grid.shape
    lines = []
    if grid.protocol is Protocol.FIXED_SPHERE:
        lines = [[states[i][j] for i in range(n1)] for j in range(n2)]
    else:
        lines = [states[i] for i in range(n1)]
    rel = []
    for line in lines:
        for k in range(1, len(line) - 1):
            lo, mid, hi = line[k - 1], line[k], line[k + 1]
            if lo is None or mid is None or hi is None:
                continue
            scale = max(abs(hi.U - lo.U), abs(mid.T * (hi.S_total - lo.S_total)),
                        abs(mid.p * (hi.V - lo.V)))
            try:
                res = thermo.first_law_residual((lo, mid, hi))
            except thermo.StencilError:
                continue
            rel.append(res / scale if scale > 0 else 0.0)
    rel = np.array(rel)
    diag = {
        "stencils": int(rel.size),
        "max_relative_residual": float(rel.max()) if rel.size else math.nan,
        "median_relative_residual": float(np.median(rel)) if rel.size else math.nan,
    }
    return _report("first-law", grid.protocol, diag, {"max_relative_residual": tol},
                   rel.size > 0 and diag["max_relative_residual"] < tol)
