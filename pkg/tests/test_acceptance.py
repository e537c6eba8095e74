"""Acceptance suite: one test per criterion, each recording a pass/fail line.

The Monte Carlo grids are 9 x 5 thinnings of the 17 x 17 defaults, run for
the full 2e6 iterations with four seeds per cell.  The verdicts are printed
in the terminal summary under "acceptance criteria".
"""

import json
import math
import os

import numpy as np
import pytest
from scipy import integrate

from sgdthermo import analysis, thermo
from sgdthermo.analysis import analytic_grid
from sgdthermo.entropy import knn_entropy, sphere_entropy
from sgdthermo.plan import parse_plan_text
from sgdthermo.simulate import Protocol, ProtocolConfig
from sgdthermo.sweep import load_grid, run_sweep

pytestmark = pytest.mark.slow

PLAN = """\
[experiment]
protocol = {protocol}
d = 3
sigma = 1.0
iterations = 2000000
seeds = 4

[axis.{a}]
min = 1e-3
max = 1e-1
count = 9

[axis.{b}]
min = {bmin}
max = {bmax}
count = 5
"""
WORKERS = os.cpu_count() or 1
AX17 = np.logspace(-3, -1, 17)
R17 = np.logspace(-1, 1, 17)


def _sweep(tmp_path_factory, protocol, a, b, bmin=1e-3, bmax=1e-1):
    out = tmp_path_factory.mktemp(protocol)
    plan = parse_plan_text(PLAN.format(protocol=protocol, a=a, b=b, bmin=bmin, bmax=bmax))
    path = run_sweep(plan, out, workers=WORKERS)
    manifest = json.loads((out / "manifest.json").read_text())
    return load_grid(path), manifest


@pytest.fixture(scope="session")
def lr(tmp_path_factory):
    return _sweep(tmp_path_factory, "fixed_lr", "eta", "lambda")


@pytest.fixture(scope="session")
def elr(tmp_path_factory):
    return _sweep(tmp_path_factory, "fixed_elr", "eta_eff", "lambda")


@pytest.fixture(scope="session")
def sphere(tmp_path_factory):
    return _sweep(tmp_path_factory, "fixed_sphere", "eta_eff", "radius", 1e-1, 1e1)


def _cold_cells(grid):
    T = grid.temperature()
    return T, (T <= 0.05) & grid.ok


def test_01_v1_radius_scaling(lr, record):
    grid, manifest = lr
    rep = analysis.v1_scaling_check(grid)
    d = rep["diagnostics"]
    wall = manifest["wall_time_s"]
    ok = rep["pass"] and wall < 600
    record(1, "V1 radius scaling", ok,
           "slope %.4f, max cell error %.2f%% off-corner, sweep %.0f s"
           % (d["slope"], 100 * d["max_relative_error_sde_excl_corner"], wall))
    assert ok


def test_02_stationary_energy(lr, elr, sphere, record):
    worst = 0.0
    for grid, _ in (lr, elr, sphere):
        T, cold = _cold_cells(grid)
        U = grid.field("U_mean")
        R = thermo.gas_constant(grid.d)
        worst = max(worst, float(np.max(np.abs(U[cold] - R * T[cold]) / (R * T[cold]))))
    ok = worst < 0.10
    record(2, "stationary energy U = (d-1)T/2", ok, "max relative error %.2f%%" % (100 * worst))
    assert ok


def test_03_stationary_entropy(lr, elr, sphere, record):
    worst = 0.0
    for grid, _ in (lr, elr, sphere):
        T, cold = _cold_cells(grid)
        R = thermo.gas_constant(grid.d)
        S = grid.field("S_sphere")
        worst = max(worst, float(np.max(np.abs(S[cold] - R * np.log(2 * np.pi * np.e * T[cold])))))
    ok = worst < 0.15
    record(3, "stationary sphere entropy", ok, "max |error| %.3f nats" % worst)
    assert ok


def test_04_maxwell_fixed_lr(lr, record):
    rep = analysis.maxwell_check_fixed_lr(analysis.fit_entropy_surface(lr[0]), 3)
    d = rep["diagnostics"]
    record(4, "Maxwell relation, fixed LR", rep["pass"],
           "first order %.4f, curvatures %+.4f / %+.4f"
           % (d["first_order"], d["curvature_eta"], d["curvature_lambda"]))
    assert rep["pass"]


def test_05_maxwell_fixed_elr(elr, record):
    rep = analysis.maxwell_check_fixed_elr(analysis.fit_entropy_surface(elr[0]), 3)
    d = rep["diagnostics"]
    record(5, "Maxwell relation, fixed ELR", rep["pass"],
           "first order %.4f, curvature %+.4f, cross %+.4f"
           % (d["first_order"], d["curvature_lambda"], d["cross"]))
    assert rep["pass"]


def test_06_ideal_gas_fixed_sphere(sphere, record):
    rep = analysis.maxwell_check_fixed_sphere(sphere[0], 3)
    record(6, "effective weight decay on the sphere", rep["pass"],
           "mean relative error %.2f%%" % (100 * rep["diagnostics"]["mean_relative_error"]))
    assert rep["pass"]


def test_07_v2_argmin(lr, record):
    mc = analysis.v2_argmin_check(lr[0])
    exact = [analysis.v2_argmin_check(analytic_grid(p, AX17, b))["diagnostics"]["fraction_exact"]
             for p, b in ((Protocol.FIXED_LR, AX17), (Protocol.FIXED_ELR, AX17),
                          (Protocol.FIXED_SPHERE, R17))]
    ok = mc["pass"] and all(f == 1.0 for f in exact)
    record(7, "V2 potential argmin", ok,
           "MC within 1 cell %.0f%% (exact %.0f%%), analytic exact %s"
           % (100 * mc["diagnostics"]["fraction_within"], 100 * mc["diagnostics"]["fraction_exact"],
              "/".join("%.0f%%" % (100 * f) for f in exact)))
    assert ok


def test_08_adiabatic(lr, record):
    rep = analysis.adiabatic_check(lr[0], 2.0)
    control = analysis.adiabatic_check(lr[0], 4.0)
    slope, ctrl = rep["diagnostics"]["max_abs_slope"], control["diagnostics"]["max_abs_slope"]
    ok = rep["pass"] and ctrl > 0.2
    record(8, "adiabatic rows (gamma = 2)", ok,
           "max |slope| %.4f nats/decade; gamma = 4 control %.3f" % (slope, ctrl))
    assert ok


def _quadrature(T):
    k = 1 / T
    f = lambda t: math.exp(-k * (t + 1))
    pts = [-1.0, min(1.0, -1 + 50 * T), 1.0]
    z = sum(integrate.quad(f, a, b, epsabs=0, epsrel=1e-12)[0] for a, b in zip(pts, pts[1:]))
    et = sum(integrate.quad(lambda t: t * f(t), a, b, epsabs=0, epsrel=1e-12)[0]
             for a, b in zip(pts, pts[1:])) / z
    return 1 + et, math.log(2 * math.pi * z) + k + k * et


def test_09_vmf_oracle(record):
    kappas = np.logspace(2, 6, 25)
    du = max(abs(thermo.vmf_stats(1 / k, 3).U - thermo.vmf_stats(1 / k, 3, "exact").U) for k in kappas)
    ds = max(abs(thermo.vmf_stats(1 / k, 3).S_sphere - thermo.vmf_stats(1 / k, 3, "exact").S_sphere)
             for k in kappas)
    quad = 0.0
    for T in np.logspace(-3, 1, 13):
        U, S = _quadrature(T)
        e = thermo.vmf_stats(T, 3, "exact")
        quad = max(quad, abs(e.U - U), abs(e.S_sphere - S))
    ok = du < 1e-4 and ds < 1e-3 and quad < 1e-6
    record(9, "VMF exact vs asymptotic vs quadrature", ok,
           "|dU| %.1e, |dS| %.1e, quadrature %.1e" % (du, ds, quad))
    assert ok


def test_10_first_law(record):
    h = 10 ** 0.125
    base = {
        "LR lambda": lambda k: ProtocolConfig(Protocol.FIXED_LR, eta=0.01, lam=0.01 * h**k),
        "LR eta": lambda k: ProtocolConfig(Protocol.FIXED_LR, eta=0.01 * h**k, lam=0.01),
        "ELR eta_eff": lambda k: ProtocolConfig(Protocol.FIXED_ELR, eta_eff=0.01 * h**k, lam=0.01),
        "sphere eta_eff": lambda k: ProtocolConfig(Protocol.FIXED_SPHERE, eta_eff=0.01 * h**k,
                                                   radius=1.0),
    }
    worst = 0.0
    for make in base.values():
        for mode in ("exact", "asymptotic"):
            for centre in range(-8, 9):
                states = [thermo.theory_state(make(centre + k), mode) for k in (-1, 0, 1)]
                dU = abs(states[2].U - states[0].U)
                worst = max(worst, thermo.first_law_residual(states) / dU)
    ok = worst < 0.05
    record(10, "First Law on VMF families", ok, "max residual / |dU| %.4f" % worst)
    assert ok


def test_11_discrete_correction(lr, record):
    d = analysis.v1_scaling_check(lr[0])["diagnostics"]
    ok = d["discrete_closer_at_corner"]
    record(11, "discrete radius correction at the corner", ok,
           "|r - r_discr| %.4f vs |r - r_sde| %.4f at %s"
           % (d["corner_abs_error_discr"], d["corner_abs_error_sde"], d["corner"]))
    assert ok


def test_12_estimator_suite(record):
    rng = np.random.default_rng(2024)
    u = rng.random(10_000)
    g = rng.standard_normal(10_000)
    s2 = rng.standard_normal((10_000, 3))
    e_u = abs(knn_entropy(u).value)
    e_g = abs(knn_entropy(g).value - 0.5 * math.log(2 * math.pi * math.e))
    e_s = abs(sphere_entropy(s2, recenter=False).value - math.log(4 * math.pi))
    x = rng.standard_normal((2000, 2))
    base = knn_entropy(x).value
    e_shift = abs(knn_entropy(x + 7.5).value - base)
    e_scale = abs(knn_entropy(3.0 * x).value - base - 2 * math.log(3.0))
    ok = max(e_u, e_g, e_s) < 0.05 and max(e_shift, e_scale) < 1e-10
    record(12, "entropy estimator suite", ok,
           "U[0,1] %.3f, N(0,1) %.3f, S^2 %.3f, shift %.1e, scale %.1e"
           % (e_u, e_g, e_s, e_shift, e_scale))
    assert ok
