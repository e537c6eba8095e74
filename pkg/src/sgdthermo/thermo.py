"""Thermodynamic bookkeeping for stationary SGD on the toy loss.

Temperature, pressure (weight decay), volume (half squared radius), the
potentials, VMF reference statistics and the stationary-radius predictions.
All public functions take the temperature ``T``; ``kappa = 1 / T`` stays
internal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .simulate import Protocol, ProtocolConfig

__all__ = [
    "NotApplicableError",
    "UnsupportedDimensionError",
    "StencilError",
    "ThermoState",
    "VmfStats",
    "HeatCapacities",
    "gas_constant",
    "temperature",
    "predicted_radius_sde",
    "predicted_radius_discrete",
    "lambda_eff_sde",
    "lambda_eff_discrete",
    "vmf_stats",
    "potentials",
    "heat_capacities",
    "adiabatic_invariant",
    "first_law_residual",
    "theory_state",
]


class NotApplicableError(ValueError):
    """The quantity is not defined for this training protocol."""


class UnsupportedDimensionError(ValueError):
    pass


class StencilError(ValueError):
    """Three states do not form a monotone finite-difference stencil."""


def gas_constant(d: int) -> float:
    return (d - 1) / 2


@dataclass(frozen=True)
class ThermoState:
    T: float
    p: float
    V: float
    R: float
    U: float
    S_sphere: float
    S_total: float

    def __post_init__(self):
        if not self.T > 0 or not self.V > 0 or self.p < 0:
            raise ValueError("need T > 0, V > 0, p >= 0")

    @property
    def F(self) -> float:
        return self.U - self.T * self.S_total

    @property
    def G(self) -> float:
        return self.F + self.p * self.V


@dataclass(frozen=True)
class VmfStats:
    kappa: float
    U: float
    S_sphere: float
    exact: bool


@dataclass(frozen=True)
class HeatCapacities:
    C_V: float
    C_p: float
    gamma: float


def _sigma2(cfg: ProtocolConfig, sigma2: float | None) -> float:
    return cfg.sigma**2 if sigma2 is None else sigma2


def temperature(cfg: ProtocolConfig, sigma2: float | None = None) -> float:
    """``eta_eff sigma^2 / 2`` (sphere, fixed ELR) or ``sqrt(eta lambda sigma^2 / (2 (d-1)))`` (fixed LR).

    ``sigma2`` overrides the configured noise variance, e.g. with a measured one.
    """
    s2 = _sigma2(cfg, sigma2)
    if cfg.protocol is Protocol.FIXED_LR:
        return math.sqrt(cfg.eta * cfg.lam * s2 / (2 * (cfg.d - 1)))
    return cfg.eta_eff * s2 / 2


def predicted_radius_sde(cfg: ProtocolConfig, sigma2: float | None = None) -> float:
    return predicted_radius_discrete(cfg, 0.0, sigma2)


def predicted_radius_discrete(cfg: ProtocolConfig, grad_sq_mean: float,
                              sigma2: float | None = None) -> float:
    """Stationary radius with the full-batch gradient norm added to the noise trace.

    ``grad_sq_mean`` is the stationary mean of ``|grad L(w_bar)|^2``; zero
    gives back the continuous-time prediction.
    """
    if grad_sq_mean < 0:
        raise ValueError("grad_sq_mean must be >= 0")
    if cfg.lam == 0:
        raise NotApplicableError("without weight decay the radius has no stationary value")
    drive = _sigma2(cfg, sigma2) * (cfg.d - 1) + grad_sq_mean
    if cfg.protocol is Protocol.FIXED_LR:
        return (cfg.eta / (2 * cfg.lam) * drive) ** 0.25
    if cfg.protocol is Protocol.FIXED_ELR:
        return math.sqrt(cfg.eta_eff / (2 * cfg.lam) * drive)
    raise NotApplicableError("the fixed-sphere radius is not a prediction; use lambda_eff_discrete")


def lambda_eff_sde(cfg: ProtocolConfig, sigma2: float | None = None) -> float:
    return lambda_eff_discrete(cfg, 0.0, sigma2)


def lambda_eff_discrete(cfg: ProtocolConfig, grad_sq_mean: float,
                        sigma2: float | None = None) -> float:
    """Effective weight decay of projected SGD, ``eta_eff (sigma^2 (d-1) + E|grad|^2) / (2 r^2)``."""
    if cfg.protocol is not Protocol.FIXED_SPHERE:
        raise NotApplicableError("effective weight decay is only defined on a fixed sphere")
    drive = _sigma2(cfg, sigma2) * (cfg.d - 1) + grad_sq_mean
    return cfg.eta_eff / (2 * cfg.radius**2) * drive


def _log_sinh(k: float) -> float:
    if k > 20:
        return k + math.log1p(-math.exp(-2 * k)) - math.log(2)
    return math.log(math.sinh(k))


def vmf_stats(T: float, d: int, mode: str = "asymptotic") -> VmfStats:
    """Expected loss and sphere entropy of the stationary VMF law at temperature ``T``.

    ``mode="exact"`` uses the d = 3 closed forms ``A(k) = coth k - 1/k`` and
    ``C(k) = k / (4 pi sinh k)``; ``"asymptotic"`` the small-T expansions
    ``U = (d-1) T / 2`` and ``S = (d-1)/2 log(2 pi e T)``.
    """
    if not T > 0:
        raise ValueError("T must be positive")
    kappa = 1.0 / T
    if mode == "asymptotic":
        R = gas_constant(d)
        return VmfStats(kappa, R * T, R * math.log(2 * math.pi * math.e * T), exact=False)
    if mode != "exact":
        raise ValueError("mode must be 'exact' or 'asymptotic'")
    if d != 3:
        raise UnsupportedDimensionError("exact VMF statistics are implemented for d = 3 only")
    if kappa < 1e-4:
        # series: A = k/3 - k^3/45, log C = -log(4 pi) - k^2/6
        A = kappa / 3 - kappa**3 / 45
        log_c = -math.log(4 * math.pi) - kappa**2 / 6
    else:
        A = 1 / math.tanh(kappa) - 1 / kappa
        log_c = math.log(kappa) - math.log(4 * math.pi) - _log_sinh(kappa)
    return VmfStats(kappa, 1 - A, -log_c - kappa * A, exact=True)


def potentials(U: float, S_total: float, T: float, p: float, V: float) -> tuple[float, float]:
    """Helmholtz and Gibbs energies ``(U - T S, U - T S + p V)``."""
    if not T > 0 or not V > 0:
        raise ValueError("need T > 0 and V > 0")
    F = U - T * S_total
    return F, F + p * V


def heat_capacities(d: int) -> HeatCapacities:
    """Heat capacities of the VMF family, whose energy is ``(d-1) T / 2``."""
    if d < 3:
        raise ValueError("d must be >= 3")
    c_v = gas_constant(d)
    c_p = c_v + gas_constant(d)
    return HeatCapacities(C_V=c_v, C_p=c_p, gamma=c_p / c_v)


def adiabatic_invariant(cfg: ProtocolConfig, gamma: float) -> float:
    """``eta^(gamma/2) lambda^(1 - gamma/2)``, proportional to ``p V^gamma`` under fixed LR."""
    if cfg.protocol is not Protocol.FIXED_LR:
        raise NotApplicableError("the adiabatic invariant is defined for fixed-LR training")
    if not gamma > 1:
        raise ValueError("gamma must exceed 1")
    if cfg.lam == 0:
        raise NotApplicableError("the adiabatic invariant needs weight decay")
    return cfg.eta ** (gamma / 2) * cfg.lam ** (1 - gamma / 2)


def _monotone(a: float, b: float, c: float) -> bool:
    return (a <= b <= c) or (a >= b >= c)


def first_law_residual(states) -> float:
    """``|dU - T dS + p dV|`` by central differences around the middle of three states.

    ``T`` and ``p`` are taken at the middle state.  Each of ``T`` and ``V``
    must vary monotonically along the stencil.
    """
    lo, mid, hi = states
    for name in ("T", "V"):
        if not _monotone(getattr(lo, name), getattr(mid, name), getattr(hi, name)):
            raise StencilError("%s is not monotone along the stencil" % name)
    dU = hi.U - lo.U
    dS = hi.S_total - lo.S_total
    dV = hi.V - lo.V
    return abs(dU - mid.T * dS + mid.p * dV)


def theory_state(cfg: ProtocolConfig, mode: str = "asymptotic",
                 sigma2: float | None = None) -> ThermoState:
    """Stationary state predicted for ``cfg``: VMF statistics at the protocol temperature.

    The radius is the continuous-time prediction (or the fixed radius on the
    sphere, where the pressure is the effective weight decay).
    """
    T = temperature(cfg, sigma2)
    vmf = vmf_stats(T, cfg.d, mode)
    if cfg.protocol is Protocol.FIXED_SPHERE:
        r = cfg.radius
        p = lambda_eff_sde(cfg, sigma2)
    else:
        r = predicted_radius_sde(cfg, sigma2)
        p = cfg.lam
    return ThermoState(
        T=T, p=p, V=r * r / 2, R=gas_constant(cfg.d), U=vmf.U,
        S_sphere=vmf.S_sphere, S_total=vmf.S_sphere + (cfg.d - 1) * math.log(r),
    )
