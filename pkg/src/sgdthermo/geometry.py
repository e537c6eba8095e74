"""Scale-invariant toy loss, sphere helpers and hyperspherical coordinates.

The loss is ``L(w) = 1 + mu . w / |w|``.  Its minimum sits at ``w = -mu``
and it only depends on the direction of ``w``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DomainError",
    "LossModel",
    "AngularCoords",
    "loss_value",
    "loss_gradient",
    "project_to_sphere",
    "to_spherical",
    "from_spherical",
    "log_jacobian",
    "sample_tangent_noise",
    "random_unit_vector",
]


class DomainError(ValueError):
    """Raised for inputs outside the domain of a geometric operation (e.g. w = 0)."""


def _norm(w: np.ndarray) -> float:
    n = float(np.linalg.norm(w))
    if not n > 0.0 or not np.isfinite(n):
        raise DomainError("the origin is excluded: got a vector with norm %r" % n)
    return n


def random_unit_vector(d: int, rng: np.random.Generator) -> np.ndarray:
    """Draw a point uniformly from the unit sphere in R^d."""
    while True:
        x = rng.standard_normal(d)
        n = np.linalg.norm(x)
        if n > 1e-12:
            return x / n


@dataclass(frozen=True)
class LossModel:
    """The scale-invariant objective ``1 + mu . w / |w|``.

    Parameters
    ----------
    mu : ndarray
        Unit direction of the loss (the minimum is at ``-mu``).
    """

    mu: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).copy()
        if mu.ndim != 1:
            raise ValueError("mu must be a 1-d vector")
        if mu.size < 3:
            raise ValueError("dimension must be at least 3, got %d" % mu.size)
        if abs(np.linalg.norm(mu) - 1.0) > 1e-12:
            raise ValueError("mu must have unit norm (|mu| = %r)" % np.linalg.norm(mu))
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)

    @property
    def d(self) -> int:
        return self.mu.size

    @classmethod
    def random(cls, d: int, seed: int = 0) -> "LossModel":
        """Loss with ``mu`` drawn uniformly from the sphere, reproducibly from ``seed``."""
        mu = random_unit_vector(d, np.random.default_rng(seed))
        return cls(mu / np.linalg.norm(mu))


def loss_value(model: LossModel, w: np.ndarray) -> float:
    w = np.asarray(w, dtype=float)
    return 1.0 + float(model.mu @ w) / _norm(w)


def loss_gradient(model: LossModel, w: np.ndarray) -> np.ndarray:
    """Gradient ``(I - w_bar w_bar^T) mu / |w|``; orthogonal to ``w``."""
    w = np.asarray(w, dtype=float)
    r = _norm(w)
    w_bar = w / r
    return (model.mu - (model.mu @ w_bar) * w_bar) / r


def project_to_sphere(w: np.ndarray, r: float) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    return r * (w / _norm(w))


@dataclass(frozen=True)
class AngularCoords:
    """Hyperspherical angles of a unit vector in R^d.

    ``polar`` holds the d-2 angles in [0, pi], ``azimuth`` lies in [0, 2 pi).
    Both may carry a leading batch dimension.
    """

    polar: np.ndarray
    azimuth: np.ndarray

    def as_array(self) -> np.ndarray:
        """Stack into ``(..., d-1)`` with the azimuth last."""
        return np.concatenate([self.polar, self.azimuth[..., None]], axis=-1)


def to_spherical(w_bar: np.ndarray) -> AngularCoords:
    """Convert unit vector(s) of shape ``(d,)`` or ``(N, d)`` to angles.

    Uses ``x1 = cos t1``, ``x_k = sin t1 ... sin t_{k-1} cos t_k`` and
    ``(x_{d-1}, x_d) = sin t1 ... sin t_{d-2} (cos phi, sin phi)``.  At a
    pole, every angle downstream of the degenerate one is set to 0.
    """
    x = np.asarray(w_bar, dtype=float)
    d = x.shape[-1]
    if d < 3:
        raise ValueError("need d >= 3 for polar angles, got %d" % d)
    # tail[..., k] = |(x_k, ..., x_d)|
    tail = np.sqrt(np.cumsum((x**2)[..., ::-1], axis=-1)[..., ::-1])
    polar = np.arctan2(tail[..., 1 : d - 1], x[..., : d - 2])
    azimuth = np.mod(np.arctan2(x[..., d - 1], x[..., d - 2]), 2.0 * np.pi)
    # arctan2 may return exactly 2 pi after the mod for tiny negative angles
    azimuth = np.where(azimuth >= 2.0 * np.pi, 0.0, azimuth)

    degenerate = tail[..., 1 : d - 1] == 0.0
    if np.any(degenerate):
        # once a tail vanishes, all later angles are undetermined
        dead = np.logical_or.accumulate(degenerate, axis=-1)
        shifted = np.zeros_like(dead)
        shifted[..., 1:] = dead[..., :-1]
        polar = np.where(shifted, 0.0, polar)
        azimuth = np.where(dead[..., -1], 0.0, azimuth)
    return AngularCoords(polar=polar, azimuth=azimuth)


def from_spherical(theta: AngularCoords) -> np.ndarray:
    polar = np.asarray(theta.polar, dtype=float)
    phi = np.asarray(theta.azimuth, dtype=float)
    m = polar.shape[-1]
    out = np.empty(polar.shape[:-1] + (m + 2,))
    sin_prod = np.ones(polar.shape[:-1])
    for k in range(m):
        out[..., k] = sin_prod * np.cos(polar[..., k])
        sin_prod = sin_prod * np.sin(polar[..., k])
    out[..., m] = sin_prod * np.cos(phi)
    out[..., m + 1] = sin_prod * np.sin(phi)
    return out


def log_jacobian(theta: AngularCoords) -> np.ndarray | float:
    """``sum_j (d-1-j) log sin(theta_j)``; ``-inf`` at a pole."""
    polar = np.asarray(theta.polar, dtype=float)
    m = polar.shape[-1]  # d - 2
    weights = np.arange(m, 0, -1, dtype=float)  # d-1-j for j = 1..d-2
    with np.errstate(divide="ignore"):
        logs = np.log(np.sin(polar))
    # sin(pi) is ~1e-16 rather than 0 in floating point
    logs = np.where((polar <= 0.0) | (polar >= np.pi), -np.inf, logs)
    out = np.sum(weights * logs, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def sample_tangent_noise(w_bar: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """``sigma * (I - w_bar w_bar^T) eps`` with ``eps ~ N(0, I_d)``."""
    w_bar = np.asarray(w_bar, dtype=float)
    eps = rng.standard_normal(w_bar.size)
    return sigma * (eps - (w_bar @ eps) * w_bar)
