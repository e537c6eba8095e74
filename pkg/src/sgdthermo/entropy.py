"""Nearest-neighbour (Kozachenko-Leonenko) entropy estimates, flat and on spheres."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import gammaln

from .geometry import log_jacobian, to_spherical

__all__ = [
    "DegenerateSampleError",
    "EntropyEstimate",
    "kl_constant",
    "knn_entropy",
    "sphere_entropy",
    "total_entropy",
]

MIN_DISTANCE = 1e-12


class DegenerateSampleError(ValueError):
    """Fewer than two usable samples remain."""


@dataclass(frozen=True)
class EntropyEstimate:
    value: float
    n_used: int
    n_dropped: int


def kl_constant(n: int, m: int) -> float:
    """``log(N-1) - log Gamma(m/2 + 1) + (m/2) log pi + euler_gamma``."""
    return float(np.log(n - 1) - gammaln(m / 2 + 1) + 0.5 * m * np.log(np.pi) + np.euler_gamma)


def _nn_distances(x: np.ndarray) -> np.ndarray:
    dist, _ = cKDTree(x).query(x, k=2)
    return dist[:, 1]


def knn_entropy(samples) -> EntropyEstimate:
    """Differential entropy (nats) of an ``(N, m)`` sample from 1-NN distances.

    Points whose nearest neighbour is closer than ``MIN_DISTANCE`` are
    dropped, and the distances are recomputed on what is left.
    """
    return _knn(samples)[0]


def _knn(samples):
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError("samples must be an (N, m) array")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    n_total, m = x.shape
    if n_total < 2:
        raise DegenerateSampleError("need at least 2 samples, got %d" % n_total)
    keep = np.arange(n_total)
    while True:
        zeta = _nn_distances(x[keep])
        bad = zeta < MIN_DISTANCE
        if not bad.any():
            break
        keep = keep[~bad]
        if len(keep) < 2:
            raise DegenerateSampleError("all samples coincide")
    n = len(keep)
    value = m * float(np.mean(np.log(zeta))) + kl_constant(n, m)
    return EntropyEstimate(value=value, n_used=n, n_dropped=n_total - n), keep


def _reflect_towards(x: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Householder reflection of the rows of ``x`` taking their mean direction onto ``target``."""
    mean = x.mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm < 1e-12:
        return x
    v = mean / norm - target
    vv = v @ v
    if vv < 1e-24:
        return x
    return x - np.outer(x @ v, 2.0 * v / vv)


def sphere_entropy(directions, recenter: bool = True) -> EntropyEstimate:
    """Entropy on the unit sphere via angle-space NN entropy plus the mean log-Jacobian.

    With ``recenter`` the sample is first reflected so that its mean
    direction points at ``-e_{d-1}`` (all polar angles pi/2, azimuth pi).
    That keeps concentrated samples away from the poles and the azimuth
    seam; the true entropy is unchanged by any isometry.
    """
    x = np.asarray(directions, dtype=float)
    if x.ndim != 2 or x.shape[1] < 3:
        raise ValueError("directions must be an (N, d) array with d >= 3")
    n_total, d = x.shape
    x = x / np.linalg.norm(x, axis=1, keepdims=True)
    if recenter:
        target = np.zeros(d)
        target[d - 2] = -1.0
        x = _reflect_towards(x, target)
    theta = to_spherical(x)
    logj = log_jacobian(theta)
    ok = np.isfinite(logj)
    if ok.sum() < 2:
        raise DegenerateSampleError("fewer than 2 samples off the coordinate poles")
    angles = theta.as_array()[ok]
    flat, keep = _knn(angles)
    value = flat.value + float(np.mean(logj[ok][keep]))
    return EntropyEstimate(value=value, n_used=flat.n_used, n_dropped=n_total - flat.n_used)


def total_entropy(weights, recenter: bool = True) -> float:
    """Sphere entropy of the directions plus ``(d-1) log`` of the mean norm."""
    w = np.asarray(weights, dtype=float)
    norms = np.linalg.norm(w, axis=1)
    if np.any(norms == 0):
        raise ValueError("weights must be nonzero")
    d = w.shape[1]
    s = sphere_entropy(w / norms[:, None], recenter=recenter)
    return s.value + (d - 1) * float(np.log(norms.mean()))
