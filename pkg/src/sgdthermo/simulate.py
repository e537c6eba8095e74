"""Noisy gradient descent on the toy loss under the three training protocols.

The single-step functions (``step_fixed_lr`` and friends) are plain numpy and
serve as the reference update.  :func:`run` executes the same update in a
compiled loop over pre-drawn noise, which is what makes 2e6-step runs cheap.
Both consume the generator identically, so a run can be replayed step by step.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from .geometry import LossModel, loss_gradient, project_to_sphere, random_unit_vector

__all__ = [
    "Protocol",
    "ProtocolConfig",
    "Trajectory",
    "InstabilityError",
    "step_fixed_lr",
    "step_fixed_elr",
    "step_fixed_sphere",
    "measure_lambda_eff",
    "run",
    "relaxation_rate",
    "auto_stride",
    "LOG_EVERY",
    "QUEUE_STRIDE",
    "QUEUE_SIZE",
]

LOG_EVERY = 50
QUEUE_STRIDE = 50
QUEUE_SIZE = 1000
ENTROPY_EVERY = 40_000
MIN_NORM = 1e-8
MAX_NORM = 1e8
_CHUNK = 65_536


class Protocol(str, enum.Enum):
    FIXED_SPHERE = "fixed_sphere"
    FIXED_ELR = "fixed_elr"
    FIXED_LR = "fixed_lr"

    @property
    def free_parameters(self) -> tuple[str, str]:
        """The two swept hyperparameters, in grid-axis order."""
        return _FREE[self]


_FREE = {
    Protocol.FIXED_SPHERE: ("eta_eff", "radius"),
    Protocol.FIXED_ELR: ("eta_eff", "lambda"),
    Protocol.FIXED_LR: ("eta", "lambda"),
}
_CODE = {Protocol.FIXED_LR: 0, Protocol.FIXED_ELR: 1, Protocol.FIXED_SPHERE: 2}


class InstabilityError(RuntimeError):
    """The iterate left the region ``MIN_NORM < |w| < MAX_NORM`` or became non-finite."""


@dataclass(frozen=True)
class ProtocolConfig:
    """Hyperparameters of one training run.

    Only the fields used by ``protocol`` may be set: ``eta`` and ``lam`` for
    fixed LR, ``eta_eff`` and ``lam`` for fixed ELR, ``eta_eff`` and
    ``radius`` for the fixed sphere.  ``lam = 0`` is allowed (no weight
    decay) but has no stationary radius.
    """

    protocol: Protocol
    sigma: float = 1.0
    d: int = 3
    iterations: int = 2_000_000
    seed: int = 0
    eta: float | None = None
    eta_eff: float | None = None
    lam: float | None = None
    radius: float | None = None
    w0: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        required = {
            Protocol.FIXED_LR: {"eta", "lam"},
            Protocol.FIXED_ELR: {"eta_eff", "lam"},
            Protocol.FIXED_SPHERE: {"eta_eff", "radius"},
        }[self.protocol]
        for name in ("eta", "eta_eff", "lam", "radius"):
            value = getattr(self, name)
            if name in required:
                if value is None:
                    raise ValueError("%s requires %s" % (self.protocol.value, name))
                if name == "lam" and not value >= 0:
                    raise ValueError("lam must be non-negative, got %r" % (value,))
                if name != "lam" and not value > 0:
                    raise ValueError("%s must be positive, got %r" % (name, value))
            elif value is not None:
                raise ValueError("%s does not use %s" % (self.protocol.value, name))
        if not self.sigma >= 0:
            raise ValueError("sigma must be non-negative")
        if self.d < 3:
            raise ValueError("d must be >= 3")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.w0 is not None:
            w0 = np.asarray(self.w0, dtype=float).copy()
            if w0.shape != (self.d,):
                raise ValueError("w0 must have shape (%d,)" % self.d)
            w0.setflags(write=False)
            object.__setattr__(self, "w0", w0)

    def with_(self, **changes) -> "ProtocolConfig":
        return replace(self, **changes)

    def initial_weights(self, rng: np.random.Generator) -> np.ndarray:
        if self.w0 is not None:
            return np.array(self.w0, dtype=float)
        u = random_unit_vector(self.d, rng)
        if self.protocol is Protocol.FIXED_SPHERE:
            return self.radius * u
        return u


def _noisy_gradient(w, model, sigma, eps):
    r = float(np.linalg.norm(w))
    w_bar = w / r
    noise = sigma * (eps - (w_bar @ eps) * w_bar)
    return loss_gradient(model, w) + noise / r


def _check(w):
    n = float(np.linalg.norm(w))
    if not (MIN_NORM <= n <= MAX_NORM) or not np.all(np.isfinite(w)):
        raise InstabilityError("iterate norm %r outside [%g, %g]" % (n, MIN_NORM, MAX_NORM))
    return w


def step_fixed_lr(w, cfg: ProtocolConfig, model: LossModel, rng: np.random.Generator):
    """``w - eta (grad L(w) + P sigma eps / |w| + lambda w)``."""
    w = np.asarray(w, dtype=float)
    eps = rng.standard_normal(w.size)
    g = _noisy_gradient(w, model, cfg.sigma, eps)
    return _check(w - cfg.eta * (g + cfg.lam * w))


def step_fixed_elr(w, cfg: ProtocolConfig, model: LossModel, rng: np.random.Generator):
    """Fixed-LR update with the learning rate rescaled to ``eta_eff |w|^2``."""
    w = np.asarray(w, dtype=float)
    eps = rng.standard_normal(w.size)
    eta = cfg.eta_eff * float(w @ w)
    g = _noisy_gradient(w, model, cfg.sigma, eps)
    return _check(w - eta * (g + cfg.lam * w))


def step_fixed_sphere(w, cfg: ProtocolConfig, model: LossModel, rng: np.random.Generator):
    return _sphere_step(np.asarray(w, dtype=float), cfg, model, rng)[0]


def measure_lambda_eff(w, cfg: ProtocolConfig, model: LossModel, rng: np.random.Generator) -> float:
    """Norm growth of the unprojected step per unit learning rate and radius.

    Consumes one noise draw, the same one ``step_fixed_sphere`` would use.
    """
    return _sphere_step(np.asarray(w, dtype=float), cfg, model, rng)[1]


def _sphere_step(w, cfg, model, rng):
    if cfg.protocol is not Protocol.FIXED_SPHERE:
        raise ValueError("fixed-sphere step needs a fixed_sphere config")
    r = float(np.linalg.norm(w))
    if abs(r - cfg.radius) > 1e-9 * max(1.0, cfg.radius):
        raise ValueError("w is not on the sphere of radius %g (|w| = %r)" % (cfg.radius, r))
    eps = rng.standard_normal(w.size)
    eta = cfg.eta_eff * r * r
    moved = w - eta * _noisy_gradient(w, model, cfg.sigma, eps)
    lam_eff = (float(np.linalg.norm(moved)) - r) / (eta * r)
    return project_to_sphere(moved, cfg.radius), lam_eff


@numba.njit(cache=True)
def _advance(w, mu, noise, k0, code, eta_param, lam, radius, sigma,
             log_every, out_w, out_lam, lam_acc):
    """Advance ``w`` in place by ``len(noise)`` steps.

    Every ``log_every``-th iterate is written to ``out_w`` together with the
    block mean of the lambda_eff samples (fixed sphere only).  Returns the
    number of steps done; fewer than requested means the guard tripped.
    """
    d = w.shape[0]
    n = noise.shape[0]
    g = np.empty(d)
    for s in range(n):
        r2 = 0.0
        for i in range(d):
            r2 += w[i] * w[i]
        r = math.sqrt(r2)
        c = 0.0
        e = 0.0
        for i in range(d):
            c += mu[i] * w[i]
            e += noise[s, i] * w[i]
        c /= r
        e /= r
        for i in range(d):
            wb = w[i] / r
            g[i] = (mu[i] - c * wb) / r + sigma * (noise[s, i] - e * wb) / r
        if code == 0:
            eta = eta_param
        else:
            eta = eta_param * r2
        if code == 2:
            m2 = 0.0
            for i in range(d):
                w[i] = w[i] - eta * g[i]
                m2 += w[i] * w[i]
            m = math.sqrt(m2)
            lam_acc[0] += (m - r) / (eta * r)
            for i in range(d):
                w[i] = radius * (w[i] / m)
        else:
            n2 = 0.0
            for i in range(d):
                w[i] = w[i] - eta * (g[i] + lam * w[i])
                n2 += w[i] * w[i]
            nn = math.sqrt(n2)
            if not (nn >= 1e-8 and nn <= 1e8):
                return s
        k = k0 + s + 1
        if k % log_every == 0:
            j = k // log_every - 1
            for i in range(d):
                out_w[j, i] = w[i]
            out_lam[j] = lam_acc[0] / log_every
            lam_acc[0] = 0.0
    return n


def relaxation_rate(cfg: ProtocolConfig) -> float:
    """Per-step angular relaxation rate near the minimum: the stationary ELR.

    The toy loss has unit curvature at its minimum, so the direction forgets
    its past at rate ``eta_eff`` per step; under fixed LR ``eta_eff`` is
    ``eta / r*^2`` with the continuous-time stationary radius.
    """
    if cfg.protocol is not Protocol.FIXED_LR:
        return cfg.eta_eff
    if cfg.sigma == 0 or cfg.lam == 0:
        return cfg.eta  # no stationary radius; any positive rate will do
    return math.sqrt(2 * cfg.eta * cfg.lam / (cfg.sigma**2 * (cfg.d - 1)))


def auto_stride(cfg: ProtocolConfig, base: int = QUEUE_STRIDE, decorrelation: float = 0.5) -> int:
    """Queue stride: ``base`` steps, stretched so that ``stride * eta_eff >= decorrelation``.

    Always a multiple of ``base``.  Consecutive queued weights then have an
    angular autocorrelation of at most ``exp(-decorrelation)``.
    """
    blocks = max(1, math.ceil(decorrelation / (base * relaxation_rate(cfg))))
    return base * blocks


@dataclass
class Trajectory:
    """Logged output of one run.

    ``weights`` holds the iterate every ``log_every`` steps (iterations
    ``log_every, 2 log_every, ...``); the loss, radius and gradient logs are
    derived from it.  The weight queue is the last ``queue_size`` logged
    iterates past the warm-up.
    """

    iterations: np.ndarray
    weights: np.ndarray
    mu: np.ndarray
    warmup: int
    queue_size: int = QUEUE_SIZE
    queue_stride: int = QUEUE_STRIDE
    lambda_eff_log: np.ndarray | None = None
    diverged: bool = False
    steps_done: int = 0
    final_w: np.ndarray | None = None

    @property
    def radius_log(self) -> np.ndarray:
        return np.linalg.norm(self.weights, axis=1)

    @property
    def loss_log(self) -> np.ndarray:
        return 1.0 + (self.weights @ self.mu) / self.radius_log

    @property
    def grad_sq_log(self) -> np.ndarray:
        """``|grad L(w_bar)|^2 = 1 - (mu . w_bar)^2`` at each logging instant."""
        c = (self.weights @ self.mu) / self.radius_log
        return 1.0 - c * c

    def _queue_end_indices(self) -> np.ndarray:
        keep = self.iterations > self.warmup
        keep &= (self.iterations % self.queue_stride) == 0
        return np.flatnonzero(keep)

    def queue_at(self, iteration: int) -> np.ndarray:
        """Queue contents right after ``iteration`` steps."""
        idx = self._queue_end_indices()
        idx = idx[self.iterations[idx] <= iteration]
        return self.weights[idx[-self.queue_size :]] if idx.size else self.weights[:0]

    @property
    def weight_queue(self) -> np.ndarray:
        return self.queue_at(int(self.iterations[-1])) if self.iterations.size else self.weights[:0]

    def queue_snapshots(self, every: int = ENTROPY_EVERY, last: int = 10) -> list[np.ndarray]:
        """Queues at the post-warm-up multiples of ``every`` (the last ``last`` of them).

        Falls back to the final queue when no such instant exists.
        """
        if not self.iterations.size:
            return []
        end = int(self.iterations[-1])
        marks = [k for k in range(every, end + 1, every) if k > self.warmup]
        snaps = [self.queue_at(k) for k in marks[-last:]]
        snaps = [q for q in snaps if len(q) >= 2]
        return snaps or [self.weight_queue]


def run(cfg: ProtocolConfig, model: LossModel, warmup: int | None = None,
        queue_size: int = QUEUE_SIZE, queue_stride: int = QUEUE_STRIDE,
        log_every: int = LOG_EVERY) -> Trajectory:
    """Execute ``cfg.iterations`` steps of the configured protocol.

    The generator seeded with ``cfg.seed`` first draws the initial direction
    (unless ``cfg.w0`` is given) and then one standard-normal d-vector per
    step.  A tripped divergence guard ends the run early with
    ``diverged=True`` and the logs collected so far.
    """
    if model.d != cfg.d:
        raise ValueError("model dimension %d != config dimension %d" % (model.d, cfg.d))
    if queue_stride % log_every:
        raise ValueError("queue stride must be a multiple of the logging interval")
    if warmup is None:
        warmup = cfg.iterations // 2
    rng = np.random.default_rng(cfg.seed)
    w = cfg.initial_weights(rng)
    if cfg.protocol is Protocol.FIXED_SPHERE:
        w = project_to_sphere(w, cfg.radius)

    code = _CODE[cfg.protocol]
    eta_param = cfg.eta if code == 0 else cfg.eta_eff
    lam = cfg.lam if cfg.lam is not None else 0.0
    radius = cfg.radius if cfg.radius is not None else 0.0
    mu = np.ascontiguousarray(model.mu)

    n_logs = cfg.iterations // log_every
    out_w = np.empty((n_logs, cfg.d))
    out_lam = np.empty(n_logs)
    lam_acc = np.zeros(1)
    done = 0
    diverged = False
    while done < cfg.iterations:
        n = min(_CHUNK, cfg.iterations - done)
        noise = rng.standard_normal((n, cfg.d))
        got = _advance(w, mu, noise, done, code, eta_param, lam, radius, cfg.sigma,
                       log_every, out_w, out_lam, lam_acc)
        done += got
        if got < n or not np.all(np.isfinite(w)):
            diverged = True
            break
    n_kept = done // log_every
    iters = log_every * np.arange(1, n_kept + 1)
    return Trajectory(
        iterations=iters,
        weights=out_w[:n_kept],
        mu=model.mu,
        warmup=warmup,
        queue_size=queue_size,
        queue_stride=queue_stride,
        lambda_eff_log=out_lam[:n_kept] if code == 2 else None,
        diverged=diverged,
        steps_done=done,
        final_w=w,
    )
