"""Experiment plan files.

A plan is a small line-oriented file::

    # fixed-LR grid, thinned to 9 x 5
    [experiment]
    protocol = fixed_lr
    d = 3

    [axis.eta]
    min = 1e-3
    max = 1e-1
    count = 9

    [axis.lambda]
    min = 1e-3
    max = 1e-1
    count = 5

Keys and defaults
-----------------
``[experiment]``
    protocol (required: fixed_lr, fixed_elr, fixed_sphere), d = 3,
    sigma = 1.0, iterations = 2000000, seed = 0, seeds = 1 (replicates per
    cell), mu_seed = 0, mu (explicit comma-separated direction; overrides
    mu_seed), workers = 1, output = results.
``[sampling]``
    warmup = 0.5 (fraction of the budget discarded before queueing),
    queue_size = 1000, queue_stride = auto (or a step count; ``auto`` is 50
    steps, stretched in slowly mixing cells to about 0.5 / eta_eff steps),
    log_every = 50,
    entropy_every = 40000, entropy_logs = 10.
``[axis.<name>]``
    one section per free hyperparameter of the protocol (eta/lambda,
    eta_eff/lambda, eta_eff/radius): min, max (defaults 1e-3 and 1e-1, or
    1e-1 and 1e1 for radius), count = 17, log = true.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .simulate import Protocol

__all__ = ["PlanError", "Axis", "ExperimentPlan", "parse_plan", "parse_plan_text", "write_plan"]


class PlanError(ValueError):
    """Invalid plan file; the message names the offending line where there is one."""


@dataclass(frozen=True)
class Axis:
    name: str
    min: float
    max: float
    count: int = 17
    log: bool = True

    def values(self) -> np.ndarray:
        if self.count == 1:
            return np.array([self.min])
        if self.log:
            return np.logspace(math.log10(self.min), math.log10(self.max), self.count)
        return np.linspace(self.min, self.max, self.count)


_AXIS_DEFAULTS = {"eta": (1e-3, 1e-1), "eta_eff": (1e-3, 1e-1), "lambda": (1e-3, 1e-1),
                  "radius": (1e-1, 1e1)}


@dataclass(frozen=True)
class ExperimentPlan:
    protocol: Protocol
    axes: tuple[Axis, Axis]
    d: int = 3
    sigma: float = 1.0
    iterations: int = 2_000_000
    seed: int = 0
    seeds: int = 1
    mu_seed: int = 0
    mu: tuple[float, ...] | None = None
    workers: int = 1
    output: str = "results"
    warmup: float = 0.5
    queue_size: int = 1000
    queue_stride: int | str = "auto"
    log_every: int = 50
    entropy_every: int = 40_000
    entropy_logs: int = 10

    @property
    def shape(self) -> tuple[int, int]:
        return self.axes[0].count, self.axes[1].count

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["protocol"] = self.protocol.value
        out["axes"] = [vars(a).copy() for a in self.axes]
        out["mu"] = list(self.mu) if self.mu is not None else None
        return out


_EXPERIMENT_KEYS = {
    "protocol": str, "d": int, "sigma": float, "iterations": int, "seed": int,
    "seeds": int, "mu_seed": int, "mu": "vector", "workers": int, "output": str,
}
_SAMPLING_KEYS = {
    "warmup": float, "queue_size": int, "queue_stride": "stride", "log_every": int,
    "entropy_every": int, "entropy_logs": int,
}
_AXIS_KEYS = {"min": float, "max": float, "count": int, "log": bool}

_SECTION = re.compile(r"^\[([A-Za-z_][\w.]*)\]$")


def _convert(kind, raw: str, where: str):
    try:
        if kind is int:
            value = float(raw)
            if not value.is_integer():
                raise ValueError
            return int(value)
        if kind is float:
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError
            return value
        if kind is bool:
            low = raw.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError
        if kind == "stride":
            return "auto" if raw == "auto" else _convert(int, raw, where)
        if kind == "vector":
            return tuple(float(v) for v in raw.split(","))
        return raw
    except ValueError:
        raise PlanError("%s: malformed value %r" % (where, raw)) from None


def parse_plan(path) -> ExperimentPlan:
    path = Path(path)
    return parse_plan_text(path.read_text(), str(path))


def parse_plan_text(text: str, source: str = "<plan>") -> ExperimentPlan:
    sections: dict[str, dict[str, tuple[object, int]]] = {}
    current = None
    for lineno, line in enumerate(text.splitlines(), 1):
        where = "%s:%d" % (source, lineno)
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SECTION.match(line)
        if m:
            current = m.group(1)
            if current in sections:
                raise PlanError("%s: duplicate section [%s]" % (where, current))
            if current not in ("experiment", "sampling") and not current.startswith("axis."):
                raise PlanError("%s: unknown section [%s]" % (where, current))
            sections[current] = {}
            continue
        if "=" not in line:
            raise PlanError("%s: expected key = value, got %r" % (where, line))
        if current is None:
            raise PlanError("%s: key outside of a [section]" % where)
        key, raw = (s.strip() for s in line.split("=", 1))
        if current == "experiment":
            allowed = _EXPERIMENT_KEYS
        elif current == "sampling":
            allowed = _SAMPLING_KEYS
        else:
            allowed = _AXIS_KEYS
        if key not in allowed:
            raise PlanError("%s: unknown key %r in [%s]" % (where, key, current))
        if key in sections[current]:
            raise PlanError("%s: duplicate key %r (first set on line %d)"
                            % (where, key, sections[current][key][1]))
        sections[current][key] = (_convert(allowed[key], raw, where), lineno)

    def line_of(section, key=None):
        entries = sections.get(section, {})
        if key in entries:
            return "%s:%d" % (source, entries[key][1])
        return source

    exp = {k: v for k, (v, _) in sections.get("experiment", {}).items()}
    if "protocol" not in exp:
        raise PlanError("%s: missing required key 'protocol' in [experiment]" % source)
    try:
        protocol = Protocol(exp.pop("protocol"))
    except ValueError:
        raise PlanError("%s: unknown protocol (expected one of %s)"
                        % (line_of("experiment", "protocol"),
                           ", ".join(p.value for p in Protocol))) from None

    free = protocol.free_parameters
    axes = []
    for name in [s[5:] for s in sections if s.startswith("axis.")]:
        if name not in free:
            raise PlanError("%s: axis %r does not apply to %s (free parameters: %s)"
                            % (line_of("axis." + name), name, protocol.value, ", ".join(free)))
    for name in free:
        sec = "axis." + name
        if sec not in sections:
            raise PlanError("%s: missing section [%s] required by %s" % (source, sec, protocol.value))
        vals = {k: v for k, (v, _) in sections[sec].items()}
        lo, hi = _AXIS_DEFAULTS[name]
        axis = Axis(name=name, min=vals.get("min", lo), max=vals.get("max", hi),
                    count=vals.get("count", 17), log=vals.get("log", True))
        if axis.count < 1:
            raise PlanError("%s: count must be >= 1" % line_of(sec, "count"))
        if not 0 < axis.min <= axis.max:
            raise PlanError("%s: need 0 < min <= max" % line_of(sec, "min"))
        axes.append(axis)

    kw = dict(exp)
    kw.update({k: v for k, (v, _) in sections.get("sampling", {}).items()})
    plan = ExperimentPlan(protocol=protocol, axes=tuple(axes), **kw)
    _validate(plan, lambda key: line_of("experiment", key) if key in _EXPERIMENT_KEYS
              else line_of("sampling", key))
    return plan


def _validate(plan: ExperimentPlan, where) -> None:
    checks = [
        ("d", plan.d >= 3, "d must be >= 3"),
        ("sigma", plan.sigma > 0, "sigma must be positive"),
        ("iterations", plan.iterations >= 0, "iterations must be >= 0"),
        ("seeds", plan.seeds >= 1, "seeds must be >= 1"),
        ("workers", plan.workers >= 1, "workers must be >= 1"),
        ("warmup", 0 <= plan.warmup < 1, "warmup must be a fraction in [0, 1)"),
        ("queue_size", plan.queue_size >= 2, "queue_size must be >= 2"),
        ("log_every", plan.log_every >= 1, "log_every must be >= 1"),
        ("queue_stride", plan.queue_stride == "auto" or (
            plan.queue_stride >= 1 and plan.queue_stride % plan.log_every == 0),
         "queue_stride must be 'auto' or a positive multiple of log_every"),
        ("entropy_every", plan.entropy_every >= 1, "entropy_every must be >= 1"),
        ("entropy_logs", plan.entropy_logs >= 1, "entropy_logs must be >= 1"),
    ]
    for key, ok, msg in checks:
        if not ok:
            raise PlanError("%s: %s" % (where(key), msg))
    if plan.mu is not None:
        if len(plan.mu) != plan.d:
            raise PlanError("%s: mu has %d components, d = %d" % (where("mu"), len(plan.mu), plan.d))
        if np.linalg.norm(plan.mu) == 0:
            raise PlanError("%s: mu must be nonzero" % where("mu"))


def write_plan(plan: ExperimentPlan) -> str:
    """Serialise a plan so that ``parse_plan_text(write_plan(p)) == p``."""
    lines = ["[experiment]", "protocol = %s" % plan.protocol.value]
    for key in _EXPERIMENT_KEYS:
        if key == "protocol":
            continue
        value = getattr(plan, key)
        if value is None:
            continue
        if key == "mu":
            value = ", ".join(repr(float(v)) for v in value)
        lines.append("%s = %s" % (key, _fmt(value)))
    lines += ["", "[sampling]"]
    lines += ["%s = %s" % (key, _fmt(getattr(plan, key))) for key in _SAMPLING_KEYS]
    for axis in plan.axes:
        lines += ["", "[axis.%s]" % axis.name, "min = %r" % axis.min, "max = %r" % axis.max,
                  "count = %d" % axis.count, "log = %s" % str(axis.log).lower()]
    return "\n".join(lines) + "\n"


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return str(value)
