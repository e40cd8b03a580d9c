"""Flat ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored.  Every problem accepts the keys
in :data:`COMMON`; the remaining keys are listed per problem in
:data:`PROBLEM_KEYS`.  Bounds accept ``none`` (or ``inf``/``-inf``) for an
open side.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields, replace

PROBLEMS = ("heat-control", "mms-smooth", "mms-bangbang", "transient-control", "mpec")


class ConfigError(ValueError):
    pass


@dataclass
class ProblemConfig:
    problem: str = "heat-control"
    n: int = 64
    lower: float = -math.inf
    upper: float = math.inf
    alpha: float = 0.0
    method: str = "projected-lbfgs"
    gtol: float = 1e-8
    ftol: float = 1e-9
    max_iter: int = 500
    seed: int = 1234
    levels: tuple = (8, 16, 32, 64, 128)
    T: float = 1.1
    dt: float = 0.1
    checkpoint: bool = False
    snaps_ram: int = 3
    snaps_disk: int = 2
    nu: float = 1e-2
    eps: float = 1e-4
    alpha0: float = 1e-3
    halvings: int = 10
    f: float = -10.0
    extra: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    def validate(self) -> "ProblemConfig":
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}")
        if self.n < 1:
            raise ConfigError("n must be at least 1")
        if self.lower > self.upper:
            raise ConfigError("lower bound exceeds upper bound")
        if self.alpha < 0 or self.nu < 0:
            raise ConfigError("regularisation weights must be non-negative")
        if min(self.gtol, self.ftol) <= 0 or self.max_iter < 1:
            raise ConfigError("termination tolerances must be positive")
        if self.problem.startswith("mms") and len(self.levels) < 2:
            raise ConfigError("a convergence study needs at least two levels")
        if self.problem == "transient-control":
            if self.dt <= 0 or self.T < self.dt:
                raise ConfigError("transient runs need dt > 0 and T >= dt")
            if abs(self.steps * self.dt - self.T) > 1e-9 * max(self.T, 1.0):
                raise ConfigError("T must be a whole number of timesteps")
            if self.checkpoint and self.snaps_ram + self.snaps_disk < 1:
                raise ConfigError("checkpointing needs at least one snapshot")
        if self.problem == "mpec":
            if self.alpha0 <= 0 or self.eps <= 0 or self.halvings < 0:
                raise ConfigError("mpec needs alpha0 > 0, eps > 0 and halvings >= 0")
        if self.method not in ("projected-lbfgs", "nelder-mead"):
            raise ConfigError(f"unknown method {self.method!r}")
        return self


DEFAULTS = {
    "heat-control": dict(n=64, lower=0.0, upper=0.5, alpha=0.0),
    "mms-smooth": dict(lower=-1.0, upper=1.0, alpha=0.0, levels=(8, 16, 32, 64, 128)),
    # J stays near 1 at the optimum, so the relative-change test needs to be tight
    "mms-bangbang": dict(lower=-1.0, upper=1.0, alpha=0.0, levels=(32, 64, 128, 256),
                         gtol=1e-12, ftol=1e-15),
    "transient-control": dict(n=16, lower=0.0, upper=0.5, alpha=0.0, T=1.1, dt=0.1),
    "mpec": dict(n=32, lower=-5.0, upper=5.0),
}

COMMON = ("n", "lower", "upper", "alpha", "method", "gtol", "ftol", "max_iter", "seed")
PROBLEM_KEYS = {
    "heat-control": (),
    "mms-smooth": ("levels",),
    "mms-bangbang": ("levels",),
    "transient-control": ("T", "dt", "checkpoint", "snaps_ram", "snaps_disk"),
    "mpec": ("nu", "eps", "alpha0", "halvings", "f"),
}


def _parse_value(name, text, kind):
    text = text.strip()
    try:
        if name in ("lower", "upper"):
            low = text.lower()
            if low in ("none", ""):
                return -math.inf if name == "lower" else math.inf
            return float(low)
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is tuple:
            return tuple(int(t) for t in text.replace(",", " ").split())
        return kind(text)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None


_TYPES = {f.name: f.type for f in fields(ProblemConfig)}
_KINDS = {"int": int, "float": float, "str": str, "bool": bool, "tuple": tuple}


def default_config(problem: str) -> ProblemConfig:
    if problem not in PROBLEMS:
        raise ConfigError(f"unknown problem {problem!r}")
    return replace(ProblemConfig(problem=problem), **DEFAULTS[problem])


def parse_config(text: str, problem: str) -> ProblemConfig:
    """Parse flat ``key = value`` text on top of the problem defaults."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(str(exc).replace("\n", " ")) from None
    cfg = default_config(problem)
    allowed = set(COMMON) | set(PROBLEM_KEYS[problem])
    updates = {}
    for key, raw in parser.items("run"):
        if key == "problem":
            if raw.strip() != problem:
                raise ConfigError(f"config is for {raw.strip()!r}, not {problem!r}")
            continue
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} for {problem}")
        updates[key] = _parse_value(key, raw, _KINDS[_TYPES[key]])
    return replace(cfg, **updates).validate()


def load_config(path, problem: str) -> ProblemConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, problem)
