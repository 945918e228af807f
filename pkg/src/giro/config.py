"""Experiment configuration in a flat ``key = value`` text form.

Example::

    mode = mab
    n = 10000
    runs = 50
    master_seed = 7
    env.family = bernoulli
    env.K = 10
    env.means = uniform(0.25,0.75)
    means.redraw = per-run

    policy.name = giro
    policy.a = 1
    policy.name = ucb1

Each ``policy.name`` line opens a new policy block; the ``policy.<param>``
lines after it belong to that block. ``#`` starts a comment.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, fields
from fractions import Fraction
from pathlib import Path

import numpy as np

from .contextual import (CONTEXTUAL_POLICIES, ContextualEpsilonGreedy, ContextualPolicy,
                         make_contextual_policy)
from .core import BERNOULLI, BETA
from .policies import Policy, calibrate_eg_schedule, make_policy

MODES = ("mab", "contextual", "lemma1", "verify-bounds")
REDRAW = ("per-run", "fixed")
LOGISTIC_ENV = "logistic"
CLASSIFICATION_ENV = "classification"

_UNIFORM_RE = re.compile(r"^uniform\(\s*([^,]+)\s*,\s*([^)]+)\s*\)$")


class ConfigError(ValueError):
    pass


def parse_value(text: str):
    """Literal from a config value: bool, int, fraction like ``1/3``, float or string."""
    t = text.strip()
    low = t.lower()
    if low in ("true", "false"):
        return low == "true"
    for conv in (int, float):
        try:
            return conv(t)
        except ValueError:
            pass
    if re.fullmatch(r"[+-]?\d+\s*/\s*\d+", t):
        return float(Fraction(t.replace(" ", "")))
    return t


@dataclass
class PolicySpec:
    name: str
    params: dict[str, str] = field(default_factory=dict)

    def kwargs(self) -> dict:
        return {k: parse_value(v) for k, v in self.params.items()}

    def build(self, n: int) -> Policy:
        kw = self.kwargs()
        if self.name == "eg" and "b" not in kw:
            kw["b"] = calibrate_eg_schedule(n, kw.pop("exploration", 0.01))
        try:
            return make_policy(self.name, **kw)
        except TypeError as exc:
            raise ConfigError(f"policy {self.name!r}: {exc}") from None

    def build_contextual(self, n: int) -> ContextualPolicy:
        try:
            policy = make_contextual_policy(self.name, **self.kwargs())
        except TypeError as exc:
            raise ConfigError(f"policy {self.name!r}: {exc}") from None
        if isinstance(policy, ContextualEpsilonGreedy):
            policy.calibrate(n)
        return policy


@dataclass
class ExperimentConfig:
    mode: str = "mab"
    n: int = 1000
    runs: int = 10
    master_seed: int = 0
    output: str | None = None
    workers: int = 1
    independent_draws: bool = False
    family: str = BERNOULLI
    K: int = 10
    means: str = "uniform(0.25,0.75)"
    v: float = 1.0
    redraw: str = "per-run"
    d: int = 5
    thetas: str | None = None
    theta_seed: int = 0
    data: str | None = None
    shuffle_seed: int = 0
    policies: list[PolicySpec] = field(default_factory=list)

    # file key -> attribute
    KEYS = {
        "mode": "mode", "n": "n", "runs": "runs", "master_seed": "master_seed",
        "output": "output", "workers": "workers", "independent_draws": "independent_draws",
        "env.family": "family", "env.K": "K", "env.means": "means", "env.v": "v",
        "means.redraw": "redraw", "env.d": "d", "env.thetas": "thetas",
        "env.theta_seed": "theta_seed", "env.data": "data", "env.shuffle_seed": "shuffle_seed",
    }

    # ---- text form

    def to_text(self) -> str:
        lines = []
        for key, attr in self.KEYS.items():
            value = getattr(self, attr)
            if value is None:
                continue
            if isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{key} = {value}")
        for spec in self.policies:
            lines.append("")
            lines.append(f"policy.name = {spec.name}")
            lines.extend(f"policy.{k} = {v}" for k, v in spec.params.items())
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "ExperimentConfig":
        types = {f.name: f.type for f in fields(cls)}
        values: dict = {}
        policies: list[PolicySpec] = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key == "policy.name":
                policies.append(PolicySpec(value))
            elif key.startswith("policy."):
                if not policies:
                    raise ConfigError(f"{source}:{lineno}: {key} before any policy.name")
                policies[-1].params[key[len("policy."):]] = value
            elif key in cls.KEYS:
                attr = cls.KEYS[key]
                try:
                    values[attr] = _convert(value, types[attr])
                except ValueError:
                    raise ConfigError(f"{source}:{lineno}: bad value for {key}: {value!r}") from None
            else:
                raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        config = cls(**values, policies=policies)
        config.validate()
        return config

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_text(path.read_text(encoding="utf-8"), str(path))

    def dump(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8", newline="\n")

    # ---- validation and environment parameters

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.n < 1 or self.runs < 1:
            raise ConfigError("n and runs must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be positive")
        if self.redraw not in REDRAW:
            raise ConfigError(f"means.redraw must be one of {REDRAW}")
        if self.mode == "mab":
            if self.family not in (BERNOULLI, BETA):
                raise ConfigError(f"mab mode needs a bernoulli or beta family, got {self.family!r}")
            self.mean_rule()
        if self.mode == "contextual":
            if self.family not in (LOGISTIC_ENV, CLASSIFICATION_ENV):
                raise ConfigError("contextual mode needs env.family = logistic or classification")
            if self.family == LOGISTIC_ENV:
                self.theta_matrix()
            for spec in self.policies:
                if spec.name not in CONTEXTUAL_POLICIES:
                    raise ConfigError(f"unknown contextual policy {spec.name!r}")
        if self.mode in ("mab", "contextual") and not self.policies:
            raise ConfigError("no policies configured")

    def mean_rule(self) -> tuple[float, float] | tuple[float, ...]:
        """('uniform', lo, hi) or the explicit means."""
        m = _UNIFORM_RE.match(self.means.strip())
        if m:
            lo, hi = float(m.group(1)), float(m.group(2))
            if not 0.0 <= lo <= hi <= 1.0:
                raise ConfigError(f"uniform mean range must satisfy 0 <= lo <= hi <= 1: {self.means}")
            return ("uniform", lo, hi)
        try:
            means = tuple(float(x) for x in self.means.split(","))
        except ValueError:
            raise ConfigError(f"env.means must be uniform(lo,hi) or a list: {self.means!r}") from None
        if len(means) != self.K:
            raise ConfigError(f"env.means lists {len(means)} arms but env.K = {self.K}")
        return means

    def theta_matrix(self) -> np.ndarray:
        """Logistic environment parameters, shape (K, d + 1) with the bias last."""
        if self.thetas is None:
            return np.random.default_rng(self.theta_seed).standard_normal((self.K, self.d + 1))
        try:
            rows = [[float(x) for x in r.split(",")] for r in self.thetas.split(";")]
        except ValueError:
            raise ConfigError(f"env.thetas is not numeric: {self.thetas!r}") from None
        if len(rows) != self.K or any(len(r) != self.d + 1 for r in rows):
            raise ConfigError(f"env.thetas must be {self.K} rows of {self.d + 1} values")
        return np.asarray(rows)


def _convert(value: str, typ):
    typ = str(typ)
    if value.lower() in ("none", "") and "None" in typ:
        return None
    if typ.startswith("bool"):
        low = value.lower()
        if low not in ("true", "false"):
            raise ValueError(value)
        return low == "true"
    if typ.startswith("int"):
        return int(value)
    if typ.startswith("float"):
        return float(value)
    return value
