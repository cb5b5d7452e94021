"""Strict TOML experiment configuration."""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .fkmodel import binary_model
from .measures import DiscretePMF
from .rng import MASK64


@dataclass(frozen=True)
class ModelSection:
    epsilon: float = 0.1
    g0: float = 1.0
    g1: float = 1.0
    initial_p1: float = 0.5
    horizon: int = 10_000


@dataclass(frozen=True)
class GridSection:
    N: Optional[tuple] = None
    k: Optional[tuple] = None
    q: Optional[tuple] = None
    p: int = 2
    schemes: Optional[tuple] = None


@dataclass(frozen=True)
class RunSection:
    replicates: int = 200
    master_seed: int = 0
    threads: int = 1
    max_steps: int = 10_000
    alternate_start: str = "state"


@dataclass(frozen=True)
class OutputSection:
    directory: str = "results"
    csv: Optional[str] = None


@dataclass(frozen=True)
class ScenarioSection:
    delayed_g0: float = 0.1
    delayed_g1: float = 1.0
    delays: tuple = (1, 2, 4, 8)


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSection = field(default_factory=ModelSection)
    grid: GridSection = field(default_factory=GridSection)
    run: RunSection = field(default_factory=RunSection)
    output: OutputSection = field(default_factory=OutputSection)
    scenario: Optional[ScenarioSection] = None

    def build_model(self):
        m = self.model
        return binary_model(m.epsilon, m.g0, m.g1, T=m.horizon, initial=DiscretePMF.bernoulli(m.initial_p1))


_SECTIONS = {
    "model": ModelSection,
    "grid": GridSection,
    "run": RunSection,
    "output": OutputSection,
    "scenario": ScenarioSection,
}
_LIST_KEYS = {"N", "k", "q", "schemes", "delays"}
_INT_KEYS = {"horizon", "p", "replicates", "master_seed", "threads", "max_steps"}
_FLOAT_KEYS = {"epsilon", "g0", "g1", "initial_p1", "delayed_g0", "delayed_g1"}


def _coerce(section: str, key: str, value):
    where = f"[{section}].{key}"
    if key in _LIST_KEYS:
        if not isinstance(value, list) or not value:
            raise ConfigError(f"{where} must be a nonempty list")
        if key == "schemes":
            if not all(isinstance(v, str) for v in value):
                raise ConfigError(f"{where} must list scheme names")
            return tuple(value)
        if not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{where} must list integers")
        if key != "k" and any(v <= 0 for v in value):
            raise ConfigError(f"{where} entries must be positive")
        if key == "k" and any(v < 0 for v in value):
            raise ConfigError(f"{where} entries must be nonnegative")
        return tuple(value)
    if key in _INT_KEYS:
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{where} must be an integer")
        return value
    if key in _FLOAT_KEYS:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f"{where} must be a finite number")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{where} must be a string")
    return value


def _validate(cfg: ExperimentConfig) -> None:
    m, r = cfg.model, cfg.run
    if not 0.0 < m.epsilon < 0.5:
        raise ConfigError("[model].epsilon must lie in (0, 1/2)")
    if m.g0 <= 0 or m.g1 <= 0:
        raise ConfigError("[model] potentials must be positive")
    if not 0.0 <= m.initial_p1 <= 1.0:
        raise ConfigError("[model].initial_p1 must lie in [0, 1]")
    if m.horizon < 1:
        raise ConfigError("[model].horizon must be positive")
    if r.replicates < 1:
        raise ConfigError("[run].replicates must be positive")
    if not 0 <= r.master_seed <= MASK64:
        raise ConfigError("[run].master_seed must be a 64-bit unsigned integer")
    if r.threads < 1:
        raise ConfigError("[run].threads must be positive")
    if r.max_steps < 1:
        raise ConfigError("[run].max_steps must be positive")
    if r.alternate_start not in ("state", "individual"):
        raise ConfigError("[run].alternate_start must be 'state' or 'individual'")
    if cfg.grid.p < 1:
        raise ConfigError("[grid].p must be positive")
    if cfg.scenario is not None:
        s = cfg.scenario
        if s.delayed_g0 <= 0 or s.delayed_g1 <= 0:
            raise ConfigError("[scenario] delayed potentials must be positive")


def parse_config(text: str) -> ExperimentConfig:
    """Parse TOML text; unknown sections or keys are errors."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    parts = {}
    for name, table in raw.items():
        cls = _SECTIONS.get(name)
        if cls is None:
            raise ConfigError(f"unknown section [{name}]")
        if not isinstance(table, dict):
            raise ConfigError(f"[{name}] must be a table")
        known = {f.name for f in fields(cls)}
        for key in table:
            if key not in known:
                raise ConfigError(f"unknown key [{name}].{key}")
        parts[name] = cls(**{k: _coerce(name, k, v) for k, v in table.items()})
    cfg = ExperimentConfig(**parts)
    _validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def with_overrides(cfg: ExperimentConfig, seed=None, threads=None, out=None) -> ExperimentConfig:
    run, output = cfg.run, cfg.output
    if seed is not None:
        if not 0 <= seed <= MASK64:
            raise ConfigError("--seed must be a 64-bit unsigned integer")
        run = replace(run, master_seed=seed)
    if threads is not None:
        if threads < 1:
            raise ConfigError("thread count must be positive")
        run = replace(run, threads=threads)
    if out is not None:
        output = replace(output, directory=str(out))
    return replace(cfg, run=run, output=output)
