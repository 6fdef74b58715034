"""TOML scenario files: parsing, strict key checking, defaults and validation."""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .model import Model, ModelParams, build_model


class ConfigError(ValueError):
    """Unreadable or invalid scenario file."""


@dataclass(frozen=True)
class GridConfig:
    n_interior: int = 64
    length: float = 1.0


@dataclass(frozen=True)
class AgeConfig:
    a_max: float = 1.0
    steps: int = 128


@dataclass(frozen=True)
class ProfileConfig:
    kind: str = "constant"  # constant | exp_decay | table
    rate: float = 0.0
    values: tuple = ()
    # multiplies the normalized profile; anything but 1 breaks normalization on purpose
    perturb: float = 1.0

    def raw(self, ages: np.ndarray) -> np.ndarray:
        if self.kind == "constant":
            return np.ones_like(ages)
        if self.kind == "exp_decay":
            return np.exp(-self.rate * ages)
        return np.asarray(self.values, dtype=float)


@dataclass(frozen=True)
class RunConfig:
    eta: tuple = (1.2, 1.5, 2.0, 3.0)
    xi: tuple = (1.2, 1.5, 2.0, 3.0)
    s4_xi: tuple = ()
    eta_max: float = 10.0
    xi_max: float = 10.0
    step0: float = 0.01
    xi_limit: float = 10.0
    eta_limit: float = 6.0
    point_cap: int = 200
    trials: int = 10
    slack: float = 0.05


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    formats: tuple = ("csv", "json")


@dataclass(frozen=True)
class ScenarioConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    age: AgeConfig = field(default_factory=AgeConfig)
    params: ModelParams = field(default_factory=ModelParams)
    prey: ProfileConfig = field(default_factory=ProfileConfig)
    predator: ProfileConfig = field(default_factory=ProfileConfig)
    run: RunConfig = field(default_factory=RunConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def build(self) -> Model:
        """Grids, normalized profiles and rates for this scenario."""
        ages = np.linspace(0.0, self.age.a_max, self.age.steps + 1)
        model = build_model(
            self.grid.n_interior,
            self.grid.length,
            self.age.a_max,
            self.age.steps,
            self.params,
            self.prey.raw(ages),
            self.predator.raw(ages),
        )
        if self.prey.perturb != 1.0 or self.predator.perturb != 1.0:
            model = Model(
                model.grids,
                model.params,
                model.prey.rescaled(self.prey.perturb),
                model.predator.rescaled(self.predator.perturb),
            )
        return model

    def echo(self) -> dict:
        def plain(obj):
            out = {}
            for f in fields(obj):
                val = getattr(obj, f.name)
                out[f.name] = list(val) if isinstance(val, tuple) else val
            return out

        return {
            "grid": plain(self.grid),
            "age": plain(self.age),
            "params": plain(self.params),
            "profiles": {"prey": plain(self.prey), "predator": plain(self.predator)},
            "run": plain(self.run),
            "output": plain(self.output),
        }


_SECTIONS = {"grid", "age", "params", "profiles", "run", "output"}


def _take(section: str, raw: dict, cls):
    allowed = {f.name: f for f in fields(cls)}
    unknown = set(raw) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    kwargs = {}
    for key, val in raw.items():
        default = allowed[key].default
        if isinstance(default, tuple):
            if not isinstance(val, list):
                raise ConfigError(f"[{section}].{key} must be an array")
            val = tuple(val)
        elif isinstance(default, bool) or default is None:
            pass
        elif isinstance(default, int) and not isinstance(default, bool):
            if not isinstance(val, int) or isinstance(val, bool):
                raise ConfigError(f"[{section}].{key} must be an integer, got {val!r}")
        elif isinstance(default, float):
            if not isinstance(val, (int, float)) or isinstance(val, bool):
                raise ConfigError(f"[{section}].{key} must be a number, got {val!r}")
            val = float(val)
        elif isinstance(default, str) and not isinstance(val, str):
            raise ConfigError(f"[{section}].{key} must be a string, got {val!r}")
        kwargs[key] = val
    return kwargs


def _positive(name: str, value: float):
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        raise ConfigError(f"{name} must be positive and finite, got {value!r}")


def _profile(name: str, raw: dict, steps: int) -> ProfileConfig:
    prof = ProfileConfig(**_take(f"profiles.{name}", raw, ProfileConfig))
    if prof.kind not in ("constant", "exp_decay", "table"):
        raise ConfigError(f"profiles.{name}.kind must be constant, exp_decay or table, got {prof.kind!r}")
    if prof.kind == "exp_decay" and not math.isfinite(prof.rate):
        raise ConfigError(f"profiles.{name}.rate must be finite")
    if prof.kind == "table":
        if len(prof.values) != steps + 1:
            raise ConfigError(
                f"profiles.{name}.values has {len(prof.values)} entries, the age grid has {steps + 1} nodes"
            )
        vals = np.asarray(prof.values, dtype=float)
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise ConfigError(f"profiles.{name}.values must be finite and nonnegative")
    _positive(f"profiles.{name}.perturb", prof.perturb)
    return prof


def parse_config(text: str, source: str = "<string>") -> ScenarioConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    unknown = set(raw) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    for key, val in raw.items():
        if not isinstance(val, dict):
            raise ConfigError(f"[{key}] must be a table")

    grid = GridConfig(**_take("grid", raw.get("grid", {}), GridConfig))
    if grid.n_interior < 3:
        raise ConfigError(f"grid.n_interior must be at least 3, got {grid.n_interior}")
    _positive("grid.length", grid.length)
    age = AgeConfig(**_take("age", raw.get("age", {}), AgeConfig))
    if age.steps < 16:
        raise ConfigError(f"age.steps must be at least 16, got {age.steps}")
    _positive("age.a_max", age.a_max)

    pkw = _take("params", raw.get("params", {}), ModelParams)
    for key, val in pkw.items():
        _positive(f"params.{key}", val)
    params = ModelParams(**pkw)

    profiles = raw.get("profiles", {})
    unknown = set(profiles) - {"prey", "predator"}
    if unknown:
        raise ConfigError(f"unknown profile(s): {', '.join(sorted(unknown))}")
    prey = _profile("prey", profiles.get("prey", {}), age.steps)
    predator = _profile("predator", profiles.get("predator", {}), age.steps)

    run = RunConfig(**_take("run", raw.get("run", {}), RunConfig))
    for key in ("eta_max", "xi_max", "step0", "xi_limit", "eta_limit", "slack"):
        _positive(f"run.{key}", getattr(run, key))
    for key in ("eta", "xi", "s4_xi"):
        for val in getattr(run, key):
            _positive(f"run.{key} entries", val)
    if run.point_cap < 1 or run.trials < 1:
        raise ConfigError("run.point_cap and run.trials must be at least 1")

    output = OutputConfig(**_take("output", raw.get("output", {}), OutputConfig))
    bad = set(output.formats) - {"csv", "json"}
    if bad:
        raise ConfigError(f"output.formats entries must be csv or json, got {sorted(bad)}")

    cfg = ScenarioConfig(grid, age, params, prey, predator, run, output)
    try:
        cfg.build()  # profile shape rules live with the normalization
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text, str(path))
