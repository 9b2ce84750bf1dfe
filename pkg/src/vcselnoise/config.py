"""Flat JSON run configuration with strict key checking."""
from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .analytic import VARIANTS, FrequencyGrid
from .detection import GEOMETRIES
from .model import LaserParams
from .noise_sim import SCHEMES, SimConfig

LASER_KEYS = tuple(f.name for f in dataclasses.fields(LaserParams))
SIM_KEYS = tuple(f.name for f in dataclasses.fields(SimConfig))


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key and line."""


@dataclass
class RunConfig:
    # laser
    kappa: float = 300.0
    kappa_a: float = 0.0
    omega_p: float = 1.0
    gamma: float = 1.0
    gamma_s: float = 100.0
    alpha: float = -3.0
    pump_r: float = 1.04
    pump_p: float = 0.0
    c_sat: float | None = None
    # frequency grid (angular GHz)
    omega_min: float = 0.05
    omega_max: float = 50.0
    omega_count: int = 2048
    grid_scale: str = "linear"
    variant: str = "rederived"
    # simulation and estimation
    dt: float = 0.002
    t_total: float = 440.0
    n_traj: int = 200
    seed: int = 0
    burn_in: float | None = 40.0
    scheme: str = "exact"
    max_step_ratio: float = 0.1
    window: str = "hann"
    segment_len: float = 100.0
    overlap: float = 0.0
    batch_size: int = 16
    band_min: float = 0.5
    band_max: float = 20.0
    dump_trajectories: bool = False
    # detection
    geometries: list = field(default_factory=lambda: list(GEOMETRIES))
    squeeze_r_min: float = 1.5
    squeeze_r_max: float = 20.0
    squeeze_r_step: float = 0.5
    # sweep
    sweep_param: str = "pump_r"
    sweep_values: list = field(default_factory=lambda: [1.02, 1.04, 1.1, 1.5, 2.0, 4.0])
    # output
    out_dir: str = "out"
    plot: bool = True

    def laser(self) -> LaserParams:
        return LaserParams(**{k: getattr(self, k) for k in LASER_KEYS})

    def sim(self) -> SimConfig:
        return SimConfig(**{k: getattr(self, k) for k in SIM_KEYS})

    def grid(self) -> FrequencyGrid:
        if self.omega_count < 1:
            raise ConfigError("omega_count: frequency grid is empty")
        if self.omega_count == 1:
            return FrequencyGrid([float(self.omega_min)])
        if self.grid_scale == "log":
            return FrequencyGrid.log(self.omega_min, self.omega_max, self.omega_count)
        return FrequencyGrid.linear(self.omega_min, self.omega_max, self.omega_count)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def validate(self) -> "RunConfig":
        """Check every precondition that can be checked without physics."""
        try:
            self.laser()
        except ValueError as exc:
            raise ConfigError(f"laser parameters: {exc}") from None
        try:
            self.sim()
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"simulation parameters: {exc}") from None
        if self.grid_scale not in ("linear", "log"):
            raise ConfigError(f"grid_scale: must be 'linear' or 'log', got {self.grid_scale!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant: must be one of {VARIANTS}, got {self.variant!r}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme: must be one of {SCHEMES}, got {self.scheme!r}")
        if self.window not in ("hann", "rectangular"):
            raise ConfigError(f"window: must be 'hann' or 'rectangular', got {self.window!r}")
        if not 0.0 <= self.overlap < 1.0:
            raise ConfigError(f"overlap: must lie in [0, 1), got {self.overlap}")
        if self.batch_size < 1:
            raise ConfigError("batch_size: must be >= 1")
        if not self.segment_len > 0:
            raise ConfigError("segment_len: must be > 0")
        bad = [g for g in self.geometries if g not in GEOMETRIES]
        if bad:
            raise ConfigError(f"geometries: unsupported {bad}; supported: {list(GEOMETRIES)}")
        if self.sweep_param not in LASER_KEYS:
            raise ConfigError(f"sweep_param: must be a laser parameter {LASER_KEYS}, got {self.sweep_param!r}")
        if not self.sweep_values:
            raise ConfigError("sweep_values: empty sweep")
        if not (self.squeeze_r_min > 1.0 and self.squeeze_r_max >= self.squeeze_r_min and self.squeeze_r_step > 0):
            raise ConfigError("squeeze_r_*: need 1 < squeeze_r_min <= squeeze_r_max and squeeze_r_step > 0")
        try:
            self.grid()
        except ValueError as exc:
            raise ConfigError(f"frequency grid: {exc}") from None
        return self


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _line_of(text: str, key: str) -> int | None:
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _where(source: str, text: str, key: str) -> str:
    line = _line_of(text, key)
    return f"{source}:{line}" if line else source


def _coerce(key: str, value, where: str):
    default = _FIELDS[key].default
    if default is dataclasses.MISSING:
        default = _FIELDS[key].default_factory()
    if value is None:
        if key in ("c_sat", "burn_in"):
            return None
        raise ConfigError(f"{where}: {key} must not be null")
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: {key} must be true or false, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: {key} must be a list, got {value!r}")
        return value
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: {key} must be a string, got {value!r}")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: {key} must be a number, got {value!r}")
    if isinstance(default, int) and not isinstance(default, bool):
        if float(value) != int(value):
            raise ConfigError(f"{where}: {key} must be an integer, got {value!r}")
        return int(value)
    return float(value)


def from_mapping(data: dict, text: str = "", source: str = "<config>") -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    values = {}
    for key, value in data.items():
        where = _where(source, text, key)
        if key not in _FIELDS:
            raise ConfigError(f"{where}: unknown key {key!r}")
        values[key] = _coerce(key, value, where)
    return RunConfig(**values).validate()


def load(path) -> RunConfig:
    """Read a config file or a metadata sidecar written by a previous run."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})") from None
    if isinstance(data, dict) and "artifact_version" in data and "config" in data:
        # metadata sidecar: rerun with the recorded snapshot
        return from_mapping(data["config"], json.dumps(data["config"], indent=2), f"{path}[config]")
    return from_mapping(data, text, str(path))


def parse_override(item: str) -> tuple:
    """Parse ``KEY=VALUE`` where VALUE is JSON (bare strings allowed)."""
    if "=" not in item:
        raise ConfigError(f"--set {item!r}: expected KEY=VALUE")
    key, raw = item.split("=", 1)
    key = key.strip()
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    data = cfg.as_dict()
    for key, value in overrides.items():
        if key not in _FIELDS:
            raise ConfigError(f"command line: unknown key {key!r}")
        data[key] = _coerce(key, value, "command line")
    return RunConfig(**data).validate()


def metadata(cfg: RunConfig, command: str, extra: dict | None = None) -> dict:
    meta = {
        "artifact_version": __version__,
        "command": command,
        "seed": cfg.seed,
        "config": cfg.as_dict(),
    }
    if extra:
        meta.update(extra)
    return meta
