"""Run configuration: one JSON document whose sections mirror the module
parameter types. Every default carries a source note, either ``paper`` with
the quoted value or ``calibration`` for implementer-chosen values."""

from __future__ import annotations

import dataclasses
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .control import CbfConfig, ModeConfig, MpcConfig, PidConfig, ThreatConfig
from .estimation import EkfConfig
from .gas import O2Tank, TidalParams, ValveModel
from .plant import PlantParams
from .sensors import SensorConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration document or value."""


@dataclass(frozen=True)
class MissionConfig:
    dt: float = 1.0                 # s, simulation and control tick
    n_total: float = 4.0            # mol, initial loop inventory
    V_CL: float = 4.5               # L, initial counter-lung volume
    T0: float = 30.0                # C, initial gas and bed temperature
    T_c0: float = 37.0              # C
    movement_sigma: float = 0.25    # L at full activity
    movement_tau: float = 3.0       # s
    raw_pid: bool = False           # PID commands bypass the safety filter
    wall_clock_deadline: bool = False

    def __post_init__(self):
        if self.dt <= 0 or self.movement_tau <= 0 or self.n_total <= 0:
            raise ValueError("dt, movement_tau and n_total must be positive")


@dataclass(frozen=True)
class HarnessConfig:
    mission: MissionConfig = field(default_factory=MissionConfig)
    plant: PlantParams = field(default_factory=PlantParams)
    tank: O2Tank = field(default_factory=O2Tank)
    valve: ValveModel = field(default_factory=ValveModel)
    tidal: TidalParams = field(default_factory=TidalParams)
    sensors: SensorConfig = field(default_factory=SensorConfig)
    ekf: EkfConfig = field(default_factory=EkfConfig)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    cbf: CbfConfig = field(default_factory=CbfConfig)
    pid: PidConfig = field(default_factory=PidConfig)
    mode: ModeConfig = field(default_factory=ModeConfig)
    threat: ThreatConfig = field(default_factory=ThreatConfig)


# dotted path -> quoted source value; every other leaf is a calibration value
PAPER_VALUES = {
    "tank.fill_bar": "200 bar",
    "tank.volume_L": "11.7 L",
    "tank.Z": "Z = 0.95",
    "tank.usable_kg": "approximately 3.16 kg (rounded down to usable mass)",
    "plant.scrubber.mass_kg": "1 kg canister",
    "plant.scrubber.f_dry": "0.82",
    "plant.scrubber.f_caoh2": "0.77",
    "plant.scrubber.eps0": "0.40",
    "plant.desiccant.q_m": "0.10",
    "plant.desiccant.C_G": "40",
    "plant.desiccant.K_G": "0.85",
    "plant.desiccant.dH_ads": "2550 kJ/kg",
    "plant.metabolic.VO2_rest": "0.25 L/min",
    "plant.metabolic.R": "0.85",
    "valve.T_PWM": "2-5 s period",
    "mpc.x_o2_max": "0.235",
    "mpc.x_o2_max_degraded": "0.50",
    "mpc.pio2_min": "0.16 atm wet",
    "cbf.x_o2_max": "0.235",
    "cbf.x_o2_max_degraded": "0.50",
    "cbf.pio2_min": "0.16 atm wet",
    "mode.conservation": "below 25 % remaining",
    "mode.emergency": "10 % emergency floor",
    "mode.co2_danger": "3 % cascade floor",
    "pid.co2_set": "0.5 % well-mixed target",
}


def _plain(v):
    if dataclasses.is_dataclass(v):
        return {f.name: _plain(getattr(v, f.name)) for f in dataclasses.fields(v)}
    if isinstance(v, dict):
        return {(k.name if isinstance(k, enum.Enum) else str(k)): _plain(x) for k, x in v.items()}
    if isinstance(v, (tuple, list)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return [float(x) for x in v]
    if isinstance(v, enum.Enum):
        return v.name
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def _leaves(d: dict, prefix: str = ""):
    for k, v in d.items():
        path = f"{prefix}{k}"
        if isinstance(v, dict):
            yield from _leaves(v, path + ".")
        else:
            yield path


def to_dict(config: HarnessConfig, annotate: bool = True) -> dict:
    doc = {"schema_version": SCHEMA_VERSION}
    body = _plain(config)
    doc.update(body)
    if annotate:
        doc["_sources"] = {p: (f"paper: {PAPER_VALUES[p]}" if p in PAPER_VALUES else "calibration")
                           for p in _leaves(body)}
    return doc


def _convert(default, value, path: str):
    if dataclasses.is_dataclass(default):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object")
        return _merge(default, value, path)
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object")
        out = dict(default)
        keys = {(k.name if isinstance(k, enum.Enum) else str(k)): k for k in default}
        for k, v in value.items():
            if k not in keys:
                raise ConfigError(f"{path}.{k}: unknown key")
            key = keys[k]
            out[key] = _convert(default[key], v, f"{path}.{k}")
        return out
    if isinstance(default, np.ndarray):
        arr = np.asarray(value, dtype=float)
        if arr.shape != default.shape:
            raise ConfigError(f"{path}: expected length {default.shape[0]}")
        return arr
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)) or len(value) != len(default):
            raise ConfigError(f"{path}: expected a list of length {len(default)}")
        return tuple(_convert(dv, v, f"{path}[{i}]") for i, (dv, v) in enumerate(zip(default, value)))
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true or false")
        return value
    if isinstance(default, (int, float)) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        if isinstance(default, int) and not float(value).is_integer():
            raise ConfigError(f"{path}: expected an integer")
        return type(default)(value)
    if default is None or isinstance(default, str):
        return value
    raise ConfigError(f"{path}: unsupported value")


def _merge(default, overrides: dict, path: str):
    names = {f.name for f in dataclasses.fields(default)}
    kw = {}
    for k, v in overrides.items():
        if k not in names:
            raise ConfigError(f"{path}.{k}: unknown key" if path else f"{k}: unknown section")
        kw[k] = _convert(getattr(default, k), v, f"{path}.{k}" if path else k)
    try:
        return dataclasses.replace(default, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def from_dict(doc: dict) -> HarnessConfig:
    """Defaults overridden by ``doc``; keys starting with ``_`` are ignored."""
    if not isinstance(doc, dict):
        raise ConfigError("config document must be an object")
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version}")
    body = {k: v for k, v in doc.items() if not k.startswith("_") and k != "schema_version"}
    return _merge(HarnessConfig(), body, "")


def load_config(path: str | Path | None) -> HarnessConfig:
    if path is None:
        return HarnessConfig()
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    return from_dict(doc)


def dump_config(config: HarnessConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(to_dict(config), indent=2) + "\n")
