"""Engine configuration: one flat set of keys shared by scenario files, the
``DACM_CONFIG`` defaults file and command-line flags."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .airspace import DEFAULT_MOI_RADIUS_M, FilterConfig
from .estimation import NoiseConfig
from .zones import ZoneParams

ENV_VAR = "DACM_CONFIG"


@dataclass(frozen=True)
class EngineConfig:
    moi_radius_m: float = DEFAULT_MOI_RADIUS_M
    staleness_limit_s: float = 10.0
    ec_error_m: float = 10.0
    dop_hor: float = 1.5
    dop_ver: float = 2.0
    process_noise_mode: str = "tuned"
    telemetry_alpha: float = 0.3
    pctd_s: float = 5.0
    ictd_s: float = 2.5
    pcrz_warn_s: float = 12.0
    emergency_floor_m: float = 30.0
    prediction_horizon_s: float = 30.0
    prediction_dt_s: float = 1.0
    history_capacity: int = 8
    feed_latency_s: float = 1.0
    actuation_latency_s: float = 1.0
    max_accel_mps2: float = 3.0
    noise_sigma_m: float = 0.0
    capture_radius_m: float = 10.0
    ca_enabled: bool = True
    advisory_port: int = 0

    def __post_init__(self):
        if self.process_noise_mode not in ("static", "tuned"):
            raise ValueError(f"process_noise_mode must be 'static' or 'tuned', not {self.process_noise_mode!r}")
        if not 0 < self.telemetry_alpha <= 1:
            raise ValueError("telemetry_alpha must be in (0, 1]")
        for name in ("feed_latency_s", "actuation_latency_s", "noise_sigma_m"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("prediction_dt_s", "max_accel_mps2", "capture_radius_m"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.history_capacity < 2:
            raise ValueError("history_capacity must be at least 2")
        if not 0 <= self.prediction_horizon_s <= 60:
            raise ValueError("prediction_horizon_s must be in [0, 60]")
        # delegate the remaining range checks
        self.filter_config()
        self.zone_params()
        self.noise_config()

    def filter_config(self) -> FilterConfig:
        return FilterConfig(self.moi_radius_m, self.staleness_limit_s)

    def zone_params(self) -> ZoneParams:
        return ZoneParams(self.pctd_s, self.ictd_s, self.pcrz_warn_s, self.emergency_floor_m)

    def noise_config(self) -> NoiseConfig:
        return NoiseConfig(self.ec_error_m, self.dop_hor, self.dop_ver)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def merged(self, overrides: Mapping[str, Any]) -> EngineConfig:
        return dataclasses.replace(self, **coerce(overrides))


KEYS = {f.name: f.type for f in fields(EngineConfig)}
_TYPES = {"float": float, "int": int, "bool": bool, "str": str}


def coerce(values: Mapping[str, Any], source: str = "config") -> dict[str, Any]:
    """Check key names and convert values to the declared field types."""
    out = {}
    for key, value in values.items():
        if key not in KEYS:
            raise KeyError(f"{source}: unknown config key {key!r}")
        kind = _TYPES[KEYS[key]]
        if kind is bool:
            if isinstance(value, str):
                low = value.strip().lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(f"{source}: {key} expects a boolean, got {value!r}")
                value = low in ("true", "1", "yes")
            elif not isinstance(value, bool):
                raise ValueError(f"{source}: {key} expects a boolean, got {value!r}")
        elif kind is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(f"{source}: {key} expects an integer, got {value!r}")
            value = int(value)
        elif kind is float:
            if isinstance(value, bool):
                raise ValueError(f"{source}: {key} expects a number, got {value!r}")
            value = float(value)
        else:
            value = str(value)
        out[key] = value
    return out


def load_defaults_file(path: str | Path) -> dict[str, Any]:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return coerce(data, source=str(path))


def resolve(
    scenario_values: Mapping[str, Any] | None = None,
    flag_values: Mapping[str, Any] | None = None,
    env: Mapping[str, str] | None = None,
) -> EngineConfig:
    """Built-ins, then the ``DACM_CONFIG`` file, then scenario, then flags."""
    env = os.environ if env is None else env
    cfg = EngineConfig()
    path = env.get(ENV_VAR)
    if path:
        cfg = cfg.merged(load_defaults_file(path))
    if scenario_values:
        cfg = cfg.merged(scenario_values)
    if flag_values:
        cfg = cfg.merged(flag_values)
    return cfg
