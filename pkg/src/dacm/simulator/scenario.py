"""Scenario description and its TOML file format.

Schema (version 1)::

    version = 1                # required
    id = "head-on"             # required
    tick_dt = 0.5              # seconds, > 0
    duration = 120.0           # seconds, > 0
    seed = 0
    start_epoch = 1625226964   # engine clock at tick 0 (optional)

    [config]                   # any engine config key, e.g.
    ictd_s = 2.5

    [fence]                    # optional: circle ...
    center = [53.8, -2.8]
    radius_m = 5000.0
    # ... or polygon: vertices = [[lat, lon], ...]

    [[flight]]
    icao = "4CA7B8"            # 6 hex digits, unique
    behavior = "dacm"          # dacm | scripted | replay | live
    callsign = "DRONE1"
    lat = 53.8
    lon = -2.8
    alt_m = 150.0
    speed_kn = 138.0           # or speed_mps
    heading = 90.0             # optional, defaults to the bearing of the first leg
    route = [[53.8, -2.7, 150.0]]   # waypoints [lat, lon, alt_m]; required for dacm
    replay_file = "intruder.csv"    # replay only; path relative to the scenario
    host = false               # run the DACM pipeline on a non-dacm flight

    [flight.props]
    model = "fixed-wing"
    control_type = "Autonomous"     # Autonomous | Pilot
    mission_type = "AirBased"       # AirBased | GroundBased
    diversion_angle = 45.0
    upward_move = 30.0
    downward_move = 30.0
    max_speed = 80.0
    min_speed = 15.0
    max_turn_rate = 30.0
    max_climb_rate = 10.0

Unknown keys anywhere are rejected.
"""

from __future__ import annotations

import enum
import hashlib
import json
import re
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..avoidance import AircraftProperties, ControlType, Geofence, MissionType
from ..config import KEYS as CONFIG_KEYS
from ..config import EngineConfig, coerce, resolve
from ..ec_ingest import EcMessage, TrackPoint, read_replay
from ..errors import ScenarioError
from ..geodesy import KN_TO_MPS, GeoPoint, ground_distance, initial_bearing

SCHEMA_VERSION = 1
DEFAULT_START_EPOCH = 1_625_226_964.0

_ICAO_RE = re.compile(r"^[0-9A-F]{6}$")
_TOP_KEYS = {"version", "id", "tick_dt", "duration", "seed", "start_epoch", "config", "fence", "flight"}
_FLIGHT_KEYS = {
    "icao", "behavior", "callsign", "lat", "lon", "alt_m", "speed_kn", "speed_mps",
    "heading", "route", "replay_file", "host", "props",
}
_PROP_KEYS = {f.name for f in fields(AircraftProperties)}
_FENCE_KEYS = {"center", "radius_m", "vertices"}


class Behavior(enum.Enum):
    SCRIPTED = "scripted"
    DACM = "dacm"
    REPLAY = "replay"
    LIVE = "live"


@dataclass(frozen=True)
class FlightSpec:
    icao: str
    behavior: Behavior
    props: AircraftProperties = field(default_factory=AircraftProperties)
    initial: TrackPoint | None = None
    route: tuple[GeoPoint, ...] = ()
    records: tuple[EcMessage, ...] = ()
    host: bool = False

    @property
    def runs_pipeline(self) -> bool:
        return self.behavior is Behavior.DACM or self.host


@dataclass(frozen=True)
class Scenario:
    id: str
    flights: tuple[FlightSpec, ...]
    tick_dt: float = 0.5
    duration: float = 120.0
    seed: int = 0
    config: EngineConfig = field(default_factory=EngineConfig)
    fence: Geofence | None = None
    start_epoch: float = DEFAULT_START_EPOCH
    overrides: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.tick_dt <= 0:
            raise ScenarioError("tick_dt must be positive", "tick_dt")
        if self.duration <= 0:
            raise ScenarioError("duration must be positive", "duration")
        seen = set()
        for i, f in enumerate(self.flights):
            problem = None
            if f.icao in seen:
                problem = (f"duplicate icao {f.icao}", "icao")
            elif f.behavior is Behavior.DACM and not f.route:
                problem = (f"dacm flight {f.icao} needs a route", "route")
            elif f.behavior in (Behavior.SCRIPTED, Behavior.DACM) and f.initial is None:
                problem = (f"flight {f.icao} needs an initial state", "lat")
            if problem is not None:
                err = ScenarioError(*problem)
                err.flight_index = i
                raise err
            seen.add(f.icao)

    def to_dict(self) -> dict[str, Any]:
        """Canonical, JSON-serialisable description (used for hashing)."""

        def pt(p: GeoPoint) -> list[float]:
            return [p.lat, p.lon, p.alt]

        flights = []
        for f in self.flights:
            d: dict[str, Any] = {
                "icao": f.icao,
                "behavior": f.behavior.value,
                "host": f.host,
                "route": [pt(p) for p in f.route],
                "props": {
                    k: (v.value if isinstance(v, enum.Enum) else v)
                    for k, v in ((fl.name, getattr(f.props, fl.name)) for fl in fields(AircraftProperties))
                },
                "records": len(f.records),
            }
            if f.initial is not None:
                d["initial"] = {
                    "position": pt(f.initial.position),
                    "heading": f.initial.heading,
                    "speed": f.initial.speed,
                    "callsign": f.initial.callsign,
                }
            flights.append(d)
        fence = None
        if self.fence is not None:
            fence = (
                {"vertices": [pt(v) for v in self.fence.vertices]}
                if self.fence.vertices
                else {"center": pt(self.fence.center), "radius_m": self.fence.radius}
            )
        return {
            "version": SCHEMA_VERSION,
            "id": self.id,
            "tick_dt": self.tick_dt,
            "duration": self.duration,
            "seed": self.seed,
            "start_epoch": self.start_epoch,
            "config": self.config.to_dict(),
            "fence": fence,
            "flights": flights,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


# --- file loading ------------------------------------------------------------


class _Locator:
    """Finds the 1-based line of a key, optionally inside the n-th [[flight]]."""

    def __init__(self, text: str):
        self.lines = text.splitlines()
        self.flight_starts = [i for i, ln in enumerate(self.lines) if re.match(r"^\s*\[\[\s*flight\s*\]\]", ln)]

    def line(self, key: str, flight: int | None = None) -> int | None:
        lo, hi = 0, len(self.lines)
        if flight is not None and flight < len(self.flight_starts):
            lo = self.flight_starts[flight]
            hi = self.flight_starts[flight + 1] if flight + 1 < len(self.flight_starts) else hi
        pat = re.compile(rf"^\s*{re.escape(key)}\s*=|^\s*\[\s*{re.escape(key)}\s*\]|^\s*\[\s*flight\.{re.escape(key)}\s*\]")
        for i in range(lo, hi):
            if pat.match(self.lines[i]):
                return i + 1
        if flight is not None and flight < len(self.flight_starts):
            return self.flight_starts[flight] + 1
        return None


def _enum(kind, value, key, loc: _Locator, flight):
    try:
        return kind(value)
    except ValueError:
        choices = ", ".join(m.value for m in kind)
        raise ScenarioError(f"{key}: {value!r} is not one of {choices}", key, loc.line(key, flight)) from None


def _point(value, key, loc, flight, with_alt=True) -> GeoPoint:
    try:
        nums = [float(v) for v in value]
        if len(nums) not in ((2, 3) if with_alt else (2,)):
            raise ValueError
        return GeoPoint(nums[0], nums[1], nums[2] if len(nums) == 3 else 0.0)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{key}: invalid coordinate {value!r} ({exc})", key, loc.line(key, flight)) from None


def _props(raw: dict, loc: _Locator, idx: int) -> AircraftProperties:
    unknown = set(raw) - _PROP_KEYS
    if unknown:
        key = sorted(unknown)[0]
        raise ScenarioError(f"unknown props key {key!r}", key, loc.line(key, idx))
    values = dict(raw)
    if "control_type" in values:
        values["control_type"] = _enum(ControlType, values["control_type"], "control_type", loc, idx)
    if "mission_type" in values:
        values["mission_type"] = _enum(MissionType, values["mission_type"], "mission_type", loc, idx)
    try:
        return AircraftProperties(**values)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"props: {exc}", "props", loc.line("props", idx)) from None


def _flight(raw: dict, idx: int, loc: _Locator, base: Path) -> FlightSpec:
    unknown = set(raw) - _FLIGHT_KEYS
    if unknown:
        key = sorted(unknown)[0]
        raise ScenarioError(f"unknown flight key {key!r}", key, loc.line(key, idx))
    for req in ("icao", "behavior"):
        if req not in raw:
            raise ScenarioError(f"flight #{idx + 1} is missing {req!r}", req, loc.line(req, idx))
    icao = str(raw["icao"]).upper()
    if not _ICAO_RE.match(icao):
        raise ScenarioError(f"icao: {raw['icao']!r} is not 6 hex digits", "icao", loc.line("icao", idx))
    behavior = _enum(Behavior, raw["behavior"], "behavior", loc, idx)
    props = _props(raw.get("props", {}), loc, idx)
    route = tuple(_point(p, "route", loc, idx) for p in raw.get("route", []))

    initial = None
    if "lat" in raw or "lon" in raw:
        for req in ("lat", "lon"):
            if req not in raw:
                raise ScenarioError(f"flight {icao} is missing {req!r}", req, loc.line(req, idx))
        pos = _point([raw["lat"], raw["lon"], raw.get("alt_m", 0.0)], "lat", loc, idx)
        if "speed_kn" in raw and "speed_mps" in raw:
            raise ScenarioError("give speed_kn or speed_mps, not both", "speed_mps", loc.line("speed_mps", idx))
        speed = float(raw["speed_mps"]) if "speed_mps" in raw else float(raw.get("speed_kn", 0.0)) * KN_TO_MPS
        if speed < 0:
            raise ScenarioError("speed must be non-negative", "speed_kn", loc.line("speed_kn", idx))
        if "heading" in raw:
            heading = float(raw["heading"])
            if not 0 <= heading < 360:
                raise ScenarioError("heading must be in [0, 360)", "heading", loc.line("heading", idx))
        elif route and ground_distance(pos, route[0]) >= 0.01:
            heading = initial_bearing(pos, route[0])
        else:
            heading = 0.0
        initial = TrackPoint(icao, pos, heading, speed, 0.0, 0.0, str(raw.get("callsign", "")))

    records: tuple[EcMessage, ...] = ()
    if behavior is Behavior.REPLAY:
        if "replay_file" not in raw:
            raise ScenarioError(f"replay flight {icao} needs replay_file", "replay_file", loc.line("replay_file", idx))
        path = base / raw["replay_file"]
        try:
            records = tuple(m for _, m in read_replay(path) if m.icao == icao)
        except OSError as exc:
            raise ScenarioError(f"replay_file: {exc}", "replay_file", loc.line("replay_file", idx)) from None
        except ValueError as exc:
            raise ScenarioError(f"replay_file {path}: {exc}", "replay_file", loc.line("replay_file", idx)) from None
    elif "replay_file" in raw:
        raise ScenarioError("replay_file is only valid for replay flights", "replay_file", loc.line("replay_file", idx))

    host = raw.get("host", False)
    if not isinstance(host, bool):
        raise ScenarioError("host must be true or false", "host", loc.line("host", idx))
    return FlightSpec(icao, behavior, props, initial, route, records, host)


def parse_scenario(text: str, base: Path | str = ".", flag_overrides: dict | None = None) -> Scenario:
    """Parse scenario TOML text. Errors carry the offending key and line."""
    loc = _Locator(text)
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ScenarioError(f"syntax error: {exc}", None, int(m.group(1)) if m else None) from None

    unknown = set(data) - _TOP_KEYS
    if unknown:
        key = sorted(unknown)[0]
        raise ScenarioError(f"unknown key {key!r}", key, loc.line(key))
    for req in ("version", "id"):
        if req not in data:
            raise ScenarioError(f"missing required key {req!r}", req)
    if data["version"] != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported version {data['version']!r}", "version", loc.line("version"))

    raw_cfg = data.get("config", {})
    for key in raw_cfg:
        if key not in CONFIG_KEYS:
            raise ScenarioError(f"unknown config key {key!r}", key, loc.line(key))
    try:
        config = resolve(coerce(raw_cfg, "config"), flag_overrides or {})
    except (KeyError, ValueError) as exc:
        raise ScenarioError(str(exc).strip("'\""), "config", loc.line("config")) from None

    fence = None
    if "fence" in data:
        raw_fence = data["fence"]
        unknown = set(raw_fence) - _FENCE_KEYS
        if unknown:
            key = sorted(unknown)[0]
            raise ScenarioError(f"unknown fence key {key!r}", key, loc.line(key))
        try:
            if "vertices" in raw_fence:
                fence = Geofence(vertices=tuple(_point(v, "vertices", loc, None) for v in raw_fence["vertices"]))
            else:
                fence = Geofence(
                    center=_point(raw_fence.get("center"), "center", loc, None),
                    radius=float(raw_fence.get("radius_m", 0.0)),
                )
        except ValueError as exc:
            raise ScenarioError(f"fence: {exc}", "fence", loc.line("fence")) from None

    base = Path(base)
    flights = tuple(_flight(raw, i, loc, base) for i, raw in enumerate(data.get("flight", [])))

    def num(key, default, kind=float):
        try:
            return kind(data.get(key, default))
        except (TypeError, ValueError):
            raise ScenarioError(f"{key}: expected a number", key, loc.line(key)) from None

    scenario = Scenario(
        id=str(data["id"]),
        flights=flights,
        tick_dt=num("tick_dt", 0.5),
        duration=num("duration", 120.0),
        seed=num("seed", 0, int),
        config=config,
        fence=fence,
        start_epoch=num("start_epoch", DEFAULT_START_EPOCH),
        overrides=dict(flag_overrides or {}),
    )
    try:
        scenario.validate()
    except ScenarioError as exc:
        idx = getattr(exc, "flight_index", None)
        message = str(exc)
        raise ScenarioError(message, exc.key, loc.line(exc.key, idx) if exc.key else None) from None
    return scenario


def load_scenario(path: str | Path, flag_overrides: dict | None = None) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc}") from None
    return parse_scenario(text, path.parent, flag_overrides)
