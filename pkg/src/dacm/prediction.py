"""Constant-turn-rate waypoint projection and safety travel tubes."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InsufficientHistoryError
from .geodesy import GeoPoint, destination_point, direct_distance, wrap_heading
from .zones import ConflictAssessment

MAX_TURN_RATE_DPS = 30.0
MAX_HORIZON_S = 60.0
_TIME_EPS = 1e-9


@dataclass(frozen=True)
class Waypoint:
    position: GeoPoint
    heading: float
    speed: float
    time: float


@dataclass
class WaypointHistory:
    icao: str
    capacity: int = 8
    points: deque = field(default_factory=deque)

    def __post_init__(self):
        if self.capacity < 2:
            raise ValueError("history capacity must be at least 2")
        self.points = deque(self.points, maxlen=self.capacity)

    def append(self, wp: Waypoint) -> None:
        if self.points and wp.time <= self.points[-1].time:
            raise ValueError(f"non-increasing waypoint time {wp.time} for {self.icao}")
        self.points.append(wp)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class CVP:
    position: GeoPoint
    time: float
    heading: float


@dataclass(frozen=True)
class SafetyTravelTube:
    icao: str
    centerline: tuple[CVP, ...]
    radius_profile: tuple[float, ...]

    def __post_init__(self):
        if len(self.centerline) != len(self.radius_profile):
            raise ValueError("one radius per CVP required")


def estimate_turn_rate(hist: WaypointHistory) -> float:
    """Least-squares slope of unwrapped heading against time, deg/s."""
    if len(hist) < 3:
        raise InsufficientHistoryError(f"{hist.icao}: need 3 waypoints, have {len(hist)}")
    t = np.array([wp.time for wp in hist.points])
    h = np.degrees(np.unwrap(np.radians([wp.heading for wp in hist.points])))
    slope = np.polyfit(t - t[0], h, 1)[0]
    return float(np.clip(slope, -MAX_TURN_RATE_DPS, MAX_TURN_RATE_DPS))


def project_waypoints(hist: WaypointHistory, horizon: float, dt: float) -> list[CVP]:
    """Propagate the latest state at constant speed and turn rate.

    Altitude is held at the last observed value.
    """
    if len(hist) < 2:
        raise InsufficientHistoryError(f"{hist.icao}: need 2 waypoints, have {len(hist)}")
    if horizon > MAX_HORIZON_S:
        raise ValueError(f"horizon {horizon} s exceeds {MAX_HORIZON_S} s")
    if dt <= 0:
        raise ValueError("dt must be positive")
    rate = estimate_turn_rate(hist) if len(hist) >= 3 else 0.0
    last = hist.points[-1]
    n = int(math.floor(horizon / dt + 1e-9))
    omega = math.radians(rate)
    out = []
    for k in range(1, n + 1):
        tau = k * dt
        heading = wrap_heading(last.heading + rate * tau)
        # circular arc as a chord: length v*tau*sinc(w*tau/2) along the mean
        # heading; reduces smoothly to dead reckoning as the rate goes to 0
        half = omega * tau / 2
        chord = last.speed * tau * (math.sin(half) / half if half != 0.0 else 1.0)
        pos = destination_point(last.position, last.heading + math.degrees(half), chord)
        out.append(CVP(pos, last.time + tau, heading))
    return out


def build_tube(hist: WaypointHistory, radius: float, horizon: float = 30.0, dt: float = 1.0) -> SafetyTravelTube:
    cvps = tuple(project_waypoints(hist, horizon, dt))
    return SafetyTravelTube(hist.icao, cvps, (radius,) * len(cvps))


def stt_intersects(a: SafetyTravelTube, b: SafetyTravelTube) -> tuple[float, float] | None:
    """Earliest common CVP time where the tubes overlap, with the distance there."""
    b_by_time = {round(c.time, 6): (c, r) for c, r in zip(b.centerline, b.radius_profile)}
    for ca, ra in zip(a.centerline, a.radius_profile):
        hit = b_by_time.get(round(ca.time, 6))
        if hit is None:
            continue
        cb, rb = hit
        d = direct_distance(ca.position, cb.position)
        if d <= ra + rb:
            return ca.time, d
    return None


def tube_conflicts(me_tube: SafetyTravelTube, others: Iterable[SafetyTravelTube]) -> dict[str, tuple[float, float]]:
    out = {}
    for tube in others:
        if tube.icao == me_tube.icao:
            continue
        hit = stt_intersects(me_tube, tube)
        if hit is not None:
            out[tube.icao] = hit
    return out


def is_fosr(
    me_tube: SafetyTravelTube,
    other_tubes: Iterable[SafetyTravelTube],
    assessments: Sequence[ConflictAssessment] = (),
) -> bool:
    """Flight of safety route: no tube overlap and no active risk zone."""
    if any(a.at_risk for a in assessments):
        return False
    return not tube_conflicts(me_tube, other_tubes)
