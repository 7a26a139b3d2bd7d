"""Speed-scaled collision zones, pairwise PcRz/IcRz detection, collision
probability and free-airspace classification."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable

from .ec_ingest import TrackPoint
from .errors import OutOfBandError
from .geodesy import GeoPoint, direct_distance


@dataclass(frozen=True)
class ZoneParams:
    pctd_s: float = 5.0
    ictd_s: float = 2.5
    pcrz_warn_s: float = 12.0
    emergency_floor_m: float = 30.0

    def __post_init__(self):
        if min(self.pctd_s, self.ictd_s, self.pcrz_warn_s, self.emergency_floor_m) <= 0:
            raise ValueError("zone parameters must be positive")
        if not math.isclose(self.pctd_s, 2 * self.ictd_s, rel_tol=1e-12):
            raise ValueError(f"pctd_s ({self.pctd_s}) must be twice ictd_s ({self.ictd_s})")


@dataclass(frozen=True)
class ZoneSet:
    icao: str
    pct_radius_m: float
    ict_radius_m: float
    center: GeoPoint


@dataclass(frozen=True)
class ConflictAssessment:
    me_icao: str
    other_icao: str
    direct_distance_m: float
    ict_sum_m: float
    pct_sum_m: float
    in_pcrz: bool
    in_icrz: bool
    pc: float | None
    move_distance_m: float | None
    degenerate: bool = False

    @property
    def at_risk(self) -> bool:
        return self.in_pcrz or self.in_icrz


def zone_radius(speed: float, td: float, floor: float = 30.0) -> float:
    """Travel distance over ``td`` seconds, never below the emergency floor."""
    if speed < 0:
        raise ValueError("speed must be non-negative")
    return max(speed * td, floor)


def zones_for(track: TrackPoint, params: ZoneParams, center: GeoPoint | None = None) -> ZoneSet:
    ict = zone_radius(track.speed, params.ictd_s, params.emergency_floor_m)
    return ZoneSet(track.icao, 2 * ict, ict, track.position if center is None else center)


def collision_probability(d: float, ict_sum: float, pct_sum: float) -> float:
    """Piecewise-linear Pc: (0.5, 1] inside the IcRz band, [0, 0.5] in PcRz."""
    if d < 0 or d > pct_sum:
        raise OutOfBandError(f"distance {d:.3f} m outside [0, {pct_sum:.3f}] m")
    if d <= ict_sum:
        return 0.5 + 0.5 * (ict_sum - d) / ict_sum
    return 0.5 * (pct_sum - d) / (pct_sum - ict_sum)


def assess_pair(me: TrackPoint, me_zone: ZoneSet, other: TrackPoint, other_zone: ZoneSet) -> ConflictAssessment:
    d = direct_distance(me_zone.center, other_zone.center)
    ict_sum = me_zone.ict_radius_m + other_zone.ict_radius_m
    pct_sum = me_zone.pct_radius_m + other_zone.pct_radius_m
    in_icrz = d <= ict_sum
    in_pcrz = ict_sum < d <= pct_sum
    pc = collision_probability(d, ict_sum, pct_sum) if d <= pct_sum else None
    return ConflictAssessment(
        me_icao=me.icao,
        other_icao=other.icao,
        direct_distance_m=d,
        ict_sum_m=ict_sum,
        pct_sum_m=pct_sum,
        in_pcrz=in_pcrz,
        in_icrz=in_icrz,
        pc=pc,
        move_distance_m=ict_sum - d if in_icrz else None,
        degenerate=d == 0,
    )


def zone_volume(ict_radius: float) -> tuple[float, float]:
    """Volumes of the ICT sphere and of the PCT shell around it."""
    if ict_radius <= 0:
        raise ValueError("radius must be positive")
    ict = 4.0 / 3.0 * math.pi * ict_radius**3
    return ict, 28.0 / 3.0 * math.pi * ict_radius**3


class AirspaceClass(enum.Enum):
    CFZ = "cFz"
    CRLZ = "cRLz"
    CONFLICTED = "conflicted"


def airspace_class(point: GeoPoint, zones: Iterable[ZoneSet]) -> AirspaceClass:
    """Classify a point against other flights' zones (boundaries count as inside)."""
    result = AirspaceClass.CFZ
    for z in zones:
        d = direct_distance(point, z.center)
        if d <= z.ict_radius_m:
            return AirspaceClass.CONFLICTED
        if d <= z.pct_radius_m:
            result = AirspaceClass.CRLZ
    return result
