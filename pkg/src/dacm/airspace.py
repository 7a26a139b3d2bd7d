"""RoI / MoI banding of tracked flights around the host drone (meD)."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .ec_ingest import DEFAULT_STALENESS_S, TrackPoint
from .geodesy import GeoPoint, ground_distance, to_enu

STATUTE_MILE_M = 1609.344
DEFAULT_MOI_RADIUS_M = 20 * STATUTE_MILE_M


class Band(enum.Enum):
    ROI = "RoI"
    MOI = "MoI"
    OUTSIDE = "Outside"


@dataclass(frozen=True)
class FilterConfig:
    moi_radius: float = DEFAULT_MOI_RADIUS_M
    staleness_limit: float = DEFAULT_STALENESS_S

    def __post_init__(self):
        if not self.moi_radius > 0:
            raise ValueError("moi_radius must be positive")
        if not self.staleness_limit > 0:
            raise ValueError("staleness_limit must be positive")

    @property
    def roi_radius(self) -> float:
        return self.moi_radius / 2


@dataclass(frozen=True)
class AirspaceSnapshot:
    tick_time: float
    me: TrackPoint
    roi_flights: tuple[TrackPoint, ...] = ()
    moi_flights: tuple[TrackPoint, ...] = ()
    dropped_outside: int = 0
    dropped_stale: int = 0
    # MoI flights whose heading does not lead into the RoI
    excluded_from_prediction: frozenset[str] = field(default_factory=frozenset)

    @property
    def predicted_icaos(self) -> list[str]:
        """Flights that get trajectory prediction: all RoI plus inbound MoI."""
        out = [tp.icao for tp in self.roi_flights]
        out += [tp.icao for tp in self.moi_flights if tp.icao not in self.excluded_from_prediction]
        return out


def classify_distance(distance: float, cfg: FilterConfig) -> Band:
    if distance <= cfg.roi_radius:
        return Band.ROI
    if distance <= cfg.moi_radius:
        return Band.MOI
    return Band.OUTSIDE


def classify(me: GeoPoint, other: GeoPoint, cfg: FilterConfig) -> Band:
    return classify_distance(ground_distance(me, other), cfg)


def heading_into_roi(other: TrackPoint, me: GeoPoint, cfg: FilterConfig) -> bool:
    """Whether the straight ray along ``other``'s heading passes within the
    RoI radius of ``me`` (closest point of approach on the tangent plane)."""
    e, n, _ = to_enu(other.position.with_alt(me.alt), me)
    h = math.radians(other.heading)
    ue, un = math.sin(h), math.cos(h)
    t = -(e * ue + n * un)
    if t <= 0:
        miss = math.hypot(e, n)
    else:
        miss = abs(e * un - n * ue)
    return miss <= cfg.roi_radius


def filter_snapshot(
    tracks: Mapping[str, TrackPoint] | Iterable[TrackPoint],
    me: TrackPoint,
    cfg: FilterConfig,
    now: float,
) -> AirspaceSnapshot:
    """Build the per-tick snapshot: dedupe, drop stale, band by ground distance."""
    items = tracks.values() if isinstance(tracks, Mapping) else tracks
    freshest: dict[str, TrackPoint] = {}
    stale = 0
    for tp in items:
        if tp.icao == me.icao:
            continue
        if now - tp.observed_at > cfg.staleness_limit:
            stale += 1
            continue
        prev = freshest.get(tp.icao)
        if prev is None or tp.observed_at >= prev.observed_at:
            freshest[tp.icao] = tp

    roi, moi, outside, excluded = [], [], 0, set()
    for icao in sorted(freshest):
        tp = freshest[icao]
        band = classify(me.position, tp.position, cfg)
        if band is Band.ROI:
            roi.append(tp)
        elif band is Band.MOI:
            moi.append(tp)
            if not heading_into_roi(tp, me.position, cfg):
                excluded.add(icao)
        else:
            outside += 1
    return AirspaceSnapshot(
        tick_time=now,
        me=me,
        roi_flights=tuple(roi),
        moi_flights=tuple(moi),
        dropped_outside=outside,
        dropped_stale=stale,
        excluded_from_prediction=frozenset(excluded),
    )
