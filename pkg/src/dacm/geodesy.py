"""Spherical-earth geodesy: ground/direct distance, bearings, forward geodesic
and a local ENU tangent frame.

All lengths are metres, all angles at the API are degrees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CoincidentPointsError

EARTH_RADIUS_M = 6_378_137.0
FT_TO_M = 0.3048
KN_TO_MPS = 0.514444

_COINCIDENT_M = 0.01


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float
    alt: float = 0.0

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0):
            raise ValueError(f"latitude out of range: {self.lat}")
        if not (-180.0 < self.lon <= 180.0):
            raise ValueError(f"longitude out of range: {self.lon}")
        if not math.isfinite(self.alt) or self.alt < -500.0:
            raise ValueError(f"altitude invalid: {self.alt}")

    def with_alt(self, alt: float) -> GeoPoint:
        return GeoPoint(self.lat, self.lon, alt)


@dataclass(frozen=True)
class GeodesyConfig:
    earth_radius: float = EARTH_RADIUS_M

    def __post_init__(self):
        if not self.earth_radius > 0:
            raise ValueError("earth_radius must be positive")


def normalize_lon(lon: float) -> float:
    """Map a longitude in degrees into (-180, 180]."""
    lon = math.fmod(lon, 360.0)
    if lon <= -180.0:
        lon += 360.0
    elif lon > 180.0:
        lon -= 360.0
    return lon


def wrap_heading(h: float) -> float:
    """Map any finite heading into [0, 360)."""
    w = h % 360.0
    # -1e-17 % 360 rounds to 360.0
    return 0.0 if w >= 360.0 else w


def signed_angle(h: float) -> float:
    """Normalize an angle difference into (-180, 180]."""
    a = wrap_heading(h)
    return a - 360.0 if a > 180.0 else a


def ground_distance(a: GeoPoint, b: GeoPoint, radius: float = EARTH_RADIUS_M) -> float:
    """Haversine great-circle distance in metres."""
    lat1, lat2 = math.radians(a.lat), math.radians(b.lat)
    dlat = lat1 - lat2
    dlon = math.radians(a.lon) - math.radians(b.lon)
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return radius * 2.0 * math.asin(min(1.0, math.sqrt(h)))


def direct_distance(a: GeoPoint, b: GeoPoint, radius: float = EARTH_RADIUS_M) -> float:
    g = ground_distance(a, b, radius)
    return math.hypot(g, a.alt - b.alt)


def initial_bearing(a: GeoPoint, b: GeoPoint, radius: float = EARTH_RADIUS_M) -> float:
    """Forward azimuth from ``a`` to ``b`` in [0, 360)."""
    if ground_distance(a, b, radius) < _COINCIDENT_M:
        raise CoincidentPointsError(f"bearing undefined between coincident points {a} and {b}")
    lat1, lat2 = math.radians(a.lat), math.radians(b.lat)
    dlon = math.radians(b.lon - a.lon)
    y = math.sin(dlon) * math.cos(lat2)
    x = math.cos(lat1) * math.sin(lat2) - math.sin(lat1) * math.cos(lat2) * math.cos(dlon)
    return wrap_heading(math.degrees(math.atan2(y, x)))


def destination_point(
    origin: GeoPoint,
    bearing: float,
    distance: float,
    new_alt: float | None = None,
    radius: float = EARTH_RADIUS_M,
) -> GeoPoint:
    """Point reached from ``origin`` along ``bearing`` after ``distance`` metres.

    ``new_alt`` replaces the altitude (defaults to the origin's).
    """
    alt = origin.alt if new_alt is None else new_alt
    if distance == 0:
        return GeoPoint(origin.lat, origin.lon, alt)
    lat1 = math.radians(origin.lat)
    lon1 = math.radians(origin.lon)
    brg = math.radians(bearing)
    ang = distance / radius
    sin_lat2 = math.sin(lat1) * math.cos(ang) + math.cos(lat1) * math.sin(ang) * math.cos(brg)
    lat2 = math.asin(max(-1.0, min(1.0, sin_lat2)))
    lon2 = lon1 + math.atan2(
        math.sin(brg) * math.sin(ang) * math.cos(lat1),
        math.cos(ang) - math.sin(lat1) * sin_lat2,
    )
    return GeoPoint(math.degrees(lat2), normalize_lon(math.degrees(lon2)), alt)


# --- local tangent plane -------------------------------------------------


def _ecef(p: GeoPoint, radius: float) -> np.ndarray:
    lat, lon = math.radians(p.lat), math.radians(p.lon)
    r = radius + p.alt
    return np.array([r * math.cos(lat) * math.cos(lon), r * math.cos(lat) * math.sin(lon), r * math.sin(lat)])


def _enu_rotation(origin: GeoPoint) -> np.ndarray:
    lat, lon = math.radians(origin.lat), math.radians(origin.lon)
    sl, cl = math.sin(lat), math.cos(lat)
    so, co = math.sin(lon), math.cos(lon)
    return np.array([
        [-so, co, 0.0],
        [-sl * co, -sl * so, cl],
        [cl * co, cl * so, sl],
    ])


def to_enu(p: GeoPoint, origin: GeoPoint, radius: float = EARTH_RADIUS_M) -> np.ndarray:
    """East/north/up offset of ``p`` from ``origin`` in metres."""
    return _enu_rotation(origin) @ (_ecef(p, radius) - _ecef(origin, radius))


def from_enu(enu, origin: GeoPoint, radius: float = EARTH_RADIUS_M) -> GeoPoint:
    xyz = _ecef(origin, radius) + _enu_rotation(origin).T @ np.asarray(enu, dtype=float)
    r = float(np.linalg.norm(xyz))
    lat = math.degrees(math.asin(xyz[2] / r))
    lon = normalize_lon(math.degrees(math.atan2(xyz[1], xyz[0])))
    return GeoPoint(lat, lon, r - radius)
