"""Point-mass actuation: rate-limited command following and route tracking."""

from __future__ import annotations

import math
from dataclasses import replace
from typing import Sequence

from ..avoidance import AircraftProperties, VelocityCommand, closest_point_on_route
from ..ec_ingest import TrackPoint
from ..geodesy import (
    GeoPoint,
    destination_point,
    direct_distance,
    ground_distance,
    initial_bearing,
    signed_angle,
    wrap_heading,
)

DEFAULT_MAX_ACCEL = 3.0
_ARRIVE_M = 1e-6


def _slew(current: float, target: float, limit: float) -> float:
    if target > current:
        return min(target, current + limit)
    return max(target, current - limit)


def apply_command(
    state: TrackPoint,
    cmd: VelocityCommand,
    props: AircraftProperties,
    dt: float,
    max_accel: float = DEFAULT_MAX_ACCEL,
) -> TrackPoint:
    """Advance ``state`` by ``dt`` while slewing heading, speed and altitude
    towards the command under the aircraft's rate limits."""
    gap = signed_angle(cmd.new_heading - state.heading)
    turn = _slew(0.0, gap, props.max_turn_rate * dt)
    heading = wrap_heading(state.heading + turn)
    speed = _slew(state.speed, props.clamp_speed(cmd.new_speed), max_accel * dt)
    alt = _slew(state.position.alt, cmd.target.alt, props.max_climb_rate * dt)
    position = destination_point(state.position, heading, speed * dt, alt)
    return replace(state, position=position, heading=heading, speed=speed, observed_at=state.observed_at + dt)


def follow_route(
    state: TrackPoint,
    route: Sequence[GeoPoint],
    index: int,
    dt: float,
    speed: float,
) -> tuple[TrackPoint, int, bool, float]:
    """Fly ``speed * dt`` metres of ground track along the route polyline,
    direct to ``route[index]`` from the current position.

    Altitude is interpolated linearly with ground distance. Returns the new
    state, the next waypoint index, whether the route is complete, and the
    3D distance flown.
    """
    pos = state.position
    heading = state.heading
    remaining = speed * dt
    flown = 0.0
    while index < len(route):
        wp = route[index]
        dist = ground_distance(pos, wp)
        if dist <= _ARRIVE_M:
            pos = wp
            index += 1
            continue
        brg = initial_bearing(pos, wp) if dist >= 0.01 else heading
        if remaining >= dist:
            flown += direct_distance(pos, wp)
            pos = wp
            heading = brg
            remaining -= dist
            index += 1
            continue
        alt = pos.alt + (wp.alt - pos.alt) * (remaining / dist)
        nxt = destination_point(pos, brg, remaining, alt)
        flown += direct_distance(pos, nxt)
        pos = nxt
        left = ground_distance(pos, wp)
        heading = initial_bearing(pos, wp) if left >= 0.01 else brg
        remaining = 0.0
        break
    done = index >= len(route)
    return (
        replace(state, position=pos, heading=heading, speed=speed, observed_at=state.observed_at + dt),
        index,
        done,
        flown,
    )


def polyline_length(points: Sequence[GeoPoint]) -> float:
    return sum(direct_distance(a, b) for a, b in zip(points[:-1], points[1:]))


def nearest_segment(p: GeoPoint, route: Sequence[GeoPoint], start: int) -> int:
    """Index of the waypoint that ends the route segment nearest to ``p``,
    searching segments from ``start - 1`` onward."""
    best, best_d = start, math.inf
    lo = max(start, 1)
    for i in range(lo, len(route)):
        foot = closest_point_on_route(p, [route[i - 1], route[i]])
        d = ground_distance(p, foot)
        if d < best_d - 1e-9:
            best, best_d = i, d
    return best
