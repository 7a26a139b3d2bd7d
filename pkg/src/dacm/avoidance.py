"""Conflict-management policy: tiered advisories, minimum-deviation avoidance
manoeuvres with a free-airspace sweep, return-to-route and geofence gating.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Iterator, Mapping, Sequence

import numpy as np
from shapely.geometry import Point, Polygon

from .ec_ingest import TrackPoint
from .errors import EmptyRouteError
from .geodesy import (
    GeoPoint,
    destination_point,
    ground_distance,
    initial_bearing,
    signed_angle,
    to_enu,
    from_enu,
    wrap_heading,
)
from .zones import AirspaceClass, ConflictAssessment, ZoneParams, ZoneSet, airspace_class

DEFAULT_CAPTURE_RADIUS_M = 10.0
VERTICAL_SHARE = math.sin(math.radians(45.0))


class ControlType(enum.Enum):
    AUTONOMOUS = "Autonomous"
    PILOT = "Pilot"


class MissionType(enum.Enum):
    GROUND_BASED = "GroundBased"
    AIR_BASED = "AirBased"


class CaPhase(enum.Enum):
    NOMINAL = "Nominal"
    AVOIDING = "Avoiding"
    WAITING_CLEAR = "WaitingClear"
    RETURNING = "Returning"


class AdvisoryTier(enum.Enum):
    EARLY_TUBE_CONFLICT = "EarlyTubeConflict"
    PROBABLE_RISK = "ProbableRisk"
    IMMINENT_AUTONOMOUS = "ImminentAutonomous"
    GEOFENCE_VIOLATION = "GeofenceViolation"


class CommandReason(enum.Enum):
    AVOID_ICRZ = "AvoidIcRz"
    RETURN_TO_ROUTE = "ReturnToRoute"
    HOLD = "Hold"


@dataclass(frozen=True)
class AircraftProperties:
    model: str = "generic"
    control_type: ControlType = ControlType.AUTONOMOUS
    mission_type: MissionType = MissionType.AIR_BASED
    diversion_angle: float = 45.0
    upward_move: float = 30.0
    downward_move: float = 30.0
    max_speed: float = 80.0
    min_speed: float = 0.0
    max_turn_rate: float = 30.0
    max_climb_rate: float = 10.0

    def __post_init__(self):
        if not 0 < self.diversion_angle <= 180:
            raise ValueError("diversion_angle must be in (0, 180]")
        for name in ("upward_move", "downward_move", "max_speed", "max_turn_rate", "max_climb_rate"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.min_speed <= self.max_speed:
            raise ValueError("min_speed must lie in [0, max_speed]")

    def clamp_speed(self, v: float) -> float:
        return min(self.max_speed, max(self.min_speed, v))


@dataclass(frozen=True)
class VelocityCommand:
    new_heading: float
    new_speed: float
    target: GeoPoint
    vertical_move: float
    reason: CommandReason
    best_effort: bool = False
    heading_change: float = 0.0
    target_class: AirspaceClass | None = None

    def to_dict(self) -> dict:
        return {
            "heading": round(self.new_heading, 6),
            "speed": round(self.new_speed, 6),
            "target": [round(self.target.lat, 9), round(self.target.lon, 9), round(self.target.alt, 4)],
            "vertical": round(self.vertical_move, 4),
            "reason": self.reason.value,
            "best_effort": self.best_effort,
        }


@dataclass(frozen=True)
class Advisory:
    tier: AdvisoryTier
    me: str
    other: str
    pc: float | None
    action: str
    time: float = 0.0
    distance_m: float | None = None
    ict_sum_m: float | None = None
    pct_sum_m: float | None = None

    def to_record(self, tick: int) -> dict:
        return {
            "tick": tick,
            "tier": self.tier.value,
            "me": self.me,
            "other": self.other,
            "pc": None if self.pc is None else round(self.pc, 6),
            "action": self.action,
        }


@dataclass(frozen=True)
class Geofence:
    """Permit-inside region: a circle (``center`` + ``radius``) or a polygon."""

    center: GeoPoint | None = None
    radius: float | None = None
    vertices: tuple[GeoPoint, ...] = ()

    def __post_init__(self):
        if self.vertices:
            if len(self.vertices) < 3:
                raise ValueError("polygon geofence needs at least 3 vertices")
            poly = Polygon([(v.lon, v.lat) for v in self.vertices])
            if not poly.is_valid:
                raise ValueError("polygon geofence must not self-intersect")
            object.__setattr__(self, "_poly", poly)
        elif self.center is None or self.radius is None or self.radius <= 0:
            raise ValueError("circle geofence needs a center and a positive radius")

    def contains(self, p: GeoPoint) -> bool:
        if self.vertices:
            return self._poly.covers(Point(p.lon, p.lat))
        return ground_distance(self.center, p) <= self.radius


@dataclass(frozen=True)
class CaState:
    phase: CaPhase = CaPhase.NOMINAL
    ca_start: GeoPoint | None = None
    triggers: frozenset[str] = frozenset()
    warned: frozenset[str] = frozenset()
    return_target: GeoPoint | None = None
    # heading and climb direction latched when the manoeuvre started
    ref_heading: float | None = None
    climb: bool | None = None


@dataclass(frozen=True)
class AssessedSnapshot:
    """Everything the policy needs from one engine tick."""

    time: float
    me: TrackPoint
    me_zone: ZoneSet
    others: Mapping[str, TrackPoint]
    zones: Mapping[str, ZoneSet]
    assessments: Mapping[str, ConflictAssessment]
    tube_hits: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    me_prev: GeoPoint | None = None


@dataclass(frozen=True)
class SweepOutcome:
    command: VelocityCommand
    candidates: int
    cfz_candidates: int
    crlz_candidates: int


@dataclass(frozen=True)
class PolicyOutput:
    advisories: tuple[Advisory, ...]
    command: VelocityCommand | None
    state: CaState
    sweep: SweepOutcome | None = None
    trigger: str | None = None


def hold_command(me: TrackPoint, reason: CommandReason = CommandReason.HOLD) -> VelocityCommand:
    return VelocityCommand(me.heading, me.speed, me.position, 0.0, reason)


def maneuver_ca(
    me: TrackPoint,
    intruder: TrackPoint,
    props: AircraftProperties,
    assessment: ConflictAssessment,
    *,
    climb: bool | None = None,
) -> VelocityCommand:
    """Pairwise avoidance: turn away by the diversion angle, climb or descend
    away from the intruder, and move by the ICT-zone invasion depth.

    ``climb`` overrides the altitude comparison (used to keep the vertical
    direction fixed for the whole manoeuvre)."""
    diff = signed_angle(intruder.heading - me.heading)
    if diff < 0:
        heading_ca = wrap_heading(me.heading - props.diversion_angle)
        change = -props.diversion_angle
    else:
        heading_ca = wrap_heading(me.heading + props.diversion_angle)
        change = props.diversion_angle

    move = assessment.move_distance_m or 0.0
    if move <= 0:
        return hold_command(me, CommandReason.AVOID_ICRZ)

    share = move * VERTICAL_SHARE
    upward = min(share, props.upward_move)
    downward = min(share, props.downward_move)
    if climb is None:
        climb = not me.position.alt < intruder.position.alt
    vertical = upward if climb else -downward
    new_alt = me.position.alt + vertical
    target = destination_point(me.position, heading_ca, move, new_alt)
    return VelocityCommand(
        new_heading=heading_ca,
        new_speed=props.max_speed,
        target=target,
        vertical_move=vertical,
        reason=CommandReason.AVOID_ICRZ,
        heading_change=change,
    )


def sweep_candidates(
    candidate: VelocityCommand, me: TrackPoint, props: AircraftProperties
) -> Iterator[VelocityCommand]:
    """Alternative avoidance targets in sweep order.

    Candidate side first, then the opposite side, stepping by the diversion
    angle up to a half turn each way; then vertical-only alternates that keep
    the current heading.
    """
    move = ground_distance(me.position, candidate.target)
    side = 1.0 if candidate.heading_change >= 0 else -1.0
    step = props.diversion_angle
    vertical = candidate.vertical_move
    alt = me.position.alt

    def make(change: float, vmove: float) -> VelocityCommand:
        heading = wrap_heading(me.heading + change)
        target = destination_point(me.position, heading, move, alt + vmove)
        return replace(candidate, new_heading=heading, target=target, vertical_move=vmove, heading_change=change)

    seen: set[float] = set()
    k = 1
    while k * step <= 180.0 + 1e-9:
        for sgn in (side, -side):
            change = sgn * k * step
            key = round(wrap_heading(change), 9)
            if key in seen:
                continue
            seen.add(key)
            yield candidate if k == 1 and sgn == side else make(change, vertical)
        k += 1
    for vmove in (vertical, -vertical):
        if vmove != 0:
            yield make(0.0, vmove)


def sweep_safe_waypoint(
    candidate: VelocityCommand,
    me: TrackPoint,
    props: AircraftProperties,
    zones: Sequence[ZoneSet],
) -> SweepOutcome:
    """Pick the first sweep target in cFz, else the first in cRLz, else keep
    the candidate flagged best-effort."""
    first_crlz = None
    n = n_cfz = n_crlz = 0
    chosen = None
    for cmd in sweep_candidates(candidate, me, props):
        n += 1
        cls = airspace_class(cmd.target, zones)
        if cls is AirspaceClass.CFZ:
            n_cfz += 1
            if chosen is None:
                chosen = replace(cmd, target_class=cls)
        elif cls is AirspaceClass.CRLZ:
            n_crlz += 1
            if first_crlz is None:
                first_crlz = replace(cmd, target_class=cls)
    if chosen is None:
        chosen = first_crlz
    if chosen is None:
        chosen = replace(candidate, best_effort=True, target_class=AirspaceClass.CONFLICTED)
    return SweepOutcome(chosen, n, n_cfz, n_crlz)


def closest_point_on_route(p: GeoPoint, route: Sequence[GeoPoint]) -> GeoPoint:
    """Perpendicular foot of ``p`` on the nearest segment of a polyline
    (tangent plane centred at ``p``; altitude interpolated along the segment)."""
    if not route:
        raise EmptyRouteError("route has no waypoints")
    if len(route) == 1:
        return route[0]
    best = None
    best_d = math.inf
    for a, b in zip(route[:-1], route[1:]):
        ea = to_enu(a, p)[:2]
        eb = to_enu(b, p)[:2]
        seg = eb - ea
        denom = float(seg @ seg)
        t = 0.0 if denom == 0 else min(1.0, max(0.0, float(-ea @ seg) / denom))
        foot = ea + t * seg
        d = float(np.hypot(*foot))
        if d < best_d:
            best_d = d
            alt = a.alt + t * (b.alt - a.alt)
            best = (foot, alt)
    foot, alt = best
    return from_enu((foot[0], foot[1], 0.0), p).with_alt(alt)


def _segment_distance(p0: np.ndarray, p1: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """Minimum distance between two planar segments."""

    def point_seg(p, s0, s1):
        seg = s1 - s0
        denom = float(seg @ seg)
        t = 0.0 if denom == 0 else min(1.0, max(0.0, float((p - s0) @ seg) / denom))
        return float(np.hypot(*(s0 + t * seg - p)))

    def cross(u, v):
        return u[0] * v[1] - u[1] * v[0]

    d1, d2 = p1 - p0, b - a
    denom = cross(d1, d2)
    if denom != 0:
        t = cross(a - p0, d2) / denom
        u = cross(a - p0, d1) / denom
        if 0 <= t <= 1 and 0 <= u <= 1:
            return 0.0
    return min(point_seg(p0, a, b), point_seg(p1, a, b), point_seg(a, p0, p1), point_seg(b, p0, p1))


def rejoined(
    me: GeoPoint, me_prev: GeoPoint | None, route: Sequence[GeoPoint], capture: float
) -> bool:
    """Whether the path flown since the last tick came within ``capture`` of
    the polyline (a single point counts as a degenerate polyline)."""
    prev = me if me_prev is None else me_prev
    p0 = to_enu(prev, me)[:2]
    p1 = np.zeros(2)
    pts = [to_enu(r, me)[:2] for r in route]
    if len(pts) == 1:
        pts = pts * 2
    return any(_segment_distance(p0, p1, a, b) <= capture for a, b in zip(pts[:-1], pts[1:]))


def return_to_route(
    me: TrackPoint,
    props: AircraftProperties,
    mission_route: Sequence[GeoPoint],
    ca_start: GeoPoint | None,
    cruise_speed: float | None = None,
) -> VelocityCommand | None:
    """Head back to where avoidance started (ground-based missions) or to the
    nearest point of the remaining route (air-based). Pilot-controlled
    aircraft get no command: control returns to the pilot."""
    if props.control_type is ControlType.PILOT:
        return None
    if props.mission_type is MissionType.GROUND_BASED:
        if ca_start is None:
            raise EmptyRouteError("no recorded avoidance start point")
        target = ca_start
    else:
        if not mission_route:
            raise EmptyRouteError("air-based return needs a route")
        target = closest_point_on_route(me.position, mission_route)
    if ground_distance(me.position, target) < 0.01:
        heading = me.heading
    else:
        heading = initial_bearing(me.position, target)
    speed = props.clamp_speed(me.speed if cruise_speed is None else cruise_speed)
    return VelocityCommand(
        new_heading=heading,
        new_speed=speed,
        target=target,
        vertical_move=target.alt - me.position.alt,
        reason=CommandReason.RETURN_TO_ROUTE,
        heading_change=signed_angle(heading - me.heading),
    )


def geofence_gate(command: VelocityCommand, fence: Geofence | None) -> VelocityCommand | None:
    """Pass the command through if its target is inside the fence, else cancel."""
    if fence is None or fence.contains(command.target):
        return command
    return None


def _pick_intruder(imminent: list[ConflictAssessment]) -> ConflictAssessment:
    return max(imminent, key=lambda a: (a.pc or 0.0, -a.direct_distance_m, a.other_icao))


def policy_step(
    snap: AssessedSnapshot,
    props: AircraftProperties,
    mission_route: Sequence[GeoPoint],
    state: CaState,
    params: ZoneParams = ZoneParams(),
    fence: Geofence | None = None,
    cruise_speed: float | None = None,
    capture_radius: float = DEFAULT_CAPTURE_RADIUS_M,
) -> PolicyOutput:
    """One tick of the conflict-management policy.

    Phases run Nominal -> Avoiding -> WaitingClear -> Returning -> Nominal.
    Imminent risk always drives an avoidance manoeuvre; for pilot-controlled
    aircraft it is the fallback when the pilot has not resolved the warnings.
    """
    me = snap.me
    now = snap.time
    advisories: list[Advisory] = []
    pilot = props.control_type is ControlType.PILOT
    assessments = [snap.assessments[k] for k in sorted(snap.assessments)]

    def advise(tier, a: ConflictAssessment | None, other: str, action: str):
        advisories.append(Advisory(
            tier, me.icao, other, None if a is None else a.pc, action, now,
            None if a is None else a.direct_distance_m,
            None if a is None else a.ict_sum_m,
            None if a is None else a.pct_sum_m,
        ))

    for icao in sorted(snap.tube_hits):
        t_hit, _ = snap.tube_hits[icao]
        a = snap.assessments.get(icao)
        if t_hit - now <= params.pcrz_warn_s and not (a is not None and a.at_risk):
            advise(AdvisoryTier.EARLY_TUBE_CONFLICT, a, icao, "warnPilot" if pilot else "warnBS")
    for a in assessments:
        if a.in_pcrz:
            advise(AdvisoryTier.PROBABLE_RISK, a, a.other_icao, "warnPilot" if pilot else "warnBS")

    at_risk = {a.other_icao for a in assessments if a.at_risk}
    warned = frozenset((state.warned & at_risk) | {a.other_icao for a in assessments if a.in_pcrz})
    imminent = [a for a in assessments if a.in_icrz]

    if imminent:
        target_a = _pick_intruder(imminent)
        if not pilot:
            reason = "avoid"
        elif target_a.other_icao in state.warned:
            reason = "avoid:pilot-timeout"
        else:
            reason = "avoid:pilot-error"
        for a in imminent:
            advise(AdvisoryTier.IMMINENT_AUTONOMOUS, a, a.other_icao,
                   reason if a is target_a else "monitor")
        intruder = snap.others[target_a.other_icao]
        latched = (
            state.phase in (CaPhase.AVOIDING, CaPhase.WAITING_CLEAR)
            and state.ref_heading is not None
            and target_a.other_icao in state.triggers
        )
        if latched:
            ref_heading, climb = state.ref_heading, state.climb
        else:
            ref_heading, climb = me.heading, not me.position.alt < intruder.position.alt
        # steer relative to the heading held when this manoeuvre began, so
        # re-evaluation on later ticks does not keep rotating the command
        me_ref = replace(me, heading=ref_heading)
        candidate = maneuver_ca(me_ref, intruder, props, target_a, climb=climb)
        sweep = None
        command = candidate
        if candidate.reason is CommandReason.AVOID_ICRZ and candidate.new_speed > 0 and (target_a.move_distance_m or 0) > 0:
            others = [snap.zones[k] for k in sorted(snap.zones)]
            sweep = sweep_safe_waypoint(candidate, me_ref, props, others)
            command = sweep.command
        gated = geofence_gate(command, fence)
        if gated is None:
            advise(AdvisoryTier.GEOFENCE_VIOLATION, target_a, target_a.other_icao, "cancel")
            command = hold_command(me)
        fresh = state.phase is CaPhase.NOMINAL
        new_state = CaState(
            phase=CaPhase.AVOIDING,
            ca_start=me.position if fresh or state.ca_start is None else state.ca_start,
            triggers=(frozenset() if fresh else state.triggers) | {target_a.other_icao},
            warned=warned,
            ref_heading=ref_heading,
            climb=climb,
        )
        return PolicyOutput(tuple(advisories), command, new_state, sweep, target_a.other_icao)

    if state.phase in (CaPhase.AVOIDING, CaPhase.WAITING_CLEAR):
        if any(snap.assessments[i].at_risk for i in state.triggers if i in snap.assessments):
            return PolicyOutput(tuple(advisories), None, replace(state, phase=CaPhase.WAITING_CLEAR, warned=warned))
        cmd = return_to_route(me, props, mission_route, state.ca_start, cruise_speed)
        if cmd is None:
            # pilot regains control
            return PolicyOutput(tuple(advisories), None, CaState(warned=warned))
        gated = geofence_gate(cmd, fence)
        if gated is None:
            advise(AdvisoryTier.GEOFENCE_VIOLATION, None, me.icao, "cancel")
            cmd = hold_command(me)
        return PolicyOutput(
            tuple(advisories), cmd,
            replace(state, phase=CaPhase.RETURNING, warned=warned, return_target=cmd.target),
        )

    if state.phase is CaPhase.RETURNING:
        if props.mission_type is MissionType.GROUND_BASED:
            goal = [state.ca_start]
        else:
            goal = list(mission_route)
        if rejoined(me.position, snap.me_prev, goal, capture_radius):
            return PolicyOutput(tuple(advisories), None, CaState(warned=warned))
        cmd = return_to_route(me, props, mission_route, state.ca_start, cruise_speed)
        gated = geofence_gate(cmd, fence)
        if gated is None:
            advise(AdvisoryTier.GEOFENCE_VIOLATION, None, me.icao, "cancel")
            cmd = hold_command(me)
        return PolicyOutput(tuple(advisories), cmd, replace(state, warned=warned, return_target=cmd.target))

    return PolicyOutput(tuple(advisories), None, replace(state, warned=warned))
