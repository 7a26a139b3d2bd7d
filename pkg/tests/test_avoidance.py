from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dacm.avoidance import (
    AdvisoryTier,
    AircraftProperties,
    AssessedSnapshot,
    CaPhase,
    CaState,
    CommandReason,
    ControlType,
    Geofence,
    MissionType,
    closest_point_on_route,
    geofence_gate,
    hold_command,
    maneuver_ca,
    policy_step,
    rejoined,
    return_to_route,
    sweep_candidates,
    sweep_safe_waypoint,
)
from dacm.ec_ingest import TrackPoint
from dacm.errors import EmptyRouteError
from dacm.geodesy import GeoPoint, destination_point, direct_distance, ground_distance, initial_bearing, signed_angle
from dacm.zones import AirspaceClass, ZoneParams, ZoneSet, airspace_class, assess_pair, zones_for

O = GeoPoint(53.8, -2.8, 150.0)
P = ZoneParams()
AUTO = AircraftProperties()
PILOT = AircraftProperties(control_type=ControlType.PILOT)


def tp(icao, pos, heading=0.0, speed=60.0):
    return TrackPoint(icao, pos, heading, speed, 0.0)


def snapshot(me, *others, time=0.0, me_prev=None, tube_hits=None):
    me_zone = zones_for(me, P)
    zones = {o.icao: zones_for(o, P) for o in others}
    assessments = {o.icao: assess_pair(me, me_zone, o, zones[o.icao]) for o in others}
    return AssessedSnapshot(
        time, me, me_zone, {o.icao: o for o in others}, zones, assessments,
        tube_hits=tube_hits or {}, me_prev=me_prev,
    )


def icrz_pair(me_heading=0.0, other_heading=180.0, d=200.0, dz=0.0):
    me = tp("AAAAAA", O, me_heading)
    other = tp("BBBBBB", destination_point(O, 0.0, d, O.alt + dz), other_heading)
    return me, other


def assessment(me, other):
    return assess_pair(me, zones_for(me, P), other, zones_for(other, P))


# --- maneuver_ca -------------------------------------------------------------


def test_turn_left_with_wrap():
    me, other = icrz_pair(20.0, 10.0)
    cmd = maneuver_ca(me, other, AUTO, assessment(me, other))
    assert cmd.new_heading == pytest.approx(335.0)
    assert cmd.reason is CommandReason.AVOID_ICRZ


def test_turn_right_across_north():
    me, other = icrz_pair(350.0, 30.0)
    cmd = maneuver_ca(me, other, AUTO, assessment(me, other))
    assert cmd.new_heading == pytest.approx(35.0)


def test_below_intruder_descends_by_cap():
    props = AircraftProperties(downward_move=20.0)
    me, other = icrz_pair(dz=40.0, d=100.0)
    a = assessment(me, other)
    cmd = maneuver_ca(me, other, props, a)
    # requested share exceeds the cap, so the cap applies
    assert a.move_distance_m * math.sin(math.radians(45)) > 20.0
    assert cmd.vertical_move == pytest.approx(-20.0)
    assert cmd.target.alt == pytest.approx(O.alt - 20.0)


def test_target_geometry():
    me, other = icrz_pair(d=270.0)
    a = assessment(me, other)
    cmd = maneuver_ca(me, other, AUTO, a)
    assert ground_distance(me.position, cmd.target) == pytest.approx(a.move_distance_m, rel=1e-9)
    assert initial_bearing(me.position, cmd.target) == pytest.approx(cmd.new_heading, abs=1e-6)
    assert cmd.vertical_move == pytest.approx(a.move_distance_m * math.sin(math.radians(45)))
    assert cmd.new_speed == AUTO.max_speed


def test_zero_move_distance_holds():
    me = tp("AAAAAA", O)
    other = tp("BBBBBB", destination_point(O, 0.0, 300.0), 180.0)
    a = assessment(me, other)
    a = type(a)(**{**a.__dict__, "move_distance_m": 0.0})
    cmd = maneuver_ca(me, other, AUTO, a)
    assert cmd.reason is CommandReason.AVOID_ICRZ
    assert cmd.new_heading == me.heading
    assert cmd.vertical_move == 0.0
    assert all(math.isfinite(x) for x in (cmd.target.lat, cmd.target.lon, cmd.target.alt))


def test_climb_override():
    me, other = icrz_pair(dz=-10.0)
    cmd = maneuver_ca(me, other, AUTO, assessment(me, other), climb=False)
    assert cmd.vertical_move < 0


@settings(max_examples=200, deadline=None)
@given(
    st.floats(0, 359.999), st.floats(0, 359.999), st.floats(1, 299), st.floats(-25, 25),
    st.floats(1, 180), st.floats(1, 60), st.floats(1, 60),
)
def test_maneuver_legality(h_me, h_other, d, dz, div, up, down):
    props = AircraftProperties(diversion_angle=div, upward_move=up, downward_move=down)
    me = tp("AAAAAA", O, h_me)
    other = tp("BBBBBB", destination_point(O, 45.0, d, O.alt + dz), h_other)
    a = assessment(me, other)
    if not a.in_icrz:
        return
    cmd = maneuver_ca(me, other, props, a)
    assert 0.0 <= cmd.new_heading < 360.0
    assert abs(signed_angle(cmd.new_heading - me.heading)) <= div + 1e-9
    assert abs(cmd.vertical_move) <= max(up, down) + 1e-9
    # the vertical move never closes the altitude gap
    gap = me.position.alt - other.position.alt
    assert abs(gap + cmd.vertical_move) >= abs(gap) - 1e-9


# --- sweep -------------------------------------------------------------------


def sweep_setup():
    me = tp("AAAAAA", O, 0.0, 80.0)  # ICT 200 m
    intruder = tp("BBBBBB", destination_point(O, 0.0, 100.0), 180.0, 0.0)  # hovering, ICT 30 m
    a = assessment(me, intruder)
    cand = maneuver_ca(me, intruder, AUTO, a)
    return me, intruder, cand


def test_sweep_keeps_clear_candidate():
    me, intruder, cand = sweep_setup()
    out = sweep_safe_waypoint(cand, me, AUTO, [zones_for(intruder, P)])
    assert out.command.new_heading == cand.new_heading
    assert out.command.target == cand.target
    assert out.command.target_class is AirspaceClass.CFZ
    assert not out.command.best_effort


def brute_force_sweep(cand, me, props, zones):
    """Independent sweep-set enumeration and classification."""
    move = ground_distance(me.position, cand.target)
    side = 1 if cand.heading_change >= 0 else -1
    changes, seen = [], set()
    k = 1
    while k * props.diversion_angle <= 180 + 1e-9:
        for sgn in (side, -side):
            c = sgn * k * props.diversion_angle
            key = round(c % 360, 6)
            if key not in seen:
                seen.add(key)
                changes.append((c, cand.vertical_move))
        k += 1
    changes += [(0.0, cand.vertical_move), (0.0, -cand.vertical_move)]

    def cls(c, v):
        t = destination_point(me.position, (me.heading + c) % 360, move, me.position.alt + v)
        ds = [(direct_distance(t, z.center), z) for z in zones]
        if any(d <= z.ict_radius_m for d, z in ds):
            return "x"
        return "r" if any(d <= z.pct_radius_m for d, z in ds) else "f"

    labels = [(c, v, cls(c, v)) for c, v in changes]
    for want in ("f", "r"):
        for c, v, lab in labels:
            if lab == want:
                return c, v
    return None


def test_sweep_picks_opposite_side_when_candidate_blocked():
    me, intruder, cand = sweep_setup()
    assert cand.heading_change == 45.0
    blocker = tp("CCCCCC", cand.target, 90.0, 0.0)
    zones = [zones_for(intruder, P), zones_for(blocker, P)]
    assert airspace_class(cand.target, zones) is AirspaceClass.CONFLICTED
    out = sweep_safe_waypoint(cand, me, AUTO, zones)
    expected = brute_force_sweep(cand, me, AUTO, zones)
    assert expected == (-45.0, cand.vertical_move)
    assert out.command.heading_change == pytest.approx(-45.0)
    assert out.command.new_heading == pytest.approx(315.0)
    assert out.command.target_class is AirspaceClass.CFZ
    assert out.cfz_candidates >= 1


def test_sweep_encircled_is_best_effort():
    me, intruder, cand = sweep_setup()
    wall = ZoneSet("WWWWWW", 20000.0, 10000.0, O)
    out = sweep_safe_waypoint(cand, me, AUTO, [wall])
    assert out.command.best_effort
    assert out.command.target == cand.target
    assert out.cfz_candidates == out.crlz_candidates == 0


def test_sweep_falls_back_to_crlz():
    me, intruder, cand = sweep_setup()
    # a wide PcRz shell covers every target but no ICT sphere does
    shell = ZoneSet("SSSSSS", 10000.0, 5.0, destination_point(O, 180.0, 2000.0))
    out = sweep_safe_waypoint(cand, me, AUTO, [shell])
    assert out.command.target_class is AirspaceClass.CRLZ
    assert out.command.target == cand.target
    assert not out.command.best_effort


def test_sweep_set_size():
    me, intruder, cand = sweep_setup()
    # 45 degree steps: 7 distinct headings plus two vertical alternates
    assert len(list(sweep_candidates(cand, me, AUTO))) == 9


@settings(max_examples=100, deadline=None)
@given(
    st.lists(
        st.tuples(st.floats(0, 360), st.floats(20, 400), st.floats(-40, 40), st.floats(0, 80)),
        min_size=1, max_size=4,
    ),
    st.floats(10, 180),
)
def test_sweep_no_new_conflict(blockers, div):
    props = AircraftProperties(diversion_angle=div)
    me, intruder, _ = sweep_setup()
    cand = maneuver_ca(me, intruder, props, assessment(me, intruder))
    zones = [zones_for(intruder, P)] + [
        zones_for(tp(f"C{i:05d}", destination_point(O, b, r, O.alt + dz), 0.0, s), P)
        for i, (b, r, dz, s) in enumerate(blockers)
    ]
    out = sweep_safe_waypoint(cand, me, props, zones)
    cls = airspace_class(out.command.target, zones)
    if out.cfz_candidates:
        assert cls is AirspaceClass.CFZ
    elif out.crlz_candidates:
        assert cls is AirspaceClass.CRLZ
    else:
        assert out.command.best_effort
    assert abs(signed_angle(out.command.new_heading - me.heading)) <= 180.0


# --- return to route -----------------------------------------------------------


def test_ground_based_returns_to_start():
    props = AircraftProperties(mission_type=MissionType.GROUND_BASED)
    start = destination_point(O, 270.0, 400.0)
    me = tp("AAAAAA", O, 30.0)
    cmd = return_to_route(me, props, [], start, cruise_speed=40.0)
    assert cmd.reason is CommandReason.RETURN_TO_ROUTE
    assert cmd.target == start
    assert cmd.new_heading == pytest.approx(270.0, abs=0.2)
    assert cmd.new_speed == 40.0


def test_ground_based_needs_start():
    props = AircraftProperties(mission_type=MissionType.GROUND_BASED)
    with pytest.raises(EmptyRouteError):
        return_to_route(tp("AAAAAA", O), props, [], None)


def test_air_based_uses_perpendicular_foot():
    a = destination_point(O, 0.0, 500.0)
    b = destination_point(a, 90.0, 1000.0)
    c = destination_point(b, 180.0, 1000.0)
    me_pos = destination_point(destination_point(a, 90.0, 400.0), 0.0, 120.0)
    cmd = return_to_route(tp("AAAAAA", me_pos, 0.0), AUTO, [a, b, c], None)
    # oracle: foot on the first (east-west) segment, 400 m along it
    foot = destination_point(a, 90.0, 400.0)
    assert ground_distance(cmd.target, foot) < 0.5
    assert cmd.new_heading == pytest.approx(180.0, abs=0.5)


def test_air_based_empty_route():
    with pytest.raises(EmptyRouteError):
        return_to_route(tp("AAAAAA", O), AUTO, [], None)


def test_pilot_gets_no_return_command():
    assert return_to_route(tp("AAAAAA", O), PILOT, [O], O) is None


def test_closest_point_interpolates_altitude():
    a = GeoPoint(O.lat, O.lon, 100.0)
    b = destination_point(a, 90.0, 1000.0, 200.0)
    mid = destination_point(destination_point(a, 90.0, 500.0), 0.0, 50.0)
    foot = closest_point_on_route(mid, [a, b])
    assert foot.alt == pytest.approx(150.0, abs=0.5)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 360), st.floats(0, 2000), st.floats(0, 360), st.floats(10, 2000))
def test_closest_point_beats_vertices(brg, dist, seg_brg, seg_len):
    p = destination_point(O, brg, dist)
    a = O
    b = destination_point(O, seg_brg, seg_len)
    foot = closest_point_on_route(p, [a, b])
    d = ground_distance(p, foot)
    assert d <= min(ground_distance(p, a), ground_distance(p, b)) + 1e-3


def test_rejoined_catches_fast_crossing():
    route = [destination_point(O, 270.0, 1000.0), destination_point(O, 90.0, 1000.0)]
    before = destination_point(O, 180.0, 20.0)
    after = destination_point(O, 0.0, 20.0)
    assert rejoined(after, before, route, 10.0)
    assert not rejoined(after, None, route, 10.0)


# --- geofence ------------------------------------------------------------------


def test_geofence_pass_at_center():
    fence = Geofence(center=O, radius=500.0)
    cmd = hold_command(tp("AAAAAA", O))
    assert geofence_gate(cmd, fence) is cmd


def test_geofence_cancels_outside():
    fence = Geofence(center=O, radius=500.0)
    cmd = hold_command(tp("AAAAAA", destination_point(O, 10.0, 600.0)))
    assert geofence_gate(cmd, fence) is None


def test_no_fence_passes():
    cmd = hold_command(tp("AAAAAA", O))
    assert geofence_gate(cmd, None) is cmd


def test_polygon_fence():
    verts = tuple(destination_point(O, b, 1000.0) for b in (0, 90, 180, 270))
    fence = Geofence(vertices=verts)
    assert fence.contains(O)
    assert not fence.contains(destination_point(O, 45.0, 900.0))


def test_fence_validation():
    with pytest.raises(ValueError):
        Geofence(vertices=(O, destination_point(O, 0, 100)))
    with pytest.raises(ValueError):
        Geofence(vertices=(
            destination_point(O, 315, 100), destination_point(O, 135, 100),
            destination_point(O, 45, 100), destination_point(O, 225, 100),
        ))
    with pytest.raises(ValueError):
        Geofence(center=O, radius=0.0)


def test_props_validation():
    with pytest.raises(ValueError):
        AircraftProperties(diversion_angle=0.0)
    with pytest.raises(ValueError):
        AircraftProperties(max_turn_rate=0.0)
    with pytest.raises(ValueError):
        AircraftProperties(min_speed=90.0)


# --- policy ------------------------------------------------------------------


def test_empty_snapshot():
    out = policy_step(snapshot(tp("AAAAAA", O)), AUTO, [O], CaState())
    assert out.advisories == ()
    assert out.command is None
    assert out.state.phase is CaPhase.NOMINAL


def test_pcrz_pilot_warns_only():
    me, other = icrz_pair(d=450.0)
    out = policy_step(snapshot(me, other), PILOT, [O], CaState())
    assert [a.tier for a in out.advisories] == [AdvisoryTier.PROBABLE_RISK]
    assert out.advisories[0].action == "warnPilot"
    assert out.advisories[0].pc == pytest.approx(0.5 * (600 - 450) / 300)
    assert out.command is None
    assert "BBBBBB" in out.state.warned


def test_pcrz_autonomous_warns_base_station():
    me, other = icrz_pair(d=450.0)
    out = policy_step(snapshot(me, other), AUTO, [O], CaState())
    assert out.advisories[0].action == "warnBS"


def test_icrz_autonomous_commands():
    me, other = icrz_pair(d=200.0)
    out = policy_step(snapshot(me, other), AUTO, [O], CaState())
    tiers = [a.tier for a in out.advisories]
    assert tiers == [AdvisoryTier.IMMINENT_AUTONOMOUS]
    assert out.command is not None and out.command.reason is CommandReason.AVOID_ICRZ
    assert out.state.phase is CaPhase.AVOIDING
    assert out.state.ca_start == me.position
    assert out.state.triggers == {"BBBBBB"}
    assert out.sweep is not None


def test_pilot_timeout_vs_error():
    me, other = icrz_pair(d=200.0)
    warned = CaState(warned=frozenset({"BBBBBB"}))
    out = policy_step(snapshot(me, other), PILOT, [O], warned)
    assert out.advisories[0].action == "avoid:pilot-timeout"
    assert out.command is not None
    out = policy_step(snapshot(me, other), PILOT, [O], CaState())
    assert out.advisories[0].action == "avoid:pilot-error"


def test_early_tube_warning():
    me = tp("AAAAAA", O)
    other = tp("BBBBBB", destination_point(O, 0.0, 2000.0), 180.0)
    snap = snapshot(me, other, tube_hits={"BBBBBB": (10.0, 250.0)})
    out = policy_step(snap, AUTO, [O], CaState())
    assert [a.tier for a in out.advisories] == [AdvisoryTier.EARLY_TUBE_CONFLICT]
    snap = snapshot(me, other, tube_hits={"BBBBBB": (20.0, 250.0)})
    assert policy_step(snap, AUTO, [O], CaState()).advisories == ()


def test_state_machine_cycle():
    route = [destination_point(O, 180.0, 1000.0), destination_point(O, 0.0, 2000.0)]
    me, other = icrz_pair(d=200.0)
    out = policy_step(snapshot(me, other), AUTO, route, CaState())
    assert out.state.phase is CaPhase.AVOIDING
    heading = out.command.new_heading

    # still in PcRz with the trigger: wait
    moved = tp("AAAAAA", destination_point(O, 90.0, 50.0), heading)
    far = tp("BBBBBB", destination_point(O, 0.0, 500.0), 180.0)
    out = policy_step(snapshot(moved, far), AUTO, route, out.state)
    assert out.state.phase is CaPhase.WAITING_CLEAR
    assert out.command is None

    # clear: return to route
    gone = tp("BBBBBB", destination_point(O, 0.0, 5000.0), 180.0)
    out = policy_step(snapshot(moved, gone), AUTO, route, out.state)
    assert out.state.phase is CaPhase.RETURNING
    assert out.command.reason is CommandReason.RETURN_TO_ROUTE

    # not yet on the route
    out = policy_step(snapshot(moved, gone, me_prev=moved.position), AUTO, route, out.state)
    assert out.state.phase is CaPhase.RETURNING

    # crossed the route since the last tick: nominal
    back = tp("AAAAAA", destination_point(O, 270.0, 5.0), 270.0)
    out = policy_step(snapshot(back, gone, me_prev=moved.position), AUTO, route, out.state)
    assert out.state.phase is CaPhase.NOMINAL
    assert out.command is None


def test_pilot_returns_control():
    me, other = icrz_pair(d=200.0)
    out = policy_step(snapshot(me, other), PILOT, [O], CaState())
    gone = tp("BBBBBB", destination_point(O, 0.0, 5000.0), 180.0)
    out = policy_step(snapshot(me, gone), PILOT, [O], out.state)
    assert out.state.phase is CaPhase.NOMINAL
    assert out.command is None


def test_geofence_cancels_manoeuvre():
    me, other = icrz_pair(d=200.0)
    fence = Geofence(center=O, radius=1.0)
    out = policy_step(snapshot(me, other), AUTO, [O], CaState(), fence=fence)
    assert AdvisoryTier.GEOFENCE_VIOLATION in [a.tier for a in out.advisories]
    assert out.command.reason is CommandReason.HOLD
    assert out.command.target == me.position


def test_reference_heading_latched():
    me, other = icrz_pair(d=200.0)
    out = policy_step(snapshot(me, other), AUTO, [O], CaState())
    first = out.command.new_heading
    turned = tp("AAAAAA", O, first)
    out2 = policy_step(snapshot(turned, other), AUTO, [O], out.state)
    assert out2.command.new_heading == pytest.approx(first)
    assert out2.state.ref_heading == out.state.ref_heading == 0.0


def test_boundary_distance_holds():
    me = tp("AAAAAA", O)
    other = tp("BBBBBB", destination_point(O, 0.0, 300.0), 180.0)
    snap = snapshot(me, other)
    # pin the pair exactly on the IcRz boundary
    a = snap.assessments["BBBBBB"]
    edge = type(a)(**{**a.__dict__, "direct_distance_m": 300.0, "in_icrz": True, "in_pcrz": False,
                      "pc": 0.5, "move_distance_m": 0.0})
    snap = AssessedSnapshot(snap.time, me, snap.me_zone, snap.others, snap.zones, {"BBBBBB": edge})
    out = policy_step(snap, AUTO, [O], CaState())
    cmd = out.command
    assert cmd.reason is CommandReason.AVOID_ICRZ
    assert cmd.new_heading == me.heading and cmd.target == me.position
    assert out.sweep is None
    assert out.state.phase is CaPhase.AVOIDING


@settings(max_examples=150, deadline=None)
@given(
    st.floats(0, 359.99), st.floats(0, 359.99), st.floats(0, 359.99),
    st.floats(5, 600), st.floats(-30, 30), st.floats(0, 80), st.floats(0, 80),
    st.sampled_from([AUTO, PILOT, AircraftProperties(diversion_angle=30.0, upward_move=15.0)]),
)
def test_policy_outputs_legal(h_me, h_other, brg, d, dz, v_me, v_other, props):
    me = tp("AAAAAA", O, h_me, v_me)
    other = tp("BBBBBB", destination_point(O, brg, d, O.alt + dz), h_other, v_other)
    snap = snapshot(me, other)
    out = policy_step(snap, props, [destination_point(O, 0.0, 3000.0)], CaState())
    a = snap.assessments["BBBBBB"]
    if a.in_icrz:
        assert out.state.phase is CaPhase.AVOIDING
        cmd = out.command
        assert 0.0 <= cmd.new_heading < 360.0
        assert abs(cmd.vertical_move) <= max(props.upward_move, props.downward_move) + 1e-9
        assert props.min_speed <= cmd.new_speed <= props.max_speed
        if out.sweep is not None and out.sweep.cfz_candidates:
            assert airspace_class(cmd.target, list(snap.zones.values())) is AirspaceClass.CFZ
    else:
        assert out.command is None
        assert out.state.phase is CaPhase.NOMINAL
        assert all(x.tier is not AdvisoryTier.IMMINENT_AUTONOMOUS for x in out.advisories)
