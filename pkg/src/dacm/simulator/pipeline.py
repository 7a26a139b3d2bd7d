"""Per-host processing chain run once per tick:
filter -> estimation -> zones -> prediction -> policy."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from ..airspace import AirspaceSnapshot, filter_snapshot
from ..avoidance import (
    AircraftProperties,
    AssessedSnapshot,
    CaState,
    Geofence,
    PolicyOutput,
    policy_step,
)
from ..config import EngineConfig
from ..ec_ingest import TrackPoint, advance_track
from ..errors import InsufficientHistoryError
from ..estimation import TelemetrySync, TrackFilter
from ..geodesy import GeoPoint
from ..prediction import SafetyTravelTube, Waypoint, WaypointHistory, build_tube, tube_conflicts
from ..zones import ConflictAssessment, ZoneSet, assess_pair, zones_for


@dataclass(frozen=True)
class TickResult:
    snapshot: AirspaceSnapshot
    assessed: AssessedSnapshot
    output: PolicyOutput
    tubes: dict[str, SafetyTravelTube]


@dataclass
class DacmPipeline:
    """Situation awareness and conflict management for one host drone."""

    icao: str
    props: AircraftProperties
    config: EngineConfig
    fence: Geofence | None = None
    cruise_speed: float | None = None
    ca_state: CaState = field(default_factory=CaState)
    tracks: dict[str, TrackPoint] = field(default_factory=dict)
    filters: dict[str, TrackFilter] = field(default_factory=dict)
    histories: dict[str, WaypointHistory] = field(default_factory=dict)
    sync: TelemetrySync | None = None
    me_prev: GeoPoint | None = None

    def __post_init__(self):
        if self.sync is None:
            self.sync = TelemetrySync(self.config.telemetry_alpha)
        self._filter_cfg = self.config.filter_config()
        self._zone_params = self.config.zone_params()
        self._noise = self.config.noise_config()

    def ingest(self, deliveries: Iterable[TrackPoint]) -> None:
        """Fold newly delivered fixes into the per-flight filters."""
        for tp in deliveries:
            flt = self.filters.get(tp.icao)
            if flt is None:
                flt = self.filters[tp.icao] = TrackFilter(self._noise, self.config.process_noise_mode)
            corrected = flt.step(tp.position, tp.heading, tp.speed, tp.observed_at)
            prev = self.tracks.get(tp.icao)
            if prev is None or tp.observed_at >= prev.observed_at:
                self.tracks[tp.icao] = replace(tp, position=corrected)

    def _evict(self, now: float) -> None:
        limit = self.config.staleness_limit_s
        for icao in [k for k, tp in self.tracks.items() if now - tp.observed_at > limit]:
            del self.tracks[icao]
            self.filters.pop(icao, None)
            self.histories.pop(icao, None)

    def _record(self, tp: TrackPoint, now: float) -> WaypointHistory:
        hist = self.histories.get(tp.icao)
        if hist is None:
            hist = self.histories[tp.icao] = WaypointHistory(tp.icao, self.config.history_capacity)
        if not hist.points or now > hist.points[-1].time:
            hist.append(Waypoint(tp.position, tp.heading, tp.speed, now))
        return hist

    def _tube(self, tp: TrackPoint, zone: ZoneSet, now: float) -> SafetyTravelTube | None:
        hist = self._record(tp, now)
        try:
            return build_tube(hist, zone.ict_radius_m, self.config.prediction_horizon_s, self.config.prediction_dt_s)
        except InsufficientHistoryError:
            return None

    def me_track(self, telemetry: TrackPoint) -> TrackPoint:
        """meD's own position: its filtered EC fix synchronised with telemetry."""
        own = self.tracks.get(self.icao)
        if own is None:
            return telemetry
        estimate = advance_track(own, telemetry.observed_at).position
        return replace(telemetry, position=self.sync.correct(estimate, telemetry.position))

    def tick(
        self,
        now: float,
        telemetry: TrackPoint,
        mission_route: Sequence[GeoPoint] = (),
    ) -> TickResult:
        self._evict(now)
        me = self.me_track(replace(telemetry, observed_at=now))
        others = {k: advance_track(tp, now) for k, tp in self.tracks.items() if k != self.icao}
        snapshot = filter_snapshot(others, me, self._filter_cfg, now)

        params = self._zone_params
        me_zone = zones_for(me, params)
        roi = {tp.icao: tp for tp in snapshot.roi_flights}
        zones: dict[str, ZoneSet] = {k: zones_for(tp, params) for k, tp in roi.items()}
        assessments: dict[str, ConflictAssessment] = {
            k: assess_pair(me, me_zone, tp, zones[k]) for k, tp in roi.items()
        }

        tubes: dict[str, SafetyTravelTube] = {}
        me_tube = self._tube(me, me_zone, now)
        predicted = {tp.icao: tp for tp in snapshot.moi_flights if tp.icao not in snapshot.excluded_from_prediction}
        predicted.update(roi)
        for k in sorted(predicted):
            tp = predicted[k]
            zone = zones.get(k) or zones_for(tp, params)
            tube = self._tube(tp, zone, now)
            if tube is not None:
                tubes[k] = tube
        hits = tube_conflicts(me_tube, tubes.values()) if me_tube is not None else {}
        if me_tube is not None:
            tubes[self.icao] = me_tube

        assessed = AssessedSnapshot(
            time=now,
            me=me,
            me_zone=me_zone,
            others=roi,
            zones=zones,
            assessments=assessments,
            tube_hits=hits,
            me_prev=self.me_prev,
        )
        output = policy_step(
            assessed,
            self.props,
            mission_route,
            self.ca_state,
            params=params,
            fence=self.fence,
            cruise_speed=self.cruise_speed,
            capture_radius=self.config.capture_radius_m,
        )
        self.ca_state = output.state
        self.me_prev = me.position
        return TickResult(snapshot, assessed, output, tubes)
