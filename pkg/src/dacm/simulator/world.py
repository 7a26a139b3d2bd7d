"""Deterministic discrete-time world.

Each tick, in order:

1. every simulated flight broadcasts its (optionally noisy) state;
   replayed records come due; live datagrams are drained from the queue;
2. broadcasts older than the feed latency are delivered, dead-reckoned to
   the tick time and folded into every host pipeline;
3. each host runs its pipeline and queues any command behind the
   actuation latency;
4. the trace and separation metrics are updated;
5. simulated flights advance by one tick under their active command or
   along their route.
"""

from __future__ import annotations

import heapq
import itertools
import math
import queue
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from ..avoidance import CaPhase, CommandReason, VelocityCommand
from ..ec_ingest import (
    EcMessage,
    IngestStats,
    TrackPoint,
    advance_track,
    compensate_latency,
    message_from_track,
    parse_message,
)
from ..errors import DacmError, StaleMessageError
from ..geodesy import GeoPoint, from_enu, to_enu
from ..zones import zones_for
from .kinematics import apply_command, follow_route, nearest_segment, polyline_length
from .metrics import Metrics, RiskEventCounter, SeparationMonitor
from .pipeline import DacmPipeline, TickResult
from .scenario import Behavior, FlightSpec, Scenario
from .trace import TraceLog

RESUME = "resume"  # actuation-queue sentinel: drop the active command, fly the route


@dataclass
class FlightRuntime:
    spec: FlightSpec
    state: TrackPoint | None
    polyline: tuple[GeoPoint, ...] = ()
    index: int = 1
    done: bool = False
    flown: float = 0.0
    active: VelocityCommand | None = None
    pending: list[tuple[float, int, object]] = field(default_factory=list)
    pipeline: DacmPipeline | None = None
    last_result: TickResult | None = None
    replay_cursor: int = 0

    @property
    def icao(self) -> str:
        return self.spec.icao

    @property
    def simulated(self) -> bool:
        return self.spec.behavior in (Behavior.SCRIPTED, Behavior.DACM)

    @property
    def remaining_route(self) -> tuple[GeoPoint, ...]:
        return self.polyline[max(self.index - 1, 0):]

    def planned_remainder(self) -> float:
        """Route length still to fly: direct to the next waypoint, then along."""
        if self.done or self.index >= len(self.polyline):
            return 0.0
        nxt = self.polyline[self.index]
        return polyline_length((self.state.position, nxt)) + polyline_length(self.polyline[self.index:])


class World:
    """One scenario run. Drive it with :meth:`step` or :func:`run_scenario`."""

    def __init__(self, scenario: Scenario, live: "queue.Queue[bytes | str] | None" = None):
        scenario.validate()
        self.scenario = scenario
        self.config = scenario.config
        self.dt = scenario.tick_dt
        self.tick = 0
        self.max_ticks = int(math.floor(scenario.duration / scenario.tick_dt + 1e-9))
        self.rng = np.random.default_rng(scenario.seed)
        self.live = live
        self.ingest_stats = IngestStats()
        self.trace = TraceLog(header=self._header())
        self.monitor = SeparationMonitor()
        self.risk = RiskEventCounter()
        self._feed: list[tuple[float, int, EcMessage]] = []
        self._seq = itertools.count()
        self._known: dict[str, TrackPoint] = {}
        self.last_messages: dict[str, EcMessage] = {}
        self.flights: dict[str, FlightRuntime] = {}
        for spec in scenario.flights:
            self.flights[spec.icao] = self._runtime(spec)
        self.finished = False

    # --- setup -----------------------------------------------------------

    def _header(self) -> dict:
        sc = self.scenario
        return {
            "scenario": sc.id,
            "scenario_hash": sc.digest(),
            "seed": sc.seed,
            "tick_dt": sc.tick_dt,
            "duration": sc.duration,
            "config": self.config.to_dict(),
            "overrides": dict(sorted(sc.overrides.items())),
        }

    def _runtime(self, spec: FlightSpec) -> FlightRuntime:
        state = None
        if spec.initial is not None:
            state = replace(spec.initial, observed_at=self.now)
        polyline = ((state.position,) + spec.route) if (state is not None and spec.route) else ()
        rt = FlightRuntime(spec, state, polyline, done=not polyline and spec.behavior is Behavior.DACM)
        if spec.runs_pipeline:
            cruise = state.speed if state is not None else None
            rt.pipeline = DacmPipeline(spec.icao, spec.props, self.config, self.scenario.fence, cruise)
        return rt

    @property
    def now(self) -> float:
        return self.scenario.start_epoch + self.tick * self.dt

    # --- feed ------------------------------------------------------------

    def _broadcast(self, rt: FlightRuntime, now: float) -> None:
        tp = rt.state
        sigma = self.config.noise_sigma_m
        if sigma > 0:
            e, n = self.rng.normal(0.0, sigma, size=2)
            tp = replace(tp, position=from_enu((e, n, 0.0), tp.position))
        self._push(message_from_track(tp, now), now + self.config.feed_latency_s)

    def _push(self, msg: EcMessage, due: float) -> None:
        heapq.heappush(self._feed, (due, next(self._seq), msg))

    def _collect(self, now: float) -> list[TrackPoint]:
        for rt in self.flights.values():
            if rt.simulated and rt.state is not None:
                self._broadcast(rt, now)
            elif rt.spec.behavior is Behavior.REPLAY:
                recs = rt.spec.records
                while rt.replay_cursor < len(recs) and recs[rt.replay_cursor].epoch <= now + 1e-9:
                    msg = recs[rt.replay_cursor]
                    self._push(msg, msg.epoch + self.config.feed_latency_s)
                    rt.replay_cursor += 1
        if self.live is not None:
            while True:
                try:
                    raw = self.live.get_nowait()
                except queue.Empty:
                    break
                self.ingest_stats.received += 1
                try:
                    msg = parse_message(raw)
                except DacmError as exc:
                    self.ingest_stats.dropped += 1
                    self.ingest_stats.last_error = str(exc)
                    continue
                self.last_messages[msg.icao] = msg
                self._push(msg, now)

        delivered = []
        while self._feed and self._feed[0][0] <= now + 1e-9:
            _, _, msg = heapq.heappop(self._feed)
            try:
                tp = compensate_latency(msg, now, self.config.staleness_limit_s)
            except StaleMessageError as exc:
                self.ingest_stats.dropped += 1
                self.ingest_stats.last_error = str(exc)
                continue
            delivered.append(tp)
            self.ingest_stats.enqueued += 1
        for tp in delivered:
            prev = self._known.get(tp.icao)
            if prev is None or tp.observed_at >= prev.observed_at:
                self._known[tp.icao] = tp
        return delivered

    def _observed_state(self, rt: FlightRuntime, now: float) -> TrackPoint | None:
        """Ground-truth state for simulated flights, latest report otherwise."""
        if rt.simulated:
            return rt.state
        tp = self._known.get(rt.icao)
        if tp is None or now - tp.observed_at > self.config.staleness_limit_s:
            return None
        return advance_track(tp, now)

    # --- tick ------------------------------------------------------------

    def step(self) -> bool:
        """Run one tick. Returns False once the run is over."""
        if self.finished:
            return False
        now = self.now
        delivered = self._collect(now)
        params = self.config.zone_params()

        for icao in sorted(self.flights):
            rt = self.flights[icao]
            if rt.pipeline is None:
                continue
            rt.pipeline.ingest(delivered)
            telemetry = self._observed_state(rt, now)
            if telemetry is None:
                rt.last_result = None
                continue
            before = rt.pipeline.ca_state.phase
            route = rt.remaining_route if rt.spec.behavior is Behavior.DACM else ()
            result = rt.pipeline.tick(now, replace(telemetry, observed_at=now), route)
            rt.last_result = result
            self.risk.observe(icao, result.assessed.assessments.values(), self.monitor.metrics)
            for adv in result.output.advisories:
                self.trace.advise(self.tick, adv)
            if rt.simulated and self.config.ca_enabled:
                self._dispatch(rt, before, result, now)

        positions = {}
        for icao in sorted(self.flights):
            rt = self.flights[icao]
            tp = self._observed_state(rt, now)
            if tp is None:
                continue
            positions[icao] = tp.position
            res = rt.last_result if rt.pipeline is not None else None
            self.trace.record(
                self.tick, now - self.scenario.start_epoch, replace(tp, observed_at=now),
                rt.spec.behavior.value, zones_for(tp, params),
                phase=res.output.state.phase.value if res is not None else "",
                assessments=list(res.assessed.assessments.values()) if res is not None else None,
                command=rt.active,
            )
        self.monitor.observe(positions)

        dacm = [rt for rt in self.flights.values() if rt.spec.behavior is Behavior.DACM]
        if self.tick >= self.max_ticks or (dacm and all(rt.done for rt in dacm)):
            self.finished = True
            return False
        for icao in sorted(self.flights):
            self._advance(self.flights[icao], now)
        self.tick += 1
        return True

    def _dispatch(self, rt: FlightRuntime, before: CaPhase, result: TickResult, now: float) -> None:
        out = result.output
        due = now + self.config.actuation_latency_s
        if out.command is not None:
            if out.state.phase is CaPhase.AVOIDING and before is not CaPhase.AVOIDING:
                self.monitor.metrics.maneuver_count += 1
            heapq.heappush(rt.pending, (due, next(self._seq), out.command))
        elif out.state.phase is CaPhase.NOMINAL and before is not CaPhase.NOMINAL:
            heapq.heappush(rt.pending, (due, next(self._seq), RESUME))

    def _advance(self, rt: FlightRuntime, now: float) -> None:
        if not rt.simulated or rt.state is None:
            return
        while rt.pending and rt.pending[0][0] <= now + 1e-9:
            _, _, item = heapq.heappop(rt.pending)
            if item == RESUME:
                rt.active = None
                if rt.polyline and not rt.done:
                    rt.index = nearest_segment(rt.state.position, rt.polyline, rt.index)
            else:
                rt.active = item
        before = rt.state.position
        if rt.active is not None:
            rt.state = apply_command(rt.state, rt.active, rt.spec.props, self.dt, self.config.max_accel_mps2)
            rt.flown += _dist3(before, rt.state.position)
        elif rt.polyline and not rt.done:
            rt.state, rt.index, rt.done, flown = follow_route(
                rt.state, rt.polyline, rt.index, self.dt, rt.spec.initial.speed
            )
            rt.flown += flown
            if rt.done and rt.spec.behavior is Behavior.SCRIPTED:
                rt.state = replace(rt.state, speed=0.0)
        elif rt.polyline:
            # finished scripted route: hover at the last waypoint
            rt.state = replace(rt.state, speed=0.0, observed_at=now + self.dt)
        else:
            rt.state = apply_command(
                rt.state,
                VelocityCommand(rt.state.heading, rt.state.speed, rt.state.position, 0.0, CommandReason.HOLD),
                rt.spec.props, self.dt, self.config.max_accel_mps2,
            )
            rt.flown += _dist3(before, rt.state.position)

    # --- results -----------------------------------------------------------

    def metrics(self) -> Metrics:
        m = self.monitor.metrics
        m.completed_route = all(rt.done for rt in self.flights.values() if rt.spec.behavior is Behavior.DACM)
        for icao, rt in sorted(self.flights.items()):
            if rt.spec.behavior is Behavior.DACM and rt.polyline:
                planned = polyline_length(rt.polyline)
                m.additional_path_m[icao] = rt.flown + rt.planned_remainder() - planned
        return m


def _dist3(a: GeoPoint, b: GeoPoint) -> float:
    return float(np.linalg.norm(to_enu(b, a)))


def run_scenario(
    scenario: Scenario,
    live: "queue.Queue[bytes | str] | None" = None,
    on_tick: Callable[[World], None] | None = None,
) -> tuple[TraceLog, Metrics]:
    world = World(scenario, live)
    while True:
        running = world.step()
        if on_tick is not None:
            on_tick(world)
        if not running:
            break
    return world.trace, world.metrics()
