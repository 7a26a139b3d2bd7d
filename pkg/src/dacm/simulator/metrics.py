"""Run scoring against the manned-aviation separation standards."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping

from ..geodesy import FT_TO_M, GeoPoint, direct_distance, ground_distance, to_enu

NMAC_HORIZONTAL_M = 500 * FT_TO_M
NMAC_VERTICAL_M = 100 * FT_TO_M
WELL_CLEAR_HORIZONTAL_M = 2000 * FT_TO_M
WELL_CLEAR_VERTICAL_M = 250 * FT_TO_M


def is_nmac(a: GeoPoint, b: GeoPoint) -> bool:
    return ground_distance(a, b) < NMAC_HORIZONTAL_M and abs(a.alt - b.alt) < NMAC_VERTICAL_M


def is_well_clear_loss(a: GeoPoint, b: GeoPoint) -> bool:
    return ground_distance(a, b) < WELL_CLEAR_HORIZONTAL_M and abs(a.alt - b.alt) < WELL_CLEAR_VERTICAL_M


def pair_key(a: str, b: str) -> str:
    return "-".join(sorted((a, b)))


@dataclass
class Metrics:
    min_separation_m: dict[str, float] = field(default_factory=dict)
    additional_path_m: dict[str, float] = field(default_factory=dict)
    nmac_count: int = 0
    well_clear_violations: int = 0
    pcrz_events: int = 0
    icrz_events: int = 0
    maneuver_count: int = 0
    completed_route: bool = True

    def to_dict(self) -> dict:
        return {
            "min_separation_m": {k: round(v, 6) for k, v in sorted(self.min_separation_m.items())},
            "additional_path_m": {k: round(v, 6) for k, v in sorted(self.additional_path_m.items())},
            "nmac_count": self.nmac_count,
            "well_clear_violations": self.well_clear_violations,
            "pcrz_events": self.pcrz_events,
            "icrz_events": self.icrz_events,
            "maneuver_count": self.maneuver_count,
            "completed_route": self.completed_route,
        }


def _interval_samples(a0, a1, b0, b1) -> list[tuple[float, float]]:
    """(horizontal, vertical) separations at the interval ends and at the
    horizontal and 3D closest approaches, assuming straight-line motion."""
    r0 = to_enu(b0, a0) - to_enu(a0, a0)
    r1 = to_enu(b1, a0) - to_enu(a1, a0)
    dr = r1 - r0
    svals = [0.0, 1.0]
    for dims in (slice(0, 2), slice(0, 3)):
        denom = float(dr[dims] @ dr[dims])
        if denom > 0:
            svals.append(min(1.0, max(0.0, -float(r0[dims] @ dr[dims]) / denom)))
    out = []
    for s in svals:
        r = r0 + s * dr
        out.append((math.hypot(r[0], r[1]), abs(r[2])))
    return out


@dataclass
class SeparationMonitor:
    """Tracks per-pair minimum distance and counts NMAC / well-clear losses
    as events: a pair registers once per contiguous period of violation.

    Between two observations each aircraft is assumed to move in a straight
    line, so a fast pass that falls between ticks is still caught.
    """

    metrics: Metrics = field(default_factory=Metrics)
    _in_nmac: set[str] = field(default_factory=set)
    _in_wc: set[str] = field(default_factory=set)
    _last: dict[str, GeoPoint] = field(default_factory=dict)

    def observe(self, positions: Mapping[str, GeoPoint]) -> None:
        m = self.metrics
        for a, b in itertools.combinations(sorted(positions), 2):
            key = pair_key(a, b)
            pa, pb = positions[a], positions[b]
            if a in self._last and b in self._last:
                samples = _interval_samples(self._last[a], pa, self._last[b], pb)
            else:
                samples = [(ground_distance(pa, pb), abs(pa.alt - pb.alt))]
            d = min(min(math.hypot(h, v) for h, v in samples), direct_distance(pa, pb))
            if d < m.min_separation_m.get(key, float("inf")):
                m.min_separation_m[key] = d
            nmac = any(h < NMAC_HORIZONTAL_M and v < NMAC_VERTICAL_M for h, v in samples)
            wc = any(h < WELL_CLEAR_HORIZONTAL_M and v < WELL_CLEAR_VERTICAL_M for h, v in samples)
            if nmac and key not in self._in_nmac:
                m.nmac_count += 1
            if wc and key not in self._in_wc:
                m.well_clear_violations += 1
            (self._in_nmac.add if nmac else self._in_nmac.discard)(key)
            (self._in_wc.add if wc else self._in_wc.discard)(key)
        self._last = dict(positions)


@dataclass
class RiskEventCounter:
    """Rising-edge counts of PcRz / IcRz entries per (host, other) pair."""

    pcrz: set[tuple[str, str]] = field(default_factory=set)
    icrz: set[tuple[str, str]] = field(default_factory=set)

    def observe(self, host: str, assessments, metrics: Metrics) -> None:
        now_p = {(host, a.other_icao) for a in assessments if a.in_pcrz}
        now_i = {(host, a.other_icao) for a in assessments if a.in_icrz}
        mine_p = {k for k in self.pcrz if k[0] == host}
        mine_i = {k for k in self.icrz if k[0] == host}
        metrics.pcrz_events += len(now_p - mine_p)
        metrics.icrz_events += len(now_i - mine_i)
        self.pcrz = (self.pcrz - mine_p) | now_p
        self.icrz = (self.icrz - mine_i) | now_i
