"""Trace log: per-tick records plus deterministic file serialisation."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..avoidance import Advisory, VelocityCommand
from ..ec_ingest import TrackPoint
from ..zones import ConflictAssessment, ZoneSet
from .metrics import Metrics

TRACE_COLUMNS = (
    "tick", "time", "icao", "behavior", "lat", "lon", "alt_m", "heading", "speed_mps",
    "ict_m", "pct_m", "phase", "assessments", "command",
)


def _f(x: float, nd: int) -> str:
    return f"{x:.{nd}f}"


def encode_assessments(items: list[ConflictAssessment]) -> str:
    parts = []
    for a in sorted(items, key=lambda a: a.other_icao):
        flag = "I" if a.in_icrz else ("P" if a.in_pcrz else "-")
        pc = "" if a.pc is None else _f(a.pc, 6)
        parts.append(f"{a.other_icao}:{_f(a.direct_distance_m, 3)}:{pc}:{flag}")
    return ";".join(parts)


def encode_command(cmd: VelocityCommand | None) -> str:
    if cmd is None:
        return ""
    tail = "!" if cmd.best_effort else ""
    return f"{cmd.reason.value}:{_f(cmd.new_heading, 3)}:{_f(cmd.new_speed, 3)}:{_f(cmd.vertical_move, 3)}{tail}"


@dataclass
class TraceLog:
    header: dict[str, Any] = field(default_factory=dict)
    rows: list[tuple] = field(default_factory=list)
    advisories: list[dict] = field(default_factory=list)
    paths: dict[str, list[tuple[float, float, float]]] = field(default_factory=dict)

    def record(
        self,
        tick: int,
        time: float,
        tp: TrackPoint,
        behavior: str,
        zone: ZoneSet,
        phase: str = "",
        assessments: list[ConflictAssessment] | None = None,
        command: VelocityCommand | None = None,
    ) -> None:
        p = tp.position
        self.rows.append((
            tick, _f(time, 3), tp.icao, behavior,
            _f(p.lat, 9), _f(p.lon, 9), _f(p.alt, 3), _f(tp.heading, 3), _f(tp.speed, 3),
            _f(zone.ict_radius_m, 3), _f(zone.pct_radius_m, 3), phase,
            encode_assessments(assessments or []), encode_command(command),
        ))
        self.paths.setdefault(tp.icao, []).append((round(p.lon, 9), round(p.lat, 9), round(p.alt, 3)))

    def advise(self, tick: int, adv: Advisory) -> None:
        self.advisories.append(adv.to_record(tick))

    def csv_text(self) -> str:
        buf = io.StringIO()
        for key, value in self.header.items():
            buf.write(f"# {key}: {json.dumps(value, sort_keys=True, separators=(',', ':'))}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        writer.writerows(self.rows)
        return buf.getvalue()

    def geojson(self) -> dict:
        features = []
        for icao in sorted(self.paths):
            coords = [list(c) for c in self.paths[icao]]
            geom = {"type": "LineString", "coordinates": coords} if len(coords) > 1 else {
                "type": "Point", "coordinates": coords[0]}
            features.append({"type": "Feature", "properties": {"icao": icao}, "geometry": geom})
        return {"type": "FeatureCollection", "features": features}


def write_outputs(out_dir: str | Path, trace: TraceLog, metrics: Metrics) -> dict[str, Path]:
    """Write trace.csv, trace.geojson, advisories.jsonl and metrics.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "trace": out / "trace.csv",
        "geojson": out / "trace.geojson",
        "advisories": out / "advisories.jsonl",
        "metrics": out / "metrics.json",
    }
    files["trace"].write_text(trace.csv_text(), encoding="utf-8")
    files["geojson"].write_text(json.dumps(trace.geojson(), sort_keys=True) + "\n", encoding="utf-8")
    files["advisories"].write_text(
        "".join(json.dumps(a, sort_keys=True) + "\n" for a in trace.advisories), encoding="utf-8"
    )
    files["metrics"].write_text(json.dumps(metrics.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return files
