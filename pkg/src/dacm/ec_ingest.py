"""Electronic-conspicuity feed: record parsing, latency compensation and the
datagram ingest loop.

Wire format, one record per datagram (or per line in a replay file)::

    epoch,icao,receiver,lat,lon,alt_ft,heading,speed_kn,callsign
"""

from __future__ import annotations

import logging
import math
import queue
import re
import socket
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Iterator

from .errors import MalformedFieldError, StaleMessageError, TruncatedRecordError
from .geodesy import FT_TO_M, KN_TO_MPS, GeoPoint, destination_point, normalize_lon

log = logging.getLogger(__name__)

COLUMNS = (
    "epoch",
    "transponder",
    "receiver",
    "latitude",
    "longitude",
    "altitude",
    "heading",
    "speed",
    "callsign",
)
DEFAULT_PORT = 2947
DEFAULT_STALENESS_S = 10.0

_ICAO_RE = re.compile(r"^[0-9A-F]{6}$")
_RECEIVER_RE = re.compile(r"^[A-Za-z0-9_-]{1,16}$")
_CALLSIGN_RE = re.compile(r"^[A-Za-z0-9 _-]{0,8}$")


@dataclass(frozen=True)
class EcMessage:
    epoch: float
    icao: str
    receiver: str
    lat: float
    lon: float
    alt_ft: float
    heading: float
    speed_kn: float
    callsign: str = ""


@dataclass(frozen=True)
class TrackPoint:
    icao: str
    position: GeoPoint
    heading: float
    speed: float
    observed_at: float
    latency: float = 0.0
    callsign: str = ""

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError(f"negative speed for {self.icao}")
        if self.latency < 0:
            raise ValueError(f"negative latency for {self.icao}")


def _number(column: str, text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise MalformedFieldError(column, text, "not a number") from None
    if not math.isfinite(value):
        raise MalformedFieldError(column, text, "not finite")
    return value


def parse_message(raw: bytes | str) -> EcMessage:
    """Parse one wire record. Raises MalformedFieldError naming the column."""
    if isinstance(raw, bytes):
        try:
            raw = raw.decode("utf-8")
        except UnicodeDecodeError:
            raise MalformedFieldError("record", repr(raw[:32]), "not UTF-8") from None
    text = raw.rstrip("\r\n")
    parts = [p.strip() for p in text.split(",")]
    if len(parts) < len(COLUMNS):
        raise TruncatedRecordError(f"expected {len(COLUMNS)} fields, got {len(parts)}: {text!r}")
    if len(parts) > len(COLUMNS):
        raise MalformedFieldError("callsign", ",".join(parts[8:]), "too many fields")
    s_epoch, icao, receiver, s_lat, s_lon, s_alt, s_hdg, s_spd, callsign = parts

    # identity first: a record with a bad address is useless whatever else it holds
    icao = icao.upper()
    if not _ICAO_RE.match(icao):
        raise MalformedFieldError("transponder", parts[1], "not a 6-digit hex ICAO address")
    epoch = _number("epoch", s_epoch)
    if epoch <= 0:
        raise MalformedFieldError("epoch", s_epoch, "must be positive")
    if not _RECEIVER_RE.match(receiver):
        raise MalformedFieldError("receiver", receiver)
    lat = _number("latitude", s_lat)
    if not -90 <= lat <= 90:
        raise MalformedFieldError("latitude", s_lat, "out of range")
    lon = _number("longitude", s_lon)
    if not -180 <= lon <= 180:
        raise MalformedFieldError("longitude", s_lon, "out of range")
    alt_ft = _number("altitude", s_alt)
    heading = _number("heading", s_hdg)
    if not 0 <= heading < 360:
        raise MalformedFieldError("heading", s_hdg, "out of range")
    speed = _number("speed", s_spd)
    if speed < 0:
        raise MalformedFieldError("speed", s_spd, "negative")
    if not _CALLSIGN_RE.match(callsign):
        raise MalformedFieldError("callsign", callsign)
    return EcMessage(epoch, icao, receiver, lat, normalize_lon(lon), alt_ft, heading, speed, callsign)


def _fmt(x: float) -> str:
    if float(x).is_integer():
        return str(int(x))
    return repr(float(x))


def format_message(msg: EcMessage) -> str:
    """Canonical wire form (no trailing newline)."""
    return ",".join([
        _fmt(msg.epoch),
        msg.icao,
        msg.receiver,
        _fmt(msg.lat),
        _fmt(msg.lon),
        _fmt(msg.alt_ft),
        _fmt(msg.heading),
        _fmt(msg.speed_kn),
        msg.callsign,
    ])


def compensate_latency(
    msg: EcMessage, now: float, staleness_limit: float = DEFAULT_STALENESS_S
) -> TrackPoint:
    """Dead-reckon a message forward to ``now`` and convert to SI units.

    Straight line at constant speed and heading; altitude is held.
    """
    latency = max(0.0, now - msg.epoch)
    if latency > staleness_limit:
        raise StaleMessageError(latency, staleness_limit)
    speed = msg.speed_kn * KN_TO_MPS
    origin = GeoPoint(msg.lat, msg.lon, msg.alt_ft * FT_TO_M)
    position = destination_point(origin, msg.heading, speed * latency)
    return TrackPoint(
        icao=msg.icao,
        position=position,
        heading=msg.heading,
        speed=speed,
        observed_at=now,
        latency=latency,
        callsign=msg.callsign,
    )


def advance_track(tp: TrackPoint, now: float) -> TrackPoint:
    """Dead-reckon a track point to a later engine time."""
    dt = now - tp.observed_at
    if dt <= 0:
        return tp
    position = destination_point(tp.position, tp.heading, tp.speed * dt)
    return replace(tp, position=position, observed_at=now, latency=tp.latency + dt)


def message_from_track(tp: TrackPoint, epoch: float, receiver: str = "SIM") -> EcMessage:
    """Encode a track point as the message a transmitter would have sent."""
    return EcMessage(
        epoch=epoch,
        icao=tp.icao,
        receiver=receiver,
        lat=tp.position.lat,
        lon=tp.position.lon,
        alt_ft=tp.position.alt / FT_TO_M,
        heading=tp.heading,
        speed_kn=tp.speed / KN_TO_MPS,
        callsign=tp.callsign,
    )


# --- replay files ----------------------------------------------------------


class ReplayFormatError(ValueError):
    def __init__(self, line: int, cause: Exception):
        self.line = line
        self.cause = cause
        super().__init__(f"line {line}: {cause}")


def read_replay(path: str | Path) -> Iterator[tuple[int, EcMessage]]:
    """Yield ``(line_number, message)`` for every record in a replay file.

    Blank lines and ``#`` comments are skipped; malformed records raise with
    the line number prefixed.
    """
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            try:
                msg = parse_message(stripped)
            except (MalformedFieldError, TruncatedRecordError) as exc:
                raise ReplayFormatError(lineno, exc) from exc
            yield lineno, msg


# --- ingest loop -----------------------------------------------------------


@dataclass
class IngestStats:
    received: int = 0
    enqueued: int = 0
    dropped: int = 0
    last_error: str = ""


@dataclass
class Ingestor:
    """Turns raw datagrams into track points on an ordered queue.

    ``clock`` supplies the engine time used as the arrival time (DA_t).
    """

    sink: "queue.Queue[TrackPoint]"
    clock: Callable[[], float] | None = None
    staleness_limit: float = DEFAULT_STALENESS_S
    stats: IngestStats = field(default_factory=IngestStats)

    def handle(self, raw: bytes | str, now: float | None = None) -> TrackPoint | None:
        self.stats.received += 1
        if now is None:
            now = self.clock() if self.clock is not None else 0.0
        try:
            msg = parse_message(raw)
            tp = compensate_latency(msg, now, self.staleness_limit)
        except ValueError as exc:
            self.stats.dropped += 1
            self.stats.last_error = str(exc)
            log.debug("dropped datagram: %s", exc)
            return None
        self.sink.put(tp)
        self.stats.enqueued += 1
        return tp


def ingest_loop(
    source: Iterable[bytes | str],
    ingestor: Ingestor,
    stop: threading.Event | None = None,
) -> IngestStats:
    """Feed every datagram from ``source`` through ``ingestor``.

    ``source`` yields payloads in arrival order; ``None`` items are idle
    polls (socket timeouts) that keep the loop responsive to ``stop``.
    Returns when the source is exhausted or ``stop`` is set.
    """
    for raw in source:
        if stop is not None and stop.is_set():
            break
        if raw is None:
            continue
        ingestor.handle(raw)
    return ingestor.stats


def udp_source(
    host: str = "0.0.0.0",
    port: int = DEFAULT_PORT,
    stop: threading.Event | None = None,
    poll_s: float = 0.2,
    sock: socket.socket | None = None,
) -> Iterator[bytes | None]:
    """Yield datagram payloads from a bound UDP socket until ``stop`` is set.

    Binding happens before the first item is produced so that socket errors
    surface immediately (use :func:`bind_udp` to bind eagerly).
    """
    if sock is None:
        sock = bind_udp(host, port)
    sock.settimeout(poll_s)
    try:
        while stop is None or not stop.is_set():
            try:
                data, _addr = sock.recvfrom(65535)
            except socket.timeout:
                yield None
                continue
            yield data
    finally:
        sock.close()


def bind_udp(host: str = "0.0.0.0", port: int = DEFAULT_PORT) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    try:
        sock.bind((host, port))
    except OSError:
        sock.close()
        raise
    return sock
