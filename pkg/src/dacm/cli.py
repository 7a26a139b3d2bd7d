"""Command-line entry points: ``dacm run``, ``dacm replay`` and ``dacm listen``.

Exit codes: 0 on completion, 1 on I/O or socket failure, 2 when the
scenario, replay file or configuration is invalid, 3 when ``--fail-on-nmac``
is set and the run recorded a near mid-air collision.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import queue
import socket
import sys
import threading
import time
from pathlib import Path
from typing import Sequence, TextIO

from .avoidance import AircraftProperties
from .config import KEYS, resolve
from .ec_ingest import DEFAULT_PORT, ReplayFormatError, bind_udp, read_replay, udp_source
from .errors import DacmError, ScenarioError
from .simulator.metrics import Metrics
from .simulator.scenario import Behavior, FlightSpec, Scenario, load_scenario
from .simulator.trace import write_outputs
from .simulator.world import World, run_scenario

log = logging.getLogger("dacm")

EXIT_OK = 0
EXIT_IO = 1
EXIT_INVALID = 2
EXIT_NMAC = 3

_TYPES = {"float": float, "int": int, "str": str}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("engine configuration (one flag per config key)")
    for key, kind in KEYS.items():
        flag = "--" + key.replace("_", "-")
        if kind == "bool":
            group.add_argument(flag, dest=key, action=argparse.BooleanOptionalAction, default=argparse.SUPPRESS)
        else:
            group.add_argument(flag, dest=key, type=_TYPES[kind], default=argparse.SUPPRESS, metavar=kind.upper())


def _overrides(args: argparse.Namespace) -> dict:
    return {k: getattr(args, k) for k in KEYS if hasattr(args, k)}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dacm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="mode", required=True)

    run = sub.add_parser("run", help="run a scenario file")
    run.add_argument("scenario", type=Path)
    run.add_argument("-o", "--out", type=Path, default=Path("out"), help="output directory")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--fail-on-nmac", action="store_true")
    _add_config_flags(run)

    rep = sub.add_parser("replay", help="feed a recorded EC log through the engine")
    rep.add_argument("replay_file", type=Path)
    rep.add_argument("--me", required=True, help="ICAO of the host drone in the log")
    rep.add_argument("--scenario", type=Path, default=None, help="take tick, fence, config and props from here")
    rep.add_argument("-o", "--out", type=Path, default=Path("out"))
    rep.add_argument("--seed", type=int, default=None)
    rep.add_argument("--fail-on-nmac", action="store_true")
    _add_config_flags(rep)

    lis = sub.add_parser("listen", help="ingest live EC datagrams over UDP")
    lis.add_argument("--host", default="0.0.0.0")
    lis.add_argument("--port", type=int, default=DEFAULT_PORT)
    lis.add_argument("--me", default=None, help="ICAO of the host drone (enables the policy)")
    lis.add_argument("--tick-dt", type=float, default=0.5)
    lis.add_argument("--snapshot-every", type=int, default=20, help="dump known traffic every N ticks")
    lis.add_argument("--heartbeat-s", type=float, default=5.0)
    lis.add_argument("--duration", type=float, default=None, help="stop after this many seconds")
    lis.add_argument("-o", "--out", type=Path, default=None, help="write traces here on shutdown")
    lis.add_argument("--seed", type=int, default=0)
    _add_config_flags(lis)
    return parser


def _finish(out: Path, trace, metrics: Metrics, fail_on_nmac: bool, stdout: TextIO) -> int:
    try:
        files = write_outputs(out, trace, metrics)
    except OSError as exc:
        print(f"error: cannot write outputs: {exc}", file=sys.stderr)
        return EXIT_IO
    summary = metrics.to_dict()
    print(
        f"done: nmac={summary['nmac_count']} well_clear={summary['well_clear_violations']} "
        f"maneuvers={summary['maneuver_count']} trace={files['trace']}",
        file=stdout,
    )
    if fail_on_nmac and metrics.nmac_count > 0:
        return EXIT_NMAC
    return EXIT_OK


def cmd_run(args: argparse.Namespace, stdout: TextIO = sys.stdout) -> int:
    scenario = load_scenario(args.scenario, _overrides(args))
    if args.seed is not None:
        scenario = dataclasses.replace(scenario, seed=args.seed)
    trace, metrics = run_scenario(scenario)
    return _finish(args.out, trace, metrics, args.fail_on_nmac, stdout)


def replay_scenario(
    path: Path, me: str, base: Scenario | None = None, overrides: dict | None = None
) -> Scenario:
    """Turn a replay log into a scenario of replayed flights hosting ``me``."""
    me = me.upper()
    try:
        records = [m for _, m in read_replay(path)]
    except OSError as exc:
        raise ScenarioError(f"cannot read replay file: {exc}") from None
    except ReplayFormatError as exc:
        raise ScenarioError(f"{path.name}: {exc.cause}", "replay_file", exc.line) from None
    config = base.config if base is not None else resolve(flag_values=overrides)
    tick_dt = base.tick_dt if base is not None else 0.5
    sid = base.id if base is not None else f"replay:{path.name}"
    fence = base.fence if base is not None else None
    seed = base.seed if base is not None else 0
    if not records:
        return Scenario(sid, (), tick_dt=tick_dt, duration=tick_dt, seed=seed, config=config, fence=fence,
                        overrides=dict(overrides or {}))
    icaos = sorted({m.icao for m in records})
    if me not in icaos:
        raise ScenarioError(f"--me {me} does not appear in {path}", "me")
    props = {f.icao: f.props for f in base.flights} if base is not None else {}
    flights = tuple(
        FlightSpec(
            icao,
            Behavior.REPLAY,
            props.get(icao, AircraftProperties()),
            records=tuple(m for m in records if m.icao == icao),
            host=icao == me,
        )
        for icao in icaos
    )
    first = min(m.epoch for m in records)
    last = max(m.epoch for m in records)
    return Scenario(
        sid, flights, tick_dt=tick_dt, duration=(last - first) + config.feed_latency_s + tick_dt,
        seed=seed, config=config, fence=fence, start_epoch=first, overrides=dict(overrides or {}),
    )


def cmd_replay(args: argparse.Namespace, stdout: TextIO = sys.stdout) -> int:
    overrides = _overrides(args)
    base = load_scenario(args.scenario, overrides) if args.scenario is not None else None
    scenario = replay_scenario(args.replay_file, args.me, base, overrides)
    if args.seed is not None:
        scenario = dataclasses.replace(scenario, seed=args.seed)
    trace, metrics = run_scenario(scenario)
    return _finish(args.out, trace, metrics, args.fail_on_nmac, stdout)


def _snapshot_line(world: World) -> str:
    tracks = [
        {
            "icao": m.icao,
            "epoch": m.epoch,
            "lat": m.lat,
            "lon": m.lon,
            "alt_ft": m.alt_ft,
            "heading": m.heading,
            "speed_kn": m.speed_kn,
            "callsign": m.callsign,
        }
        for _, m in sorted(world.last_messages.items())
    ]
    stats = world.ingest_stats
    return json.dumps(
        {"snapshot": world.tick, "received": stats.received, "dropped": stats.dropped, "tracks": tracks},
        sort_keys=True,
    )


def cmd_listen(
    args: argparse.Namespace,
    stdout: TextIO = sys.stdout,
    stop: threading.Event | None = None,
) -> int:
    stop = stop or threading.Event()
    try:
        sock = bind_udp(args.host, args.port)
    except OSError as exc:
        print(f"error: cannot bind {args.host}:{args.port}: {exc}", file=sys.stderr)
        return EXIT_IO
    config = resolve(flag_values=_overrides(args))
    flights = ()
    if args.me:
        flights = (FlightSpec(args.me.upper(), Behavior.LIVE, AircraftProperties(), host=True),)
    duration = args.duration if args.duration is not None else 10.0 * 365 * 86400
    scenario = Scenario(
        "live", flights, tick_dt=args.tick_dt, duration=duration, seed=args.seed, config=config,
        start_epoch=time.time(), overrides=_overrides(args),
    )
    inbox: "queue.Queue[bytes]" = queue.Queue()

    def receive():
        for raw in udp_source(stop=stop, sock=sock):
            if raw is not None:
                inbox.put(raw)

    reader = threading.Thread(target=receive, name="dacm-udp", daemon=True)
    reader.start()

    adv_sock = None
    if config.advisory_port > 0:
        adv_sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)

    world = World(scenario, live=inbox)
    sent = 0
    wall0 = time.monotonic()
    last_beat = wall0
    log.info("listening on %s:%d", args.host, args.port)
    print(f"listening on {args.host}:{sock.getsockname()[1]}", file=stdout, flush=True)
    try:
        while not stop.is_set():
            running = world.step()
            for rec in world.trace.advisories[sent:]:
                line = json.dumps(rec, sort_keys=True)
                print(line, file=stdout, flush=True)
                if adv_sock is not None:
                    adv_sock.sendto((line + "\n").encode(), ("127.0.0.1", config.advisory_port))
            sent = len(world.trace.advisories)
            if args.snapshot_every > 0 and world.tick > 0 and world.tick % args.snapshot_every == 0:
                print(_snapshot_line(world), file=stdout, flush=True)
            now = time.monotonic()
            if now - last_beat >= args.heartbeat_s:
                stats = world.ingest_stats
                print(
                    f"heartbeat tick={world.tick} received={stats.received} dropped={stats.dropped} "
                    f"tracks={len(world.last_messages)}",
                    file=stdout, flush=True,
                )
                last_beat = now
            if not running:
                break
            delay = wall0 + world.tick * world.dt - time.monotonic()
            if delay > 0:
                stop.wait(delay)
    except KeyboardInterrupt:
        pass
    finally:
        stop.set()
        reader.join(timeout=2.0)
        if adv_sock is not None:
            adv_sock.close()
    # drain whatever arrived during shutdown
    if not inbox.empty():
        world.finished = False
        world.step()
    print(_snapshot_line(world), file=stdout, flush=True)
    if args.out is not None:
        return _finish(args.out, world.trace, world.metrics(), False, stdout)
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    handlers = {"run": cmd_run, "replay": cmd_replay, "listen": cmd_listen}
    try:
        return handlers[args.mode](args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (KeyError, ValueError) as exc:
        # configuration problems (bad DACM_CONFIG file, out-of-range flag)
        print(f"error: {str(exc).strip(chr(39))}", file=sys.stderr)
        return EXIT_INVALID
    except DacmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
