from __future__ import annotations

import io
import json
import socket
import threading
import time
from pathlib import Path

import pytest

from dacm.cli import EXIT_INVALID, EXIT_IO, EXIT_NMAC, EXIT_OK, build_parser, cmd_listen, main
from dacm.ec_ingest import TrackPoint, format_message, message_from_track
from dacm.geodesy import GeoPoint, destination_point

ROOT = Path(__file__).resolve().parents[1]
HEAD_ON = ROOT / "scenarios" / "head_on.toml"
ROW1 = "1625226964,40717A,ADB,38.962361,1.590027,3150,242,202,EXS19TW"
ROW2 = "1625226965,406DF4,ADB,56.53697,-6.26629,7000,126,150,GHIAL"
T0 = 1_625_226_964.0
O = GeoPoint(53.8, -2.8, 150.0)


def test_run_writes_outputs(tmp_path):
    rc = main(["run", str(HEAD_ON), "-o", str(tmp_path)])
    assert rc == EXIT_OK
    for name in ("trace.csv", "trace.geojson", "advisories.jsonl", "metrics.json"):
        assert (tmp_path / name).exists()
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert metrics["maneuver_count"] >= 1


def test_fail_on_nmac_without_ca(tmp_path):
    rc = main(["run", str(HEAD_ON), "-o", str(tmp_path), "--no-ca-enabled", "--fail-on-nmac"])
    assert rc == EXIT_NMAC


def test_malformed_scenario_names_key(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text(HEAD_ON.read_text().replace('id = "head-on"', 'id = "head-on"\nbogus = 1'))
    rc = main(["run", str(bad), "-o", str(tmp_path / "out")])
    assert rc == EXIT_INVALID
    err = capsys.readouterr().err
    assert "bogus" in err and "line 5" in err
    assert not (tmp_path / "out").exists()


def test_missing_scenario_file(tmp_path):
    assert main(["run", str(tmp_path / "none.toml"), "-o", str(tmp_path)]) == EXIT_INVALID


def test_flag_out_of_range(tmp_path, capsys):
    rc = main(["run", str(HEAD_ON), "-o", str(tmp_path), "--telemetry-alpha", "2"])
    assert rc == EXIT_INVALID
    assert "telemetry_alpha" in capsys.readouterr().err


def test_flags_mirror_config_keys():
    args = build_parser().parse_args(
        ["run", "x.toml", "--pctd-s", "6", "--ictd-s", "3", "--moi-radius-m", "1000", "--advisory-port", "9999",
         "--seed", "4", "--fail-on-nmac"]
    )
    assert (args.pctd_s, args.ictd_s, args.moi_radius_m, args.advisory_port) == (6.0, 3.0, 1000.0, 9999)
    assert args.seed == 4 and args.fail_on_nmac


def test_overrides_in_trace_header(tmp_path):
    rc = main(["run", str(HEAD_ON), "-o", str(tmp_path), "--pctd-s", "6", "--ictd-s", "3", "--seed", "7"])
    assert rc == EXIT_OK
    text = (tmp_path / "trace.csv").read_text()
    assert '# overrides: {"ictd_s":3.0,"pctd_s":6.0}' in text
    assert "# seed: 7" in text


def stream(icao, start, heading, speed, n, t0=T0):
    return [
        format_message(message_from_track(
            TrackPoint(icao, destination_point(start, heading, speed * k), heading, speed, t0 + k), t0 + k))
        for k in range(n)
    ]


def test_replay_clean_pass(tmp_path):
    lines = stream("AAAAAA", O, 0.0, 30.0, 20) + stream("BBBBBB", destination_point(O, 90.0, 8000.0), 0.0, 30.0, 20)
    log = tmp_path / "clean.csv"
    log.write_text("\n".join(sorted(lines, key=lambda s: s.split(",")[0])) + "\n")
    rc = main(["replay", str(log), "--me", "AAAAAA", "-o", str(tmp_path / "out")])
    assert rc == EXIT_OK
    assert (tmp_path / "out" / "advisories.jsonl").read_text() == ""


def test_replay_converging_intruder(tmp_path):
    # intruder closes from 1.2 km at 60 m/s: d crosses pct_sum (~360 m) mid-stream
    lines = stream("AAAAAA", O, 90.0, 10.0, 20) + stream("CCCCCC", destination_point(O, 0.0, 1200.0), 180.0, 60.0, 20)
    log = tmp_path / "conv.csv"
    log.write_text("\n".join(lines) + "\n")
    rc = main(["replay", str(log), "--me", "aaaaaa", "-o", str(tmp_path / "out")])
    assert rc == EXIT_OK
    recs = [json.loads(x) for x in (tmp_path / "out" / "advisories.jsonl").read_text().splitlines()]
    assert any(r["tier"] == "ProbableRisk" and r["other"] == "CCCCCC" for r in recs)


def test_replay_empty_file(tmp_path):
    log = tmp_path / "empty.csv"
    log.write_text("")
    rc = main(["replay", str(log), "--me", "AAAAAA", "-o", str(tmp_path / "out")])
    assert rc == EXIT_OK
    text = (tmp_path / "out" / "trace.csv").read_text()
    assert [line for line in text.splitlines() if not line.startswith("#")] == [
        "tick,time,icao,behavior,lat,lon,alt_m,heading,speed_mps,ict_m,pct_m,phase,assessments,command"
    ]


def test_replay_format_error_has_line(tmp_path, capsys):
    log = tmp_path / "bad.csv"
    log.write_text(f"{ROW1}\n{ROW2}\n1625226966,ZZ,ADB,1,1,1,1,1,X\n")
    rc = main(["replay", str(log), "--me", "40717A", "-o", str(tmp_path / "out")])
    assert rc == EXIT_INVALID
    err = capsys.readouterr().err
    assert "line 3" in err and "transponder" in err


def test_replay_unknown_host(tmp_path):
    log = tmp_path / "r.csv"
    log.write_text(f"{ROW1}\n")
    assert main(["replay", str(log), "--me", "ABCDEF", "-o", str(tmp_path)]) == EXIT_INVALID


class Listener:
    """Runs ``dacm listen`` on an ephemeral port in a background thread."""

    def __init__(self, *extra):
        args = build_parser().parse_args(
            ["listen", "--host", "127.0.0.1", "--port", "0", "--tick-dt", "0.05", "--snapshot-every", "4",
             "--heartbeat-s", "0.2", *extra]
        )
        self.out = io.StringIO()
        self.stop = threading.Event()
        self.rc = None
        self.thread = threading.Thread(target=self._run, args=(args,), daemon=True)

    def _run(self, args):
        self.rc = cmd_listen(args, self.out, self.stop)

    def __enter__(self):
        self.thread.start()
        deadline = time.monotonic() + 5
        while "listening on" not in self.out.getvalue():
            assert time.monotonic() < deadline, "listener did not start"
            time.sleep(0.01)
        first = self.out.getvalue().splitlines()[0]
        self.port = int(first.rsplit(":", 1)[1])
        return self

    def send(self, payload: bytes) -> None:
        with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
            s.sendto(payload, ("127.0.0.1", self.port))

    def __exit__(self, *exc):
        self.stop.set()
        self.thread.join(timeout=5)

    def lines(self):
        return self.out.getvalue().splitlines()


def test_listen_heartbeat_only():
    with Listener() as lis:
        time.sleep(0.6)
    assert lis.rc == EXIT_OK
    beats = [x for x in lis.lines() if x.startswith("heartbeat")]
    assert beats and all("received=0" in b for b in beats)
    assert not any(x.startswith("{") and '"tier"' in x for x in lis.lines())


def test_listen_table_rows_in_snapshot():
    with Listener() as lis:
        lis.send(ROW1.encode())
        lis.send((ROW2 + "\n").encode())
        time.sleep(0.5)
    snaps = [json.loads(x) for x in lis.lines() if x.startswith('{"received"') or '"snapshot"' in x]
    last = snaps[-1]
    icaos = {t["icao"] for t in last["tracks"]}
    assert icaos == {"40717A", "406DF4"}
    row1 = next(t for t in last["tracks"] if t["icao"] == "40717A")
    assert (row1["lat"], row1["lon"], row1["alt_ft"], row1["callsign"]) == (38.962361, 1.590027, 3150.0, "EXS19TW")


def test_listen_malformed_counted():
    with Listener() as lis:
        lis.send(b"not,a,record")
        lis.send(b"\xff\xfe")
        lis.send(ROW1.encode())
        time.sleep(0.5)
    assert lis.rc == EXIT_OK
    last = [json.loads(x) for x in lis.lines() if '"snapshot"' in x][-1]
    assert last["received"] == 3
    assert last["dropped"] >= 2
    assert [t["icao"] for t in last["tracks"]] == ["40717A"]


def test_listen_bind_failure():
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
        args = build_parser().parse_args(["listen", "--host", "127.0.0.1", "--port", str(port)])
        assert cmd_listen(args, io.StringIO()) == EXIT_IO


def test_listen_duration_and_outputs(tmp_path):
    args = build_parser().parse_args(
        ["listen", "--host", "127.0.0.1", "--port", "0", "--tick-dt", "0.05", "--duration", "0.3",
         "-o", str(tmp_path)]
    )
    out = io.StringIO()
    assert cmd_listen(args, out) == EXIT_OK
    assert (tmp_path / "metrics.json").exists()


@pytest.mark.parametrize("argv", [[], ["bogus"], ["run"]])
def test_usage_errors(argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 2
