import json
import time

import pytest

from hermes.cli import build_parser, main
from hermes.e2e import LocalDeployment
from hermes.protocol.wire import MIMC


def run(capsys, *argv):
    rc = main([str(a) for a in argv])
    out = capsys.readouterr().out
    return rc, out


def last_json(out):
    start = out.rfind("\n{") + 1 if not out.startswith("{") else 0
    return json.loads(out[start:])


@pytest.fixture
def dep(tmp_path):
    d = LocalDeployment(tmp_path / "dep", session_timeout=5.0, backends=(MIMC,)).start()
    yield d
    d.stop()


def test_parser_lists_subcommands():
    help_text = build_parser().format_help()
    for name in ("ledger", "dealer", "server", "vm-init", "owner", "consumer", "vehicle",
                 "run-e2e", "bench", "audit"):
        assert name in help_text


def test_booking_walkthrough(dep, tmp_path, capsys):
    servers = ",".join(dep.urls)
    rc, out = run(capsys, "dealer", "--tape", dep.tape_dir, "--backend", "mimc", "--rows", 2,
                  "--count", 2, "--seed", 5)
    assert rc == 0 and last_json(out)["indices"] == [0, 1]

    rc, out = run(capsys, "vm-init", "--owner-id", "alice", "--vehicles", 2, "--out", tmp_path / "vm",
                  "--servers", servers)
    vehicles = last_json(out)["vehicles"]
    assert rc == 0 and len(vehicles) == 2

    rc, out = run(capsys, "owner", "init", "--owner-id", "alice", "--out", tmp_path / "owner.json")
    owner_public = last_json(out)["public"]
    rc, _ = run(capsys, "consumer", "init", "--subject", "bob", "--out", tmp_path / "bob.json",
                "--cert-out", tmp_path / "bob.cert")
    assert rc == 0

    now = int(time.time())
    rc, _ = run(capsys, "owner", "book", "--owner", tmp_path / "owner.json", "--vehicle", vehicles[1],
                "--cert", tmp_path / "bob.cert", "--booking-id", 9, "--start", now - 10,
                "--out", tmp_path / "bd.json")
    assert rc == 0
    rc, out = run(capsys, "consumer", "keys", "--consumer", tmp_path / "bob.json", "--bd", tmp_path / "bd.json",
                  "--servers", servers, "--out", tmp_path / "ack.json", "--session-out", tmp_path / "sess.json")
    assert rc == 0 and last_json(out)["counter"] == 1
    rc, out = run(capsys, "owner", "request", "--owner", tmp_path / "owner.json", "--bd", tmp_path / "bd.json",
                  "--ack", tmp_path / "ack.json", "--servers", servers)
    assert rc == 0
    req = last_json(out)
    rc, out = run(capsys, "consumer", "fetch", "--session", tmp_path / "sess.json", "--bd", tmp_path / "bd.json",
                  "--ledger", dep.ledger_url, "--ts", req["ts"], "--out", tmp_path / "token.json")
    assert rc == 0 and last_json(out)["vehicle_id"] == vehicles[1]

    access = ["vehicle", "access", "--vm", tmp_path / "vm" / "vm.json", "--vehicle", vehicles[1],
              "--owner-public", owner_public, "--token", tmp_path / "token.json",
              "--consumer", tmp_path / "bob.json", "--cert", tmp_path / "bob.cert"]
    rc, out = run(capsys, *access)
    decision = last_json(out)
    assert rc == 0 and decision["granted"] and decision["confirmation"]["verifies"]
    rc, out = run(capsys, *access, "--action", "start")
    assert rc == 1 and last_json(out)["reason"] == "action_not_permitted"

    # the consumer's counter moves forward on the next key request
    rc, out = run(capsys, "consumer", "keys", "--consumer", tmp_path / "bob.json", "--bd", tmp_path / "bd.json",
                  "--servers", servers, "--out", tmp_path / "ack2.json", "--session-out", tmp_path / "sess2.json")
    assert last_json(out)["counter"] == 2

    # audit: two server records open the booking, one does not
    sid = req["session_id"]
    records = [dep.party_dir(i) / "audit" / f"{sid}.p{i}.json" for i in range(3)]
    rc, out = run(capsys, "audit", "--session", sid, "--records", records[0], records[1],
                  "--owner-public", owner_public)
    assert rc == 0
    booking = last_json(out)["booking"]
    assert booking["booking_id"] == 9 and booking["vehicle_id"] == vehicles[1]
    rc, _ = run(capsys, "audit", "--session", sid, "--records", records[2], "--owner-public", owner_public)
    assert rc == 1


def test_bench_writes_json_and_csv(tmp_path, capsys):
    rc, out = run(capsys, "bench", "--vehicles", "1,2", "--backends", "mimc", "--throughput-seconds", 0,
                  "--out", tmp_path)
    assert rc == 0
    assert "mimc_rounds_invariant: pass" in out
    report = json.loads((tmp_path / "bench.json").read_text())
    assert report["schema"] == "hermes-bench/1"
    rows = report["deterministic"]["rows"]
    assert [r["n_vehicles"] for r in rows] == [1, 2]
    assert all(r["oracle_match"] for r in rows)
    lines = (tmp_path / "bench.csv").read_text().splitlines()
    assert lines[0].startswith("backend,n_vehicles,online_rounds")
    assert len(lines) == 3


def test_run_e2e_exit_codes(tmp_path, capsys):
    rc, out = run(capsys, "run-e2e", "--vehicles", 2, "--seed", 3, "--out", tmp_path / "ok")
    assert rc == 0 and "run-e2e ok" in out
    report = json.loads((tmp_path / "ok" / "e2e.json").read_text())
    assert report["exit_code"] == 0 and report["decision"] == "granted"
    rc, out = run(capsys, "run-e2e", "--vehicles", 2, "--seed", 3, "--tamper", "at", "--out", tmp_path / "bad")
    assert rc == 1 and "failed at step 4" in out
