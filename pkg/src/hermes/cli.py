"""Command-line driver: ``hermes <subcommand>``.

Role commands keep their state in small JSON files so a booking can be walked
through by hand:

    hermes ledger --listen 127.0.0.1:8700 --path ledger.jsonl
    hermes dealer --tape tapes --backend mimc --rows 4 --count 10
    hermes server --party 0 --listen 127.0.0.1:8800 --peers A,B,C --ledger URL ...
    hermes vm-init --owner-id alice --vehicles 4 --out vm --servers U0,U1,U2
    hermes owner init --owner-id alice --out owner.json
    hermes consumer init --subject bob --out consumer.json --cert-out cert.json
    hermes owner book --owner owner.json --vehicle ID --cert cert.json --booking-id 7 ...
    hermes consumer keys --consumer consumer.json --bd bd.json --servers ... --out ack.json
    hermes owner request --owner owner.json --bd bd.json --ack ack.json --servers ...
    hermes consumer fetch --session session.json --bd bd.json --ledger URL --out token.json
    hermes vehicle access --vm vm/vm.json --vehicle ID --owner-public HEX --token token.json ...
    hermes run-e2e | bench | audit
"""
from __future__ import annotations

import argparse
import json
import logging
import secrets
import signal
import sys
import threading
import time
from pathlib import Path


def _json_out(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _read_json(path: str) -> dict:
    return json.loads(Path(path).read_text())


def _write_json(path: str | Path, obj) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(obj, indent=2, sort_keys=True))


def _csv(value: str) -> list[str]:
    return [v for v in value.split(",") if v]


def _wait_forever(stop) -> None:
    done = threading.Event()
    signal.signal(signal.SIGTERM, lambda *a: done.set())
    try:
        while not done.wait(1.0):
            pass
    except KeyboardInterrupt:
        pass
    stop()


# ---------------------------------------------------------------------------
# infrastructure


def cmd_ledger(args) -> int:
    from .ledger import LedgerServer, LedgerStore
    host, _, port = args.listen.rpartition(":")
    server = LedgerServer(LedgerStore(args.path), host or "127.0.0.1", int(port)).start()
    print(f"ledger serving {server.url}", flush=True)
    _wait_forever(server.stop)
    return 0


def cmd_dealer(args) -> int:
    from .dealer import write_tapes
    written = write_tapes(args.tape, args.backend, args.rows, args.count, seed=args.seed,
                          m_blocks=args.m_blocks)
    _json_out({"backend": args.backend, "rows": args.rows, "indices": written})
    return 0


def cmd_server(args) -> int:
    from .server import ServerConfig, VsspServer
    handlers = [logging.FileHandler(args.log_file)] if args.log_file else [logging.StreamHandler()]
    logging.basicConfig(level=logging.INFO, handlers=handlers,
                        format=f"%(asctime)s party{args.party} %(name)s %(message)s")
    secret = bytes.fromhex(Path(args.link_secret_file).read_text().strip()) if args.link_secret_file else None
    cfg = ServerConfig(party_id=args.party, listen=args.listen, peers=_csv(args.peers),
                       ledger_url=args.ledger, db_path=args.db, tape_dir=args.tape,
                       seal_key_path=args.key, audit_dir=args.audit, backends=tuple(_csv(args.backend)),
                       workers=args.workers, session_timeout=args.timeout, link_secret=secret)
    server = VsspServer(cfg).start()
    print(f"party {args.party} serving {server.url}", flush=True)
    _wait_forever(server.stop)
    return 0


# ---------------------------------------------------------------------------
# vehicle manufacturer


def cmd_vm_init(args) -> int:
    from .protocol.crypto import SigningKey
    from .protocol.roles import VmDatabase, step_a_register
    from .server import ServerClient
    out = Path(args.out)
    vm_path = out / "vm.json"
    state = _read_json(str(vm_path)) if vm_path.exists() else {"vehicles": []}
    vm = VmDatabase()
    for v in state["vehicles"]:
        vm.add_vehicle(v["owner_id"], v["vehicle_id"], int(v["k_veh"], 16))
        vm.registered[(v["owner_id"], v["vehicle_id"])] = v["row_index"]
    rows: list[list] = [[], [], []]
    for _ in range(args.vehicles):
        vid = secrets.randbelow(2 ** 32 - 1) + 1
        while (args.owner_id, vid) in vm.rows:
            vid = secrets.randbelow(2 ** 32 - 1) + 1
        rec = vm.add_vehicle(args.owner_id, vid)
        obu_key = SigningKey.generate()
        new_rows = step_a_register(vm, args.owner_id, vid)
        for i, r in enumerate(new_rows):
            rows[i].append(r)
        state["vehicles"].append({"owner_id": args.owner_id, "vehicle_id": vid, "k_veh": f"{rec.k_veh:032x}",
                                  "row_index": new_rows[0].row_index,
                                  "obu_key": obu_key.private_bytes().hex(),
                                  "obu_public": obu_key.public_bytes().hex()})
    _write_json(vm_path, state)
    for i in range(3):
        _write_json(out / f"rows.p{i}.json", {"rows": [r.to_json() for r in rows[i]]})
    if args.servers:
        for url, rs in zip(_csv(args.servers), rows):
            ServerClient(url).register(rs)
    _json_out({"vm": str(vm_path), "vehicles": [v["vehicle_id"] for v in state["vehicles"]
                                                  if v["owner_id"] == args.owner_id]})
    return 0


# ---------------------------------------------------------------------------
# owner


def _owner_key(state: dict):
    from .protocol.crypto import SigningKey
    return SigningKey.from_private_bytes(state["scheme"], bytes.fromhex(state["private"]))


def _load_bd(path: str):
    from .protocol.booking import BookingDetails
    return BookingDetails.from_bytes(bytes.fromhex(_read_json(path)["bd"]))


def cmd_owner(args) -> int:
    from .protocol import messages as msg
    from .protocol.booking import ACTIONS, BookingDetails, Conditions
    from .protocol.crypto import Certificate, SigningKey
    from .protocol.roles import step1_owner
    from .server import submit_requests
    if args.action == "init":
        key = SigningKey.generate(args.scheme)
        _write_json(args.out, {"owner_id": args.owner_id, "scheme": args.scheme,
                               "private": key.private_bytes().hex(), "public": key.public_bytes().hex()})
        _json_out({"owner_id": args.owner_id, "public": key.public_bytes().hex()})
        return 0
    state = _read_json(args.owner)
    if args.action == "book":
        cert = Certificate.from_bytes(Path(args.cert).read_bytes())
        rights = 0
        for name in _csv(args.rights):
            rights |= ACTIONS[name]
        start = args.start if args.start is not None else int(time.time())
        bd = BookingDetails(cert.digest(), args.vehicle, args.location,
                            Conditions(start, start + args.duration), rights, args.booking_id)
        _write_json(args.out, {"bd": bd.to_bytes().hex()})
        _json_out({"booking_id": bd.booking_id, "vehicle_id": bd.vehicle_id})
        return 0
    if args.action == "revoke":
        bd = _load_bd(args.bd).revoked_copy()
        _write_json(args.out, {"bd": bd.to_bytes().hex()})
        _json_out({"booking_id": bd.booking_id, "revision": bd.conditions.revision})
        return 0
    # request
    bd = _load_bd(args.bd)
    ack = msg.from_json(_read_json(args.ack))
    reqs = step1_owner(bd, _owner_key(state), ack, state["owner_id"], args.backend)
    ts = submit_requests(_csv(args.servers), reqs)
    _json_out({"session_id": reqs[0]["session_id"].hex(), "ts": ts})
    return 0


# ---------------------------------------------------------------------------
# consumer


def cmd_consumer(args) -> int:
    from .mimc import CounterWatermark, SessionKeys
    from .protocol.crypto import Certificate, SigningKey
    from .protocol.roles import step1_consumer, step3_consumer
    from .protocol.wire import encode_ct
    from .server import ServerClient
    from .ledger import LedgerClient
    if args.action == "init":
        key = SigningKey.generate()
        cert = Certificate.issue(args.subject, key)
        Path(args.cert_out).write_bytes(cert.to_bytes())
        _write_json(args.out, {"subject": args.subject, "private": key.private_bytes().hex(),
                               "master_key": f"{secrets.randbits(128):032x}"})
        _json_out({"subject": args.subject, "cert": args.cert_out})
        return 0
    if args.action == "keys":
        state = _read_json(args.consumer)
        bd = _load_bd(args.bd)
        watermark = CounterWatermark(str(Path(args.consumer).with_suffix(".counter")))
        counter = watermark.value + 1
        pubs = [ServerClient(u).seal_public() for u in _csv(args.servers)]
        ack, keys = step1_consumer(int(state["master_key"], 16), counter, bd.booking_id, pubs,
                                   args.backend, watermark)
        _write_json(args.out, ack.to_json())
        _write_json(args.session_out, {"backend": args.backend, "counter": counter,
                                       "keys": [f"{k:x}" for k in (keys.k_enc, keys.k_tag_enc, keys.k_tag_mac)]})
        _json_out({"ack": args.out, "counter": counter})
        return 0
    # fetch
    sess = _read_json(args.session)
    keys = SessionKeys(*(int(k, 16) for k in sess["keys"]), sess["counter"])
    bd = _load_bd(args.bd)
    at, vid = step3_consumer(LedgerClient(args.ledger), keys, bd, sess["backend"], ts=args.ts,
                             timeout=args.wait)
    _write_json(args.out, {"backend": sess["backend"], "at": encode_ct(sess["backend"], at).hex(),
                           "vehicle_id": vid, "booking_id": bd.booking_id})
    _json_out({"token": args.out, "vehicle_id": vid})
    return 0


# ---------------------------------------------------------------------------
# vehicle


def cmd_vehicle(args) -> int:
    from .protocol.booking import ACTIONS
    from .protocol.crypto import Certificate, SigningKey
    from .protocol.roles import Obu, answer_challenge
    vm = _read_json(args.vm)
    rec = next((v for v in vm["vehicles"] if v["vehicle_id"] == args.vehicle), None)
    if rec is None:
        print(f"vehicle {args.vehicle} not in {args.vm}", file=sys.stderr)
        return 2
    token = _read_json(args.token)
    clock = (lambda: args.clock) if args.clock is not None else (lambda: int(time.time()))
    obu = Obu(rec["vehicle_id"], int(rec["k_veh"], 16), bytes.fromhex(args.owner_public),
              SigningKey.from_private_bytes("ed25519", bytes.fromhex(rec["obu_key"])), clock, token["backend"])
    for upd in args.update or []:
        obu.install_update(bytes.fromhex(_read_json(upd)["at"]))
    consumer = _read_json(args.consumer)
    ckey = SigningKey.from_private_bytes("ed25519", bytes.fromhex(consumer["private"]))
    cert = Certificate.from_bytes(Path(args.cert).read_bytes())
    nonce = obu.challenge()
    response = answer_challenge(ckey, token["booking_id"], nonce)
    d = obu.step4(bytes.fromhex(token["at"]), token["vehicle_id"], cert.to_bytes(), nonce, response,
                  ACTIONS[args.action])
    out = {"granted": d.granted, "reason": d.reason}
    if d.confirmation is not None:
        out["confirmation"] = {"ts_access": d.confirmation.ts_access,
                               "signature": d.confirmation.signature.hex(),
                               "verifies": d.confirmation.verify(d.booking, "ed25519",
                                                                 bytes.fromhex(rec["obu_public"]))}
    _json_out(out)
    return 0 if d.granted else 1


# ---------------------------------------------------------------------------
# orchestration, bench, audit


def cmd_run_e2e(args) -> int:
    from .e2e import run_e2e
    res = run_e2e(args.vehicles, args.backend, args.out, tamper=args.tamper,
                  revoke_after_publish=args.revoke_after_publish, seed=args.seed, mode=args.mode,
                  session_timeout=args.timeout)
    status = "ok" if res.exit_code == 0 else f"failed at step {res.step}"
    print(f"run-e2e {status}: {res.detail} (artifacts in {res.artifacts})")
    return res.exit_code


def cmd_bench(args) -> int:
    from .bench import sweep, write_report
    vehicles = [int(v) for v in _csv(args.vehicles)]
    report = sweep(vehicles, tuple(_csv(args.backends)), reps=args.reps, seed=args.seed,
                   throughput_seconds=args.throughput_seconds, parallelism=args.parallelism)
    jpath, cpath = write_report(report, args.out)
    checks = report["deterministic"]["checks"]
    for name in ("aes_and_formula_ok", "mimc_rounds_invariant", "mimc_rounds_in_window",
                 "mimc_bytes_affine", "aes_rounds_exceed_mimc"):
        if name in checks:
            print(f"{name}: {'pass' if checks[name] else 'FAIL'}")
    if "aes_and_formula" in checks:
        for n, v in checks["aes_and_formula"].items():
            print(f"aes n={n}: measured {v['measured']} ANDs, 159n+6400*27 = {v['formula_ours']}, "
                  f"159n+6400*28 = {v['formula_28']}")
    print(f"wrote {jpath} and {cpath}")
    ok = all(checks.get(k, True) for k in ("aes_and_formula_ok", "mimc_rounds_invariant"))
    return 0 if ok else 1


def cmd_audit(args) -> int:
    from .protocol.roles import AuditError, audit_reconstruct
    records = [_read_json(p) for p in args.records]
    owner_public = bytes.fromhex(args.owner_public)
    try:
        signed = audit_reconstruct(records, args.session, owner_public, args.scheme)
    except AuditError as exc:
        print(f"audit refused: {exc}", file=sys.stderr)
        return 1
    bd = signed.bd
    _json_out({"session_id": args.session, "verified": True, "booking": {
        "booking_id": bd.booking_id, "vehicle_id": bd.vehicle_id, "location": bd.location,
        "start": bd.conditions.start, "end": bd.conditions.end, "flags": bd.conditions.flags,
        "access_rights": bd.access_rights, "cert_hash": bd.cert_hash.hex()}})
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hermes", description="Vehicle access tokens over 3-party MPC")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ledger", help="run the public ledger service")
    p.add_argument("--listen", default="127.0.0.1:8700")
    p.add_argument("--path", default="ledger.jsonl")
    p.set_defaults(func=cmd_ledger)

    p = sub.add_parser("dealer", help="write preprocessing tapes for the servers")
    p.add_argument("--tape", required=True, help="tape directory shared layout")
    p.add_argument("--backend", choices=("mimc", "aes"), default="mimc")
    p.add_argument("--rows", type=int, default=4, help="largest owner row count the tapes cover")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--m-blocks", type=int, default=10)
    p.add_argument("--seed", default=None, help="reproducible tapes (testing only)")
    p.set_defaults(func=cmd_dealer)

    p = sub.add_parser("server", help="run one VSSP server")
    p.add_argument("--party", type=int, required=True, choices=(0, 1, 2))
    p.add_argument("--listen", required=True, help="control plane host:port")
    p.add_argument("--peers", required=True, help="data-plane host:port of parties 0,1,2")
    p.add_argument("--ledger", required=True)
    p.add_argument("--db", required=True)
    p.add_argument("--tape", required=True)
    p.add_argument("--key", required=True, help="seal key file (created if missing)")
    p.add_argument("--audit", required=True)
    p.add_argument("--backend", default="mimc,aes")
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--link-secret-file", default=None, help="hex secret; enables authenticated links")
    p.add_argument("--log-file", default=None)
    p.set_defaults(func=cmd_server)

    p = sub.add_parser("vm-init", help="create vehicles and register their shares")
    p.add_argument("--owner-id", required=True)
    p.add_argument("--vehicles", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--servers", default="", help="control-plane URLs of parties 0,1,2")
    p.set_defaults(func=cmd_vm_init)

    p = sub.add_parser("owner", help="owner actions")
    osub = p.add_subparsers(dest="action", required=True)
    q = osub.add_parser("init")
    q.add_argument("--owner-id", required=True)
    q.add_argument("--scheme", default="ed25519", choices=("ed25519", "rsa-pss-2048"))
    q.add_argument("--out", required=True)
    q = osub.add_parser("book", help="fix the booking details with a consumer")
    q.add_argument("--owner", required=True)
    q.add_argument("--vehicle", type=int, required=True)
    q.add_argument("--cert", required=True)
    q.add_argument("--booking-id", type=int, required=True)
    q.add_argument("--start", type=int, default=None)
    q.add_argument("--duration", type=int, default=3600)
    q.add_argument("--location", type=int, default=0)
    q.add_argument("--rights", default="unlock,lock")
    q.add_argument("--out", required=True)
    q = osub.add_parser("revoke", help="derive the revoked booking details")
    q.add_argument("--owner", required=True)
    q.add_argument("--bd", required=True)
    q.add_argument("--out", required=True)
    q = osub.add_parser("request", help="sign, share and send AT_GEN_REQ")
    q.add_argument("--owner", required=True)
    q.add_argument("--bd", required=True)
    q.add_argument("--ack", required=True)
    q.add_argument("--servers", required=True)
    q.add_argument("--backend", default="mimc")
    p.set_defaults(func=cmd_owner)

    p = sub.add_parser("consumer", help="consumer actions")
    csub = p.add_subparsers(dest="action", required=True)
    q = csub.add_parser("init")
    q.add_argument("--subject", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--cert-out", required=True)
    q = csub.add_parser("keys", help="derive session keys and seal them to the servers")
    q.add_argument("--consumer", required=True)
    q.add_argument("--bd", required=True)
    q.add_argument("--servers", required=True)
    q.add_argument("--backend", default="mimc")
    q.add_argument("--out", required=True)
    q.add_argument("--session-out", required=True)
    q = csub.add_parser("fetch", help="find, check and decrypt the ledger entry")
    q.add_argument("--session", required=True)
    q.add_argument("--bd", required=True)
    q.add_argument("--ledger", required=True)
    q.add_argument("--ts", type=int, default=None)
    q.add_argument("--wait", type=float, default=10.0)
    q.add_argument("--out", required=True)
    p.set_defaults(func=cmd_consumer)

    p = sub.add_parser("vehicle", help="vehicle (OBU) actions")
    vsub = p.add_subparsers(dest="action_kind", required=True)
    q = vsub.add_parser("access", help="present a token and ask for an action")
    q.add_argument("--vm", required=True)
    q.add_argument("--vehicle", type=int, required=True)
    q.add_argument("--owner-public", required=True)
    q.add_argument("--token", required=True)
    q.add_argument("--consumer", required=True)
    q.add_argument("--cert", required=True)
    q.add_argument("--action", default="unlock", choices=("unlock", "lock", "start", "trunk"))
    q.add_argument("--update", action="append", help="owner-delivered token to install first")
    q.add_argument("--clock", type=int, default=None)
    p.set_defaults(func=cmd_vehicle)

    p = sub.add_parser("run-e2e", help="Steps A, B, 1-4 against a local deployment")
    p.add_argument("--vehicles", type=int, default=2)
    p.add_argument("--backend", choices=("mimc", "aes"), default="mimc")
    p.add_argument("--tamper", choices=("ledger-c", "ledger-tag", "at", "cert"), default=None)
    p.add_argument("--revoke-after-publish", action="store_true")
    p.add_argument("--mode", choices=("thread", "process"), default="thread")
    p.add_argument("--out", default=None, help="artifacts directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--timeout", type=float, default=30.0)
    p.set_defaults(func=cmd_run_e2e)

    p = sub.add_parser("bench", help="cost and throughput sweep")
    p.add_argument("--vehicles", default="1,2,4,256,512,1024")
    p.add_argument("--backends", default="mimc,aes")
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--throughput-seconds", type=float, default=30.0,
                   help="measurement window per configuration; 0 skips throughput")
    p.add_argument("--parallelism", type=int, default=None)
    p.add_argument("--out", default="bench-out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("audit", help="reconstruct a session's booking from server records")
    p.add_argument("--session", required=True, help="session id (hex)")
    p.add_argument("--records", nargs="+", required=True)
    p.add_argument("--owner-public", required=True, help="owner signing key, hex")
    p.add_argument("--scheme", default="ed25519")
    p.set_defaults(func=cmd_audit)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
