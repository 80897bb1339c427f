import ast
import json
import random
from pathlib import Path

import pytest

from hermes.dealer import write_tapes
from hermes.e2e import LocalDeployment, agree_booking, register_fleet, request_token
from hermes.protocol.booking import m_block_count
from hermes.protocol.crypto import Certificate, SigningKey
from hermes.protocol.roles import AuditError, VmDatabase, audit_reconstruct, step3_consumer, step_a_register
from hermes.protocol.wire import MIMC
from hermes.repshare import PreprocessingExhausted
from hermes.server import DuplicateRow, ServerDatabase, ServerError, SessionFailed, TapePool

SRC = Path(__file__).resolve().parents[1] / "src" / "hermes"


def _rows(n=2, seed=0):
    rng = random.Random(seed)
    vm = VmDatabase()
    out = [[], [], []]
    for v in rng.sample(range(1, 2**32), n):
        vm.add_vehicle("o", v, rng.getrandbits(128))
        for i, r in enumerate(step_a_register(vm, "o", v, rng)):
            out[i].append(r)
    return out


def test_database_stores_and_rejects_duplicates(tmp_path):
    rows = _rows(3)
    db = ServerDatabase(tmp_path / "r.sqlite", 1)
    assert db.load(rows[1]) == 3
    got = db.owner_rows("o")
    assert [r.row_index for r in got] == [0, 1, 2]
    assert [r.to_json() for r in got] == [r.to_json() for r in rows[1]]
    with pytest.raises(DuplicateRow):
        db.load(rows[1][:1])
    assert db.count() == 3
    assert db.owner_rows("nobody") == []


def test_database_refuses_rows_for_other_party(tmp_path):
    db = ServerDatabase(tmp_path / "r.sqlite", 0)
    with pytest.raises(ServerError):
        db.load(_rows(1)[2])


def test_tape_pool_claims_each_tape_once(tmp_path):
    write_tapes(tmp_path, MIMC, 2, 3, seed=1)
    pools = [TapePool(tmp_path, i) for i in range(3)]
    assert pools[0].available(MIMC) == [0, 1, 2]
    idx, tape = pools[0].claim_next(MIMC)
    assert idx == 0 and tape.party == 0
    assert pools[0].available(MIMC) == [1, 2]
    assert pools[1].claim(MIMC, 0).party == 1
    with pytest.raises(PreprocessingExhausted):
        pools[1].claim(MIMC, 0)
    pools[0].claim_next(MIMC)
    pools[0].claim_next(MIMC)
    with pytest.raises(PreprocessingExhausted):
        pools[0].claim_next(MIMC)


@pytest.fixture
def deployment(tmp_path):
    dep = LocalDeployment(tmp_path, session_timeout=3.0, backends=(MIMC,)).start()
    yield dep
    dep.stop()


def _setup(dep, n=2, seed=0, sessions=1):
    rng = random.Random(seed)
    dep.provision(MIMC, n, sessions, m_blocks=m_block_count("ed25519"), seed=seed)
    fleet = register_fleet(dep, "owner", n, rng)
    ckey = SigningKey.generate()
    cert = Certificate.issue("c", ckey)
    bd = agree_booking(fleet, fleet.vehicle_ids[0], cert, 77, 1000, 9000)
    return rng, fleet, bd


def test_session_publishes_exactly_one_entry(deployment):
    rng, fleet, bd = _setup(deployment)
    b = request_token(deployment, fleet, bd, MIMC, rng.getrandbits(128), 1, rng)
    assert len(deployment.ledger_store) == 1
    at, vid = step3_consumer(deployment.ledger(), b.keys, bd, MIMC, ts=b.ts, timeout=2.0)
    assert vid == bd.vehicle_id
    assert all(c.health()["sessions"] == 1 for c in deployment.clients())


def test_registration_duplicate_over_http(deployment):
    rows = _rows(1)
    deployment.clients()[0].register(rows[0])
    with pytest.raises(DuplicateRow):
        deployment.clients()[0].register(rows[0])


def test_two_of_three_requests_time_out(deployment):
    rng, fleet, bd = _setup(deployment, sessions=2)
    b = request_token(deployment, fleet, bd, MIMC, rng.getrandbits(128), 1, rng, submit=False)
    import threading
    errors = []

    def go(i):
        try:
            deployment.clients()[i].at_gen_req(b.requests[i])
        except ServerError as exc:
            errors.append(exc)

    threads = [threading.Thread(target=go, args=(i,)) for i in (0, 1)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(errors) == 2
    assert all(isinstance(e, SessionFailed) for e in errors)
    assert len(deployment.ledger_store) == 0


def test_restarted_server_serves_a_retry(deployment):
    rng, fleet, bd = _setup(deployment, sessions=2)
    deployment.restart_server(1)
    b = request_token(deployment, fleet, bd, MIMC, rng.getrandbits(128), 1, rng)
    assert len(deployment.ledger_store) == 1
    # registration rows and the seal key survive the restart
    assert deployment.clients()[1].health()["rows"] == 2
    step3_consumer(deployment.ledger(), b.keys, bd, MIMC, ts=b.ts, timeout=2.0)


def test_audit_records_hold_shares_only(deployment):
    rng, fleet, bd = _setup(deployment)
    b = request_token(deployment, fleet, bd, MIMC, rng.getrandbits(128), 1, rng)
    sid = b.session_id.hex()
    records = [json.loads((deployment.party_dir(i) / "audit" / f"{sid}.p{i}.json").read_text())
               for i in range(3)]
    # a single record is one share of each block and cannot be opened
    blob = json.dumps(records[0]).encode()
    assert bd.to_bytes().hex().encode() not in blob
    assert set(records[0]) == {"session_id", "party", "backend", "booking_id", "owner_id", "ts",
                               "m_shares", "c", "tag"}
    with pytest.raises(AuditError):
        audit_reconstruct(records[:1], sid, fleet.owner_key.public_bytes())
    signed = audit_reconstruct([records[0], records[2]], sid, fleet.owner_key.public_bytes())
    assert signed.bd == bd


# ---------------------------------------------------------------------------
# what server-side code may see


SERVER_SIDE = ["server.py", "ledger.py", "transport.py", "dealer.py", "protocol/step2.py",
               "protocol/wire.py", "protocol/messages.py", "protocol/crypto.py"]
USER_SIDE = {"booking", "roles", "oracle"}


def _imports(path: Path) -> set[str]:
    tree = ast.parse(path.read_text())
    names = set()
    for node in ast.walk(tree):
        if isinstance(node, ast.ImportFrom):
            mod = node.module or ""
            names.add(mod)
            names.update(f"{mod}.{a.name}" if mod else a.name for a in node.names)
        elif isinstance(node, ast.Import):
            names.update(a.name for a in node.names)
    return names


@pytest.mark.parametrize("rel", SERVER_SIDE)
def test_server_side_modules_do_not_reach_user_state(rel):
    path = SRC / rel
    names = _imports(path)
    for name in names:
        parts = set(name.replace("..", ".").split("."))
        assert not (parts & USER_SIDE), f"{rel} imports {name}"
    text = path.read_text()
    # shared key components are fine; the clear key object and its derivation are not
    for sym in ("SessionKeys", "kdf("):
        assert sym not in text, f"{rel} mentions {sym}"


def test_server_runtime_does_not_load_user_modules():
    import subprocess
    import sys
    code = ("import sys, hermes.server, hermes.ledger, hermes.transport, hermes.dealer;"
            "print(','.join(m for m in sys.modules if m.startswith('hermes.')))")
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout
    loaded = set(out.strip().split(","))
    for mod in ("hermes.protocol.booking", "hermes.protocol.roles", "hermes.protocol.oracle"):
        assert mod not in loaded

