import random

import pytest

from conftest import LocalFlow
from hermes.field import PROD
from hermes.mimc import kdf
from hermes.protocol import messages as msg
from hermes.protocol.booking import (LOCK, OPEN_TRUNK, UNLOCK, BookingDetails, BookingFormatError,
                                     Conditions, SignedBooking, m_block_count)
from hermes.protocol.crypto import (ED25519, RSA_PSS, Certificate, SealError, SealKey, SigningKey,
                                    seal)
from hermes.protocol.oracle import clear_oracle, clear_oracle_lookup
from hermes.protocol.roles import (BAD_RESPONSE, BAD_SIGNATURE, CERT_MISMATCH, EXPIRED, MALFORMED,
                                   NOT_PERMITTED, NOT_YET_VALID, REVOKED, SUPERSEDED, WRONG_VEHICLE,
                                   AuditError, DuplicateRegistration, EntryNotFound, TagMismatch,
                                   answer_challenge, audit_reconstruct, request_access,
                                   step3_consumer, step_a_register)
from hermes.protocol.step2 import RequestError, inputs_from_request
from hermes.protocol.wire import AES, MIMC, RegistrationRow, decode_shares, encode_ct
from hermes.repshare import reconstruct


def _bd(**kw):
    base = dict(cert_hash=b"\x11" * 64, vehicle_id=7, location=99, conditions=Conditions(10, 20, 0),
                access_rights=UNLOCK, booking_id=5)
    base.update(kw)
    return BookingDetails(**base)


def test_booking_encoding():
    bd = _bd()
    raw = bd.to_bytes()
    assert len(raw) == 6 * 16
    assert BookingDetails.from_bytes(raw) == bd
    # field order and big-endian packing
    assert raw[:64] == b"\x11" * 64
    assert raw[64:68] == (7).to_bytes(4, "big")
    assert raw[68:76] == (99).to_bytes(8, "big")
    assert len(bd.blocks()) == 6
    with pytest.raises(BookingFormatError):
        _bd(conditions=Conditions(20, 20)).validate()
    with pytest.raises(BookingFormatError):
        BookingDetails.from_bytes(raw[:-1] + b"\x01")


def test_signed_booking_sizes():
    assert m_block_count(ED25519) == 10
    assert m_block_count(RSA_PSS) == 22
    key = SigningKey.generate(ED25519)
    sb = SignedBooking.sign(_bd(), key)
    assert len(sb.blocks()) == 10
    assert SignedBooking.from_blocks(sb.blocks(), ED25519) == sb
    assert sb.verify(ED25519, key.public_bytes())
    rsa = SigningKey.generate(RSA_PSS)
    sr = SignedBooking.sign(_bd(), rsa)
    assert len(sr.blocks()) == 22 and sr.verify(RSA_PSS, rsa.public_bytes())


def test_seal_roundtrip_and_tamper():
    k = SealKey.generate()
    blob = seal(k.public_bytes(), b"shares", b"aad")
    assert k.open(blob, b"aad") == b"shares"
    bad = bytearray(blob)
    bad[-1] ^= 1
    with pytest.raises(SealError):
        k.open(bytes(bad), b"aad")
    with pytest.raises(SealError):
        k.open(blob, b"other")


def test_certificate():
    key = SigningKey.generate()
    cert = Certificate.issue("alice", key)
    assert Certificate.from_bytes(cert.to_bytes()) == cert
    assert len(cert.digest()) == 64


def test_messages_schema():
    m = msg.make(msg.SES_K_GEN_ACK, booking_id=3, c_s=[b"a", b"b", b"c"])
    assert msg.from_bytes(m.to_bytes()) == m
    with pytest.raises(msg.MessageError):
        msg.make(msg.SES_K_GEN_ACK, booking_id=3)
    with pytest.raises(msg.MessageError):
        msg.from_json({"type": "NOPE"})
    with pytest.raises(msg.MessageError):
        msg.from_json({"type": msg.SES_K_GEN_ACK, "booking_id": -1, "c_s": []})


def test_step_a(rng):
    f = LocalFlow(n=4)
    for i in range(3):
        assert len([r for r in f.rows[i] if r.owner_id == "owner"]) == 4
    for j, v in enumerate(f.vids):
        vid = reconstruct([f.rows[i][j].arith[0] for i in range(3)])
        key = reconstruct([f.rows[i][j].arith[1] for i in range(3)])
        assert vid == v and key == f.vm.rows[("owner", v)].k_veh
        assert reconstruct([f.rows[i][j].bits[1] for i in range(3)]) == key
    with pytest.raises(DuplicateRegistration):
        step_a_register(f.vm, "owner", f.vids[0])
    row = f.rows[1][0]
    again = RegistrationRow.from_json(row.to_json())
    assert again.arith == row.arith and again.bits == row.bits


def test_step1_roundtrip():
    f = LocalFlow()
    reqs, keys = f.request()
    inputs = [inputs_from_request(reqs[i], i, f.seal[i], f.rows[i]) for i in range(3)]
    got = [reconstruct([inputs[i].keys[k] for i in range(3)]) for k in range(5)]
    assert got[:3] == [keys.k_enc, keys.k_tag_enc, keys.k_tag_mac]
    assert tuple(got[3:]) == keys.tweaks()
    m = [reconstruct([inputs[i].m[k] for i in range(3)]) for k in range(10)]
    signed = SignedBooking.from_blocks(m, ED25519)
    assert signed.bd == f.bd and signed.verify(ED25519, f.owner_key.public_bytes())
    assert reconstruct([inputs[i].vid for i in range(3)]) == f.target
    # all requests share one session id and carry the booking id
    assert len({r["session_id"] for r in reqs}) == 1
    assert all(r["booking_id"] == f.bd.booking_id for r in reqs)


def test_step1_distinct_counters():
    a, b = kdf(5, 1), kdf(5, 2)
    assert {a.k_enc, a.k_tag_enc, a.k_tag_mac}.isdisjoint({b.k_enc, b.k_tag_enc, b.k_tag_mac})


def test_step1_tampered_bundle_refused():
    f = LocalFlow()
    reqs, _ = f.request()
    bad = bytearray(reqs[0]["c_s"])
    bad[40] ^= 1
    fields = dict(reqs[0].fields, c_s=bytes(bad))
    with pytest.raises(RequestError):
        inputs_from_request(msg.make(msg.AT_GEN_REQ, **fields), 0, f.seal[0], f.rows[0])
    # a bundle addressed to another server does not open either
    with pytest.raises(RequestError):
        inputs_from_request(reqs[1], 0, f.seal[0], f.rows[0])


def test_step1_owner_refuses_bad_window():
    f = LocalFlow()
    with pytest.raises(BookingFormatError):
        f.request(_bd(conditions=Conditions(30, 30), booking_id=f.bd.booking_id))


@pytest.mark.parametrize("backend", [MIMC, AES])
def test_full_flow_grants(backend):
    f = LocalFlow(backend, n=3, seed=1)
    ts, keys, out, parties, _ = f.generate()
    at, vid = step3_consumer(f.ledger, keys, f.bd, backend, ts=ts)
    assert vid == f.bd.vehicle_id
    obu = f.obu()
    d = request_access(obu, f.consumer_key, f.cert, at, vid, UNLOCK)
    assert d.granted, d.reason
    assert d.confirmation.verify(f.bd, ED25519, f.vehicle_key.public_bytes())
    # equivalence with the cleartext oracle
    table = [(r.vehicle_id, r.k_veh) for r in f.vm.owner_rows("owner")]
    m = _decrypt_at(f, at)
    want = clear_oracle_lookup(backend, keys, m, f.target, table, f.bd.booking_id)
    assert (out.c, out.tag) == (want.c, want.tag)
    assert at == want.at


def _decrypt_at(f, at):
    from hermes.protocol.oracle import decrypt_blocks
    return decrypt_blocks(f.backend, f.vm.rows[("owner", f.target)].k_veh, at)


def test_step3_search_by_tag_and_wrong_keys():
    f = LocalFlow(seed=2)
    ts, keys, *_ = f.generate()
    at, vid = step3_consumer(f.ledger, keys, f.bd)
    assert vid == f.target
    with pytest.raises(EntryNotFound):
        step3_consumer(f.ledger, kdf(1, 9), f.bd)
    with pytest.raises(TagMismatch):
        step3_consumer(f.ledger, kdf(1, 9), f.bd, ts=ts)


def test_step4_rejections():
    f = LocalFlow(seed=3, start=1000, end=5000, rights=UNLOCK)
    ts, keys, *_ = f.generate()
    at, vid = step3_consumer(f.ledger, keys, f.bd, ts=ts)
    at_bytes = encode_ct(MIMC, at)

    def decide(clock=2000, action=UNLOCK, vid_=vid, cert=f.cert, key=f.consumer_key, tok=at_bytes):
        obu = f.obu(lambda: clock)
        return request_access(obu, key, cert, tok, vid_, action)

    assert decide().granted
    assert decide(clock=1000).granted  # start inclusive
    assert decide(clock=5000).reason == EXPIRED  # end exclusive
    assert decide(clock=999).reason == NOT_YET_VALID
    assert decide(action=OPEN_TRUNK).reason == NOT_PERMITTED
    assert decide(vid_=vid ^ 1).reason == WRONG_VEHICLE
    other = SigningKey.generate()
    assert decide(cert=Certificate.issue("mallory", other), key=other).reason == CERT_MISMATCH
    assert decide(key=other).reason == BAD_RESPONSE
    assert decide(tok=at_bytes[:-1]).reason == MALFORMED
    # a token for a different vehicle's key fails the signature check
    obu = f.obu()
    obu.k_veh ^= 1
    d = request_access(obu, f.consumer_key, f.cert, at_bytes, vid, UNLOCK)
    assert d.reason in (BAD_SIGNATURE, MALFORMED)


def test_at_bit_flips_never_grant():
    f = LocalFlow(seed=4)
    ts, keys, *_ = f.generate()
    at, vid = step3_consumer(f.ledger, keys, f.bd, ts=ts)
    raw = encode_ct(MIMC, at)
    r = random.Random(0)
    obu = f.obu()
    for _ in range(1000):
        buf = bytearray(raw)
        pos = r.randrange(8 * len(buf))
        buf[pos // 8] ^= 1 << (pos % 8)
        assert not request_access(obu, f.consumer_key, f.cert, bytes(buf), vid, UNLOCK).granted


def test_ledger_mutations():
    f = LocalFlow(seed=5)
    ts, keys, *_ = f.generate()
    entry = f.ledger.query_since(0)[0]

    from hermes.ledger import LedgerStore
    bad_tag = LedgerStore()
    bad_tag.publish(entry.c, bytes([entry.tag[0] ^ 1]) + entry.tag[1:])
    with pytest.raises(TagMismatch):
        step3_consumer(bad_tag, keys, f.bd, ts=1)

    bad_c = LedgerStore()
    c = bytearray(entry.c)
    c[40] ^= 0x10
    bad_c.publish(bytes(c), entry.tag)
    at, vid = step3_consumer(bad_c, keys, f.bd, ts=1)  # the tag still matches
    d = request_access(f.obu(), f.consumer_key, f.cert, at, vid, UNLOCK)
    assert not d.granted and d.reason in (BAD_SIGNATURE, MALFORMED)


def test_revocation_and_update():
    f = LocalFlow(seed=6, start=1000, end=5000)
    ts, keys, *_ = f.generate()
    at, vid = step3_consumer(f.ledger, keys, f.bd, ts=ts)
    obu = f.obu(lambda: 2000)
    assert request_access(obu, f.consumer_key, f.cert, at, vid, UNLOCK).granted

    # update: new window, owner acts as the consumer with its own master key
    upd_bd = f.bd.updated(3000, 4000)
    ts2, keys2, *_ = f.generate(upd_bd, counter=1, master=f.rng.getrandbits(128))
    at2, _ = step3_consumer(f.ledger, keys2, upd_bd, ts=ts2)
    assert obu.install_update(at2).reason == "installed"
    assert request_access(obu, f.consumer_key, f.cert, at, vid, UNLOCK).reason == SUPERSEDED
    assert request_access(obu, f.consumer_key, f.cert, at2, vid, UNLOCK).reason == NOT_YET_VALID
    obu.clock = lambda: 3500
    assert request_access(obu, f.consumer_key, f.cert, at2, vid, UNLOCK).granted

    # revocation
    rev_bd = upd_bd.revoked_copy()
    assert rev_bd.conditions.start == rev_bd.conditions.end == 0
    ts3, keys3, *_ = f.generate(rev_bd, counter=2, master=f.rng.getrandbits(128))
    at3, _ = step3_consumer(f.ledger, keys3, rev_bd, ts=ts3)
    assert obu.install_update(at3).reason == REVOKED
    assert request_access(obu, f.consumer_key, f.cert, at2, vid, UNLOCK).reason == SUPERSEDED
    assert request_access(obu, f.consumer_key, f.cert, at3, vid, UNLOCK).reason == REVOKED

    # the three ledger entries are indistinguishable in shape
    entries = f.ledger.query_since(0)
    assert len({(len(e.c), len(e.tag)) for e in entries}) == 1


def test_revoke_and_generate_requests_same_shape():
    f = LocalFlow(seed=7)
    gen, _ = f.request()
    rev, _ = f.request(f.bd.revoked_copy(), counter=2)
    for a, b in zip(gen, rev):
        assert a.type == b.type
        assert set(a.fields) == set(b.fields)
        assert len(a.to_bytes()) == len(b.to_bytes())


def test_oracle_deterministic():
    keys = kdf(0, 1)
    m = [0] * 10
    a = clear_oracle(MIMC, keys, m, 0, 0, 1)
    assert clear_oracle(MIMC, keys, m, 0, 0, 1) == a
    assert len(a.c.blocks) == 11


def test_no_match_gives_zero_key():
    keys = kdf(3, 1)
    m = list(range(10))
    out = clear_oracle_lookup(MIMC, keys, m, 5, [(6, 77)], 1)
    assert out == clear_oracle(MIMC, keys, m, 5, 0, 1)


def _audit_records(f, inputs, sid="s1"):
    from hermes.protocol.wire import encode_shares
    return [{"session_id": sid, "party": i, "backend": f.backend,
             "m_shares": encode_shares(f.backend, inputs[i].m + [inputs[i].vid]).hex()}
            for i in range(3)]


@pytest.mark.parametrize("backend", [MIMC, AES])
def test_audit(backend):
    f = LocalFlow(backend, seed=8)
    reqs, _ = f.request()
    inputs = [inputs_from_request(reqs[i], i, f.seal[i], f.rows[i]) for i in range(3)]
    recs = _audit_records(f, inputs)
    pub = f.owner_key.public_bytes()
    for pair in ((0, 1), (0, 2), (1, 2)):
        signed = audit_reconstruct([recs[i] for i in pair], "s1", pub)
        assert signed.bd == f.bd
    for i in range(3):
        with pytest.raises(AuditError):
            audit_reconstruct([recs[i]], "s1", pub)
    with pytest.raises(AuditError):
        audit_reconstruct([recs[0], dict(recs[1], session_id="s2")], "s1", pub)
    with pytest.raises(AuditError):
        audit_reconstruct(recs[:2], "s1", SigningKey.generate().public_bytes())


def test_certificate_rejects_non_canonical_encodings():
    cert = Certificate.issue("c", SigningKey.generate())
    raw = cert.to_bytes()
    assert Certificate.from_bytes(raw) == cert
    upper = raw.replace(cert.public_key.hex().encode(), cert.public_key.hex().upper().encode())
    spaced = raw.replace(b",", b", ", 1)
    for bad in (upper, spaced):
        assert bad != raw
        with pytest.raises(ValueError):
            Certificate.from_bytes(bad)
