import hashlib
import random
from importlib import resources

import pytest

from conftest import run_mpc
from hermes.boolcirc import (AES_CIRCUIT_SHA256, CircuitIntegrityError, CyclicDependency,
                             DanglingWire, MalformedGate, MalformedHeader, MultipleAssignment,
                             UnknownGateKind, WireOutOfRange, aes_block, aes_circuit, aes_ctr,
                             aes_ctr_shared, aes_shared, blocks_to_wires, cbc_mac, cbc_mac_shared,
                             equality_select_binary, eval_shared, evaluate, load_circuit_text,
                             parse_bristol, unparse_bristol, wires_to_blocks)
from hermes.repshare import BIT, OpenBits, TapeCounts

FIPS_ZERO = 0x66E94BD4EF8A2C3B884CFA59CA342B2E
MINIMAL = "1 3\n1 2\n1 1\n\n2 1 0 1 2 AND\n"


def open_blocks(program):
    def run(party, *args):
        out = yield from program(party, *args)
        out = out if isinstance(out, list) else [out]
        return (yield OpenBits([s.lo for s in out], [s.hi for s in out], 128))
    return run


def test_minimal_circuit():
    c = parse_bristol(MINIMAL)
    assert c.and_count == 1 and c.and_depth == 1
    for a in (0, 1):
        for b in (0, 1):
            assert evaluate(c, [[a, b]]) == [[a & b]]


@pytest.mark.parametrize("text, exc, line", [
    ("1 3\n1 2\n1 1\n2 1 0 5 2 AND\n", WireOutOfRange, 4),
    ("1 3\n1 2\n1 1\n2 1 0 1 2 NAND\n", UnknownGateKind, 4),
    ("x 3\n1 2\n1 1\n2 1 0 1 2 AND\n", MalformedHeader, 1),
    ("1 3\n1 2\n1 1\n2 1 0 1 AND\n", MalformedGate, 4),
    ("2 4\n1 2\n1 1\n2 1 0 1 2 AND\n2 1 0 1 2 XOR\n", MultipleAssignment, 5),
    ("1 4\n1 2\n1 1\n2 1 0 2 3 AND\n", DanglingWire, 4),
    ("3 5\n1 2\n1 1\n2 1 0 3 2 AND\n2 1 2 1 3 XOR\n2 1 2 3 4 XOR\n", CyclicDependency, None),
])
def test_parse_errors(text, exc, line):
    with pytest.raises(exc) as info:
        parse_bristol(text)
    if line is not None:
        assert info.value.line == line


def test_layering_is_topological():
    c = aes_circuit()
    seen = set(range(c.num_inputs))
    for layer in c.layers:
        for g in layer:
            gate = c.gates[g]
            if gate.kind != "EQ":
                assert all(w in seen for w in gate.ins)
        seen.update(c.gates[g].out for g in layer)


def test_vendored_aes_circuit():
    c = aes_circuit()
    assert c.and_count == 6400
    assert c.and_depth == 60
    text = resources.files("hermes.boolcirc").joinpath("data/aes_128.txt").read_text()
    assert hashlib.sha256(text.encode()).hexdigest() == AES_CIRCUIT_SHA256
    with pytest.raises(CircuitIntegrityError):
        load_circuit_text(text + "\n")
    with pytest.raises(CircuitIntegrityError):
        load_circuit_text(MINIMAL, expected_sha256=None)


def test_unparse_roundtrip():
    c = aes_circuit()
    again = parse_bristol(unparse_bristol(c))
    assert sorted((g.kind, g.ins, g.out) for g in again.gates) == \
        sorted((g.kind, g.ins, g.out) for g in c.gates)
    assert again.layers == c.layers


def _bits(v):
    return [(v >> (127 - i)) & 1 for i in range(128)]


def test_clear_circuit_matches_aes():
    c = aes_circuit()
    assert aes_block(0, 0) == FIPS_ZERO
    r = random.Random(2)
    for _ in range(5):
        k, m = r.getrandbits(128), r.getrandbits(128)
        out = evaluate(c, [_bits(k), _bits(m)])[0]
        assert int("".join(map(str, out)), 2) == aes_block(k, m)


def test_block_wire_transpose(rng):
    vals = [rng.getrandbits(128) for _ in range(5)]
    assert wires_to_blocks(blocks_to_wires(vals), 5) == vals


def test_shared_aes_fips_vector():
    def prog(party, keys, blocks):
        return (yield from aes_shared(party, aes_circuit(), keys, blocks))

    res, parties = run_mpc(open_blocks(prog), [[0], [0]], BIT, TapeCounts(zero_shares=6400),
                           width=128)
    assert res[0] == [FIPS_ZERO]
    st = parties[0].stats
    assert st.and_gates == 6400
    assert st.online_rounds == 60 + 1


def test_shared_aes_random_lanes(rng):
    keys = [rng.getrandbits(128) for _ in range(3)]
    blocks = [rng.getrandbits(128) for _ in range(3)]

    def prog(party, ks, bs):
        return (yield from aes_shared(party, aes_circuit(), ks, bs))

    res, parties = run_mpc(open_blocks(prog), [keys, blocks], BIT,
                           TapeCounts(zero_shares=3 * 6400), width=128)
    assert res[0] == [aes_block(k, b) for k, b in zip(keys, blocks)]
    assert parties[0].stats.online_rounds == 61  # lanes run in parallel


def test_xor_only_circuit_is_free():
    c = parse_bristol("2 4\n1 2\n1 1\n2 1 0 1 2 XOR\n1 1 2 3 INV\n")

    def prog(party, xs):
        inputs = [(x.lo, x.hi) for x in xs]
        out = yield from eval_shared(party, c, inputs)
        return (yield OpenBits([o[0] for o in out], [o[1] for o in out], 1))

    for a in (0, 1):
        for b in (0, 1):
            res, parties = run_mpc(prog, [[a, b]], BIT)
            assert res[0] == [1 - (a ^ b)]
            assert parties[0].stats.online_rounds == 1  # only the final open


def _random_circuit(r, n_in=4, n_gates=50):
    gates, wires = [], n_in
    for _ in range(n_gates):
        kind = r.choice(["XOR", "AND", "INV"])
        if kind == "INV":
            gates.append(f"1 1 {r.randrange(wires)} {wires} INV")
        else:
            gates.append(f"2 1 {r.randrange(wires)} {r.randrange(wires)} {wires} {kind}")
        wires += 1
    header = f"{n_gates} {wires}\n1 {n_in}\n1 1\n"
    return parse_bristol(header + "\n".join(gates) + "\n")


def test_random_circuits_match_cleartext():
    r = random.Random(50)
    for trial in range(100):
        c = _random_circuit(r)
        xs = [r.getrandbits(1) for _ in range(4)]

        def prog(party, sh):
            out = yield from eval_shared(party, c, [(s.lo, s.hi) for s in sh])
            return (yield OpenBits([o[0] for o in out], [o[1] for o in out], 1))

        res, parties = run_mpc(prog, [xs], BIT, seed=trial)
        assert res[0] == evaluate(c, [xs])[0]
        assert parties[0].stats.and_gates == c.and_count


@pytest.mark.parametrize("n, pick", [(1, 0), (4, 2), (3, None)])
def test_equality_select(n, pick, rng):
    ids = rng.sample(range(2**32), n + 1)
    keys = [rng.getrandbits(128) for _ in range(n)]
    target = ids[pick] if pick is not None else ids[n]

    def prog(party, t, i, k):
        return (yield from equality_select_binary(party, t[0], i, k))

    res, parties = run_mpc(open_blocks(prog), [[target], ids[:n], keys], BIT,
                           TapeCounts(zero_shares=200 * n), width=128)
    assert res[0] == [keys[pick] if pick is not None else 0]
    assert parties[0].stats.and_gates == 159 * n
    assert parties[0].stats.online_rounds == 5 + 1 + 1


def test_cbc_mac_and_ctr_costs(rng):
    key = rng.getrandbits(128)
    m = [rng.getrandbits(128) for _ in range(6)]

    def mac(party, k, ms):
        return (yield from cbc_mac_shared(party, aes_circuit(), k[0], ms))

    res, parties = run_mpc(open_blocks(mac), [[key], m], BIT, TapeCounts(zero_shares=6 * 6400),
                           width=128)
    assert res[0] == [cbc_mac(key, m)]
    assert parties[0].stats.and_gates == 6 * 6400
    assert parties[0].stats.online_rounds == 6 * 60 + 1

    res, _ = run_mpc(open_blocks(mac), [[0], [0]], BIT, TapeCounts(zero_shares=6400), width=128)
    assert res[0] == [FIPS_ZERO]

    m10 = [rng.getrandbits(128) for _ in range(10)]

    def ctr(party, k, ms):
        return (yield from aes_ctr_shared(party, aes_circuit(), k[0], 77, ms))

    res, parties = run_mpc(open_blocks(ctr), [[key], m10], BIT, TapeCounts(zero_shares=10 * 6400),
                           width=128)
    assert res[0] == aes_ctr(key, 77, m10)
    assert parties[0].stats.and_gates == 10 * 6400
    assert parties[0].stats.online_rounds == 60 + 1
