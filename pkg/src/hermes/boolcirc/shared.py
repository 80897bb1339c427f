"""Boolean circuits over replicated GF(2) shares.

Wire values are lane-packed ints: bit ``l`` of a wire's ``lo``/``hi``
component belongs to lane ``l``, so one circuit pass evaluates ``width``
independent instances and an AND layer costs one round regardless of the
lane count.  128-bit blocks travel as BIT-domain ``RepShare`` objects whose
components hold the block value (bit 127 = first wire).

The circuit is split by AND depth: all linear gates that become computable
after AND layer ``d`` are compiled once into a straight-line Python function.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

from ..repshare.engine import And, Party
from ..repshare.shares import BIT, RepShare
from .bristol import BristolCircuit


@dataclass
class _Level:
    linear: Callable | None
    and_a: list[int]
    and_b: list[int]
    and_out: list[int]


class CompiledCircuit:
    def __init__(self, circuit: BristolCircuit):
        self.circuit = circuit
        depth = circuit.wire_and_depth
        buckets_lin: list[list] = [[] for _ in range(circuit.and_depth + 1)]
        buckets_and: list[list] = [[] for _ in range(circuit.and_depth + 1)]
        for gi in circuit.order:
            g = circuit.gates[gi]
            d = depth[g.out]
            if g.kind == "AND":
                buckets_and[d - 1].append(g)
            else:
                buckets_lin[d].append(g)
        self.levels: list[_Level] = []
        for d in range(circuit.and_depth + 1):
            ands = buckets_and[d]
            self.levels.append(_Level(self._compile(buckets_lin[d], d),
                                      [g.ins[0] for g in ands], [g.ins[1] for g in ands],
                                      [g.out for g in ands]))

    @staticmethod
    def _compile(gates, d: int):
        if not gates:
            return None
        body = []
        for g in gates:
            o = g.out
            if g.kind == "XOR":
                a, b = g.ins
                body.append(f" l[{o}]=l[{a}]^l[{b}];h[{o}]=h[{a}]^h[{b}]")
            elif g.kind == "INV":
                a = g.ins[0]
                body.append(f" l[{o}]=l[{a}]^fl;h[{o}]=h[{a}]^fh")
            elif g.kind == "EQW":
                a = g.ins[0]
                body.append(f" l[{o}]=l[{a}];h[{o}]=h[{a}]")
            else:  # EQ
                if g.ins[0]:
                    body.append(f" l[{o}]=fl;h[{o}]=fh")
                else:
                    body.append(f" l[{o}]=0;h[{o}]=0")
        src = f"def seg_{d}(l,h,fl,fh):\n" + "\n".join(body) + "\n"
        ns: dict = {}
        exec(compile(src, f"<circuit-level-{d}>", "exec"), ns)
        return ns[f"seg_{d}"]

    @property
    def and_count(self) -> int:
        return self.circuit.and_count

    @property
    def and_depth(self) -> int:
        return self.circuit.and_depth


_COMPILED: dict[int, CompiledCircuit] = {}


def compiled(circuit: BristolCircuit | CompiledCircuit) -> CompiledCircuit:
    if isinstance(circuit, CompiledCircuit):
        return circuit
    cc = _COMPILED.get(id(circuit))
    if cc is None or cc.circuit is not circuit:
        cc = _COMPILED[id(circuit)] = CompiledCircuit(circuit)
    return cc


def promote_public(party_id: int, value: int) -> tuple[int, int]:
    """Public wire value as a share: it sits in r_0 (party 0 lo, party 2 hi)."""
    return (value if party_id == 0 else 0, value if party_id == 2 else 0)


def eval_shared(party: Party, circuit: BristolCircuit | CompiledCircuit,
                inputs: Sequence[tuple[int, int] | int], width: int = 1):
    """Evaluate on shared inputs; yields one And request per AND layer.

    ``inputs`` lists every input wire as a ``(lo, hi)`` pair or a public
    lane-packed int.  Returns the output wires as ``(lo, hi)`` pairs.
    """
    cc = compiled(circuit)
    c = cc.circuit
    if len(inputs) != c.num_inputs:
        raise ValueError(f"circuit takes {c.num_inputs} input wires, got {len(inputs)}")
    pid = party.party_id
    mask = (1 << width) - 1
    fl, fh = promote_public(pid, mask)
    lo = [0] * c.num_wires
    hi = [0] * c.num_wires
    for w, v in enumerate(inputs):
        if isinstance(v, int):
            v = promote_public(pid, v)
        lo[w], hi[w] = v
    for level in cc.levels:
        if level.linear is not None:
            level.linear(lo, hi, fl, fh)
        if level.and_out:
            a, b = level.and_a, level.and_b
            t_lo, t_hi = yield And([lo[i] for i in a], [hi[i] for i in a],
                                   [lo[i] for i in b], [hi[i] for i in b], width)
            for w, x, y in zip(level.and_out, t_lo, t_hi):
                lo[w] = x
                hi[w] = y
    return [(lo[w], hi[w]) for w in c.output_wires]


# ---------------------------------------------------------------------------
# block <-> wire conversion


def blocks_to_wires(values: Sequence[int], bits: int = 128) -> list[int]:
    """Transpose lane values into per-wire lane-packed ints (MSB = first wire)."""
    out = []
    for j in range(bits):
        shift = bits - 1 - j
        acc = 0
        for lane, v in enumerate(values):
            acc |= ((v >> shift) & 1) << lane
        out.append(acc)
    return out


def wires_to_blocks(wires: Sequence[int], lanes: int) -> list[int]:
    bits = len(wires)
    out = []
    for lane in range(lanes):
        acc = 0
        for j, w in enumerate(wires):
            acc |= ((w >> lane) & 1) << (bits - 1 - j)
        out.append(acc)
    return out


def _share_wires(shares: Sequence[RepShare], bits: int = 128) -> list[tuple[int, int]]:
    lo = blocks_to_wires([s.lo for s in shares], bits)
    hi = blocks_to_wires([s.hi for s in shares], bits)
    return list(zip(lo, hi))


def _wires_share(party: Party, wires: Sequence[tuple[int, int]], lanes: int) -> list[RepShare]:
    lo = wires_to_blocks([w[0] for w in wires], lanes)
    hi = wires_to_blocks([w[1] for w in wires], lanes)
    return [RepShare(party.party_id, a, b, BIT) for a, b in zip(lo, hi)]


def bit_const(party: Party, value: int) -> RepShare:
    return RepShare(party.party_id, 0, 0, BIT).add_const(value)


# ---------------------------------------------------------------------------
# AES constructions


def aes_shared(party: Party, circuit, keys: Sequence[RepShare], blocks: Sequence[RepShare]):
    """AES-128 on ``len(blocks)`` lanes in one circuit pass (and_depth rounds)."""
    if len(keys) != len(blocks):
        raise ValueError("one key per block")
    if not blocks:
        return []
    lanes = len(blocks)
    inputs = _share_wires(keys) + _share_wires(blocks)
    out = yield from eval_shared(party, circuit, inputs, lanes)
    return _wires_share(party, out, lanes)


def counter_block(nonce: int, j: int) -> int:
    return ((nonce & (2 ** 64 - 1)) << 64) | (j & (2 ** 64 - 1))


def aes_ctr_shared(party: Party, circuit, key: RepShare, nonce: int, blocks: Sequence[RepShare]):
    """ct_j = m_j XOR AES_K(nonce || j), j = 1..l; all calls in parallel."""
    ctrs = [bit_const(party, counter_block(nonce, j)) for j in range(1, len(blocks) + 1)]
    ks = yield from aes_shared(party, circuit, [key] * len(blocks), ctrs)
    return [m + s for m, s in zip(blocks, ks)]


def cbc_mac_shared(party: Party, circuit, key: RepShare, blocks: Sequence[RepShare]):
    """c_0 = 0, c_i = AES_K(c_{i-1} XOR m_i); returns c_l.  Sequential."""
    c = bit_const(party, 0)
    for m in blocks:
        (c,) = yield from aes_shared(party, circuit, [key], [c + m])
    return c


def _and_tree(party: Party, vals_lo: list[int], vals_hi: list[int], width: int):
    while len(vals_lo) > 1:
        half = len(vals_lo) // 2
        t_lo, t_hi = yield And(vals_lo[0:2 * half:2], vals_hi[0:2 * half:2],
                               vals_lo[1:2 * half:2], vals_hi[1:2 * half:2], width)
        vals_lo = t_lo + vals_lo[2 * half:]
        vals_hi = t_hi + vals_hi[2 * half:]
    return vals_lo[0], vals_hi[0]


def _parity(x: int) -> int:
    return bin(x).count("1") & 1


def equality_select_binary(party: Party, target: RepShare, ids: Sequence[RepShare],
                           keys: Sequence[RepShare], id_bits: int = 32, key_bits: int = 128):
    """XOR over rows of [id_y == target] AND key_y.

    Rows are lanes: 32 local XNORs, a 31-AND tree, then 128 selection ANDs,
    so 159 ANDs per row in 6 rounds (for 32-bit ids).
    """
    if len(ids) != len(keys):
        raise ValueError("ids and keys differ in length")
    n = len(ids)
    if n == 0:
        return bit_const(party, 0)
    mask = (1 << n) - 1
    id_w = _share_wires(ids, id_bits)
    fl, fh = promote_public(party.party_id, mask)
    e_lo, e_hi = [], []
    for j, (a, b) in enumerate(id_w):
        shift = id_bits - 1 - j
        t_lo = mask if (target.lo >> shift) & 1 else 0
        t_hi = mask if (target.hi >> shift) & 1 else 0
        e_lo.append(a ^ t_lo ^ fl)
        e_hi.append(b ^ t_hi ^ fh)
    eq_lo, eq_hi = yield from _and_tree(party, e_lo, e_hi, n)
    key_w = _share_wires(keys, key_bits)
    s_lo, s_hi = yield And([eq_lo] * key_bits, [eq_hi] * key_bits,
                           [w[0] for w in key_w], [w[1] for w in key_w], n)
    lo = hi = 0
    for j in range(key_bits):
        lo |= _parity(s_lo[j]) << (key_bits - 1 - j)
        hi |= _parity(s_hi[j]) << (key_bits - 1 - j)
    return RepShare(party.party_id, lo, hi, BIT)
