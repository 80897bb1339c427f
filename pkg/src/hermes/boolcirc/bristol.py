"""Bristol-fashion circuit files.

Format::

    <ngates> <nwires>
    <niv> <size_1> ... <size_niv>
    <nov> <size_1> ... <size_nov>

    <n_in> <n_out> <in wires...> <out wires...> <KIND>
    ...

Inputs occupy the first wires, outputs the last ones.  Supported kinds are
XOR, AND, INV, EQ (assign constant) and EQW (copy wire).
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

KINDS = {"XOR": (2, 1), "AND": (2, 1), "INV": (1, 1), "EQ": (1, 1), "EQW": (1, 1)}
LINEAR = {"XOR", "INV", "EQ", "EQW"}


class BristolError(ValueError):
    def __init__(self, msg: str, line: int | None = None):
        super().__init__(f"line {line}: {msg}" if line is not None else msg)
        self.line = line


class MalformedHeader(BristolError):
    pass


class MalformedGate(BristolError):
    pass


class UnknownGateKind(BristolError):
    pass


class WireOutOfRange(BristolError):
    pass


class DanglingWire(BristolError):
    pass


class MultipleAssignment(BristolError):
    pass


class CyclicDependency(BristolError):
    pass


@dataclass(frozen=True)
class Gate:
    kind: str
    ins: tuple[int, ...]
    out: int
    line: int = 0


@dataclass
class BristolCircuit:
    num_gates: int
    num_wires: int
    input_sizes: list[int]
    output_sizes: list[int]
    gates: list[Gate]
    # derived
    order: list[int] = field(default_factory=list)
    wire_and_depth: list[int] = field(default_factory=list)
    gate_layer: list[int] = field(default_factory=list)
    and_count: int = 0
    and_depth: int = 0

    @property
    def num_inputs(self) -> int:
        return sum(self.input_sizes)

    @property
    def num_outputs(self) -> int:
        return sum(self.output_sizes)

    @property
    def output_wires(self) -> range:
        return range(self.num_wires - self.num_outputs, self.num_wires)

    @property
    def layers(self) -> list[list[int]]:
        """Gate indices grouped by topological depth (inputs at depth 0)."""
        if not self.gate_layer:
            return []
        out: list[list[int]] = [[] for _ in range(max(self.gate_layer) + 1)]
        for g, d in enumerate(self.gate_layer):
            out[d].append(g)
        return out[1:]

    def kind_counts(self) -> Counter:
        return Counter(g.kind for g in self.gates)


def _ints(tokens: Sequence[str], line: int, exc=MalformedHeader) -> list[int]:
    try:
        vals = [int(t) for t in tokens]
    except ValueError:
        raise exc(f"expected integers, got {' '.join(tokens)!r}", line) from None
    if any(v < 0 for v in vals):
        raise exc("negative value", line)
    return vals


def parse_bristol(text: str) -> BristolCircuit:
    lines = [(i + 1, ln.split()) for i, ln in enumerate(text.splitlines())]
    lines = [(n, toks) for n, toks in lines if toks]
    if len(lines) < 3:
        raise MalformedHeader("missing header lines", lines[-1][0] if lines else 1)
    (l1, h1), (l2, h2), (l3, h3) = lines[:3]
    if len(h1) != 2:
        raise MalformedHeader("first line must be '<ngates> <nwires>'", l1)
    ngates, nwires = _ints(h1, l1)
    ins = _ints(h2, l2)
    outs = _ints(h3, l3)
    if not ins or ins[0] != len(ins) - 1:
        raise MalformedHeader("input line count does not match", l2)
    if not outs or outs[0] != len(outs) - 1:
        raise MalformedHeader("output line count does not match", l3)
    input_sizes, output_sizes = ins[1:], outs[1:]
    if sum(input_sizes) + sum(output_sizes) > nwires:
        raise MalformedHeader("more input/output wires than wires", l1)

    gates: list[Gate] = []
    for n, toks in lines[3:]:
        if len(toks) < 3:
            raise MalformedGate("gate line too short", n)
        kind = toks[-1]
        n_in, n_out = _ints(toks[:2], n, MalformedGate)
        if kind not in KINDS:
            raise UnknownGateKind(f"unknown gate kind {kind!r}", n)
        if (n_in, n_out) != KINDS[kind] or len(toks) != 3 + n_in + n_out:
            raise MalformedGate(f"bad arity for {kind}", n)
        wires = _ints(toks[2:-1], n, MalformedGate)
        if kind == "EQ":
            if wires[0] not in (0, 1):
                raise MalformedGate("EQ constant must be 0 or 1", n)
            check = wires[1:]
        else:
            check = wires
        for w in check:
            if w >= nwires:
                raise WireOutOfRange(f"wire {w} >= {nwires}", n)
        gates.append(Gate(kind, tuple(wires[:n_in]), wires[-1], n))
    if len(gates) != ngates:
        raise MalformedHeader(f"header says {ngates} gates, found {len(gates)}", l1)
    circ = BristolCircuit(ngates, nwires, input_sizes, output_sizes, gates)
    _analyze(circ)
    return circ


def _analyze(c: BristolCircuit) -> None:
    n_in = c.num_inputs
    producer: dict[int, int] = {}
    for gi, g in enumerate(c.gates):
        if g.out < n_in:
            raise MultipleAssignment(f"gate writes input wire {g.out}", g.line)
        if g.out in producer:
            raise MultipleAssignment(f"wire {g.out} assigned twice", g.line)
        producer[g.out] = gi
    for gi, g in enumerate(c.gates):
        deps = g.ins if g.kind != "EQ" else ()
        for w in deps:
            if w >= n_in and w not in producer:
                raise DanglingWire(f"wire {w} is never assigned", g.line)
    for w in c.output_wires:
        if w >= n_in and w not in producer:
            raise DanglingWire(f"output wire {w} is never assigned")

    # Kahn's algorithm over gates
    users: dict[int, list[int]] = {}
    missing = []
    for gi, g in enumerate(c.gates):
        deps = [w for w in (g.ins if g.kind != "EQ" else ()) if w >= n_in]
        missing.append(len(deps))
        for w in deps:
            users.setdefault(w, []).append(gi)
    ready = [gi for gi, m in enumerate(missing) if m == 0]
    order: list[int] = []
    while ready:
        gi = ready.pop()
        order.append(gi)
        for u in users.get(c.gates[gi].out, ()):
            missing[u] -= 1
            if missing[u] == 0:
                ready.append(u)
    if len(order) != len(c.gates):
        stuck = min(c.gates[gi].line for gi, m in enumerate(missing) if m > 0)
        raise CyclicDependency("gates form a cycle", stuck)
    order = _stable_topo(c, n_in)

    and_depth = [0] * c.num_wires
    depth = [0] * c.num_wires
    gate_layer = [0] * len(c.gates)
    for gi in order:
        g = c.gates[gi]
        deps = g.ins if g.kind != "EQ" else ()
        d = max((depth[w] for w in deps), default=0) + 1
        a = max((and_depth[w] for w in deps), default=0) + (g.kind == "AND")
        depth[g.out], and_depth[g.out], gate_layer[gi] = d, a, d
    c.order = order
    c.wire_and_depth = and_depth
    c.gate_layer = gate_layer
    c.and_count = sum(g.kind == "AND" for g in c.gates)
    c.and_depth = max(and_depth, default=0)


def _stable_topo(c: BristolCircuit, n_in: int) -> list[int]:
    """Topological order that keeps file order wherever the file already is one."""
    producer = {g.out: gi for gi, g in enumerate(c.gates)}
    done = [False] * len(c.gates)
    out: list[int] = []
    for start in range(len(c.gates)):
        if done[start]:
            continue
        stack = [(start, False)]
        while stack:
            gi, expanded = stack.pop()
            if done[gi]:
                continue
            if expanded:
                done[gi] = True
                out.append(gi)
                continue
            stack.append((gi, True))
            g = c.gates[gi]
            for w in reversed(g.ins if g.kind != "EQ" else ()):
                if w >= n_in and not done[producer[w]]:
                    stack.append((producer[w], False))
    return out


def unparse_bristol(c: BristolCircuit) -> str:
    lines = [f"{c.num_gates} {c.num_wires}",
             " ".join(map(str, [len(c.input_sizes), *c.input_sizes])),
             " ".join(map(str, [len(c.output_sizes), *c.output_sizes])),
             ""]
    for g in c.gates:
        lines.append(" ".join(map(str, [len(g.ins), 1, *g.ins, g.out, g.kind])))
    return "\n".join(lines) + "\n"


def evaluate(c: BristolCircuit, inputs: Sequence[Sequence[int]]) -> list[list[int]]:
    """Cleartext evaluation; inputs and outputs are bit lists per group."""
    if [len(x) for x in inputs] != c.input_sizes:
        raise ValueError(f"input widths {[len(x) for x in inputs]} != {c.input_sizes}")
    flat = [b & 1 for grp in inputs for b in grp]
    out = evaluate_packed(c, flat, 1)
    res, pos = [], 0
    for size in c.output_sizes:
        res.append(out[pos:pos + size])
        pos += size
    return res


def evaluate_packed(c: BristolCircuit, wires_in: Sequence[int], mask: int) -> list[int]:
    """Cleartext evaluation on lane-packed ints (bit k of every wire = lane k)."""
    w = [0] * c.num_wires
    w[:len(wires_in)] = list(wires_in)
    gates = c.gates
    for gi in c.order:
        g = gates[gi]
        k = g.kind
        if k == "XOR":
            w[g.out] = w[g.ins[0]] ^ w[g.ins[1]]
        elif k == "AND":
            w[g.out] = w[g.ins[0]] & w[g.ins[1]]
        elif k == "INV":
            w[g.out] = w[g.ins[0]] ^ mask
        elif k == "EQ":
            w[g.out] = mask if g.ins[0] else 0
        else:
            w[g.out] = w[g.ins[0]]
    return [w[i] for i in c.output_wires]
