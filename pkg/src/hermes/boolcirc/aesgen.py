"""Generator for the AES-128 Bristol circuit shipped in ``data/aes_128.txt``.

Inputs are the 128 key bits followed by the 128 plaintext bits, output is the
128-bit ciphertext; every byte is laid out most significant bit first, bytes
in FIPS-197 order.  The S-box is the Boyar-Peralta depth-16 circuit with 32
AND gates, so the full cipher (160 state S-boxes plus 40 key-schedule S-boxes)
has 6400 ANDs.  XNOR is written as XOR followed by INV.

Run ``python -m hermes.boolcirc.aesgen OUT`` to regenerate the file.
"""
from __future__ import annotations

import sys

Byte = list[int]  # 8 wire ids, MSB first

RCON = (0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1B, 0x36)


class CircuitBuilder:
    def __init__(self, n_inputs: int):
        self.next_wire = n_inputs
        self.gates: list[tuple[str, tuple[int, ...], int]] = []

    def _new(self, kind: str, *ins: int) -> int:
        w = self.next_wire
        self.next_wire += 1
        self.gates.append((kind, ins, w))
        return w

    def xor(self, a: int, b: int) -> int:
        return self._new("XOR", a, b)

    def and_(self, a: int, b: int) -> int:
        return self._new("AND", a, b)

    def inv(self, a: int) -> int:
        return self._new("INV", a)

    def xnor(self, a: int, b: int) -> int:
        return self.inv(self.xor(a, b))

    def xor_bytes(self, a: Byte, b: Byte) -> Byte:
        return [self.xor(x, y) for x, y in zip(a, b)]

    def to_text(self, input_sizes: list[int], outputs: list[int]) -> str:
        """Renumber so outputs take the last wires, then serialise."""
        n_in = sum(input_sizes)
        out_set = set(outputs)
        if len(out_set) != len(outputs) or any(w < n_in for w in outputs):
            raise ValueError("outputs must be distinct gate wires")
        remap = {w: w for w in range(n_in)}
        nxt = n_in
        for _, _, w in self.gates:
            if w not in out_set:
                remap[w] = nxt
                nxt += 1
        for w in outputs:
            remap[w] = nxt
            nxt += 1
        lines = [f"{len(self.gates)} {nxt}",
                 " ".join(map(str, [len(input_sizes), *input_sizes])),
                 f"1 {len(outputs)}", ""]
        for kind, ins, w in self.gates:
            args = " ".join(str(remap[i]) for i in ins)
            lines.append(f"{len(ins)} 1 {args} {remap[w]} {kind}")
        return "\n".join(lines) + "\n"


def sbox(b: CircuitBuilder, x: Byte) -> Byte:
    x0, x1, x2, x3, x4, x5, x6, x7 = x
    X, A = b.xor, b.and_
    # top linear layer
    y14 = X(x3, x5); y13 = X(x0, x6); y9 = X(x0, x3); y8 = X(x0, x5)
    t0 = X(x1, x2); y1 = X(t0, x7); y4 = X(y1, x3); y12 = X(y13, y14)
    y2 = X(y1, x0); y5 = X(y1, x6); y3 = X(y5, y8); t1 = X(x4, y12)
    y15 = X(t1, x5); y20 = X(t1, x1); y6 = X(y15, x7); y10 = X(y15, t0)
    y11 = X(y20, y9); y7 = X(x7, y11); y17 = X(y10, y11); y19 = X(y10, y8)
    y16 = X(t0, y11); y21 = X(y13, y16); y18 = X(x0, y16)
    # nonlinear middle
    t2 = A(y12, y15); t3 = A(y3, y6); t4 = X(t3, t2); t5 = A(y4, x7)
    t6 = X(t5, t2); t7 = A(y13, y16); t8 = A(y5, y1); t9 = X(t8, t7)
    t10 = A(y2, y7); t11 = X(t10, t7); t12 = A(y9, y11); t13 = A(y14, y17)
    t14 = X(t13, t12); t15 = A(y8, y10); t16 = X(t15, t12); t17 = X(t4, t14)
    t18 = X(t6, t16); t19 = X(t9, t14); t20 = X(t11, t16); t21 = X(t17, y20)
    t22 = X(t18, y19); t23 = X(t19, y21); t24 = X(t20, y18); t25 = X(t21, t22)
    t26 = A(t21, t23); t27 = X(t24, t26); t28 = A(t25, t27); t29 = X(t28, t22)
    t30 = X(t23, t24); t31 = X(t22, t26); t32 = A(t31, t30); t33 = X(t32, t24)
    t34 = X(t23, t33); t35 = X(t27, t33); t36 = A(t24, t35); t37 = X(t36, t34)
    t38 = X(t27, t36); t39 = A(t29, t38); t40 = X(t25, t39); t41 = X(t40, t37)
    t42 = X(t29, t33); t43 = X(t29, t40); t44 = X(t33, t37); t45 = X(t42, t41)
    z0 = A(t44, y15); z1 = A(t37, y6); z2 = A(t33, x7); z3 = A(t43, y16)
    z4 = A(t40, y1); z5 = A(t29, y7); z6 = A(t42, y11); z7 = A(t45, y17)
    z8 = A(t41, y10); z9 = A(t44, y12); z10 = A(t37, y3); z11 = A(t33, y4)
    z12 = A(t43, y13); z13 = A(t40, y5); z14 = A(t29, y2); z15 = A(t42, y9)
    z16 = A(t45, y14); z17 = A(t41, y8)
    # bottom linear layer
    t46 = X(z15, z16); t47 = X(z10, z11); t48 = X(z5, z13); t49 = X(z9, z10)
    t50 = X(z2, z12); t51 = X(z2, z5); t52 = X(z7, z8); t53 = X(z0, z3)
    t54 = X(z6, z7); t55 = X(z16, z17); t56 = X(z12, t48); t57 = X(t50, t53)
    t58 = X(z4, t46); t59 = X(z3, t54); t60 = X(t46, t57); t61 = X(z14, t57)
    t62 = X(t52, t58); t63 = X(t49, t58); t64 = X(z4, t59); t65 = X(t61, t62)
    t66 = X(z1, t63); s0 = X(t59, t63); s6 = b.xnor(t56, t62); s7 = b.xnor(t48, t60)
    t67 = X(t64, t65); s3 = X(t53, t66); s4 = X(t51, t66); s5 = X(t47, t65)
    s1 = b.xnor(t64, s3); s2 = b.xnor(t55, t67)
    return [s0, s1, s2, s3, s4, s5, s6, s7]


def xtime(b: CircuitBuilder, a: Byte) -> Byte:
    hi = a[0]
    # shift left, then reduce by 0x1B (bits 3, 4, 6, 7 in MSB-first order)
    return [a[1], a[2], a[3], b.xor(a[4], hi), b.xor(a[5], hi), a[6], b.xor(a[7], hi), hi]


def mix_column(b: CircuitBuilder, col: list[Byte]) -> list[Byte]:
    total = b.xor_bytes(b.xor_bytes(col[0], col[1]), b.xor_bytes(col[2], col[3]))
    out = []
    for r in range(4):
        t = xtime(b, b.xor_bytes(col[r], col[(r + 1) % 4]))
        out.append(b.xor_bytes(b.xor_bytes(col[r], total), t))
    return out


def add_const(b: CircuitBuilder, x: Byte, c: int) -> Byte:
    return [b.inv(w) if (c >> (7 - i)) & 1 else w for i, w in enumerate(x)]


def build_aes128() -> str:
    b = CircuitBuilder(256)
    key = [list(range(8 * i, 8 * i + 8)) for i in range(16)]
    pt = [list(range(128 + 8 * i, 128 + 8 * i + 8)) for i in range(16)]

    words = [key[4 * i:4 * i + 4] for i in range(4)]
    for i in range(4, 44):
        temp = words[i - 1]
        if i % 4 == 0:
            temp = [sbox(b, x) for x in temp[1:] + temp[:1]]
            temp[0] = add_const(b, temp[0], RCON[i // 4 - 1])
        words.append([b.xor_bytes(x, y) for x, y in zip(words[i - 4], temp)])
    round_keys = [[byte for w in words[4 * r:4 * r + 4] for byte in w] for r in range(11)]

    state = [b.xor_bytes(p, k) for p, k in zip(pt, round_keys[0])]
    for rnd in range(1, 11):
        state = [sbox(b, x) for x in state]
        # state byte i sits at row i % 4, column i // 4
        state = [state[(i % 4) + 4 * ((i // 4 + i % 4) % 4)] for i in range(16)]
        if rnd < 10:
            cols = [mix_column(b, state[4 * c:4 * c + 4]) for c in range(4)]
            state = [byte for col in cols for byte in col]
        state = [b.xor_bytes(x, k) for x, k in zip(state, round_keys[rnd])]
    return b.to_text([128, 128], [w for byte in state for w in byte])


if __name__ == "__main__":
    text = build_aes128()
    if len(sys.argv) > 1:
        with open(sys.argv[1], "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
