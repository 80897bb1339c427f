"""MPC building blocks written as engine programs (use with ``yield from``)."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .engine import Mul, Open, Party
from .shares import RepShare


@dataclass(frozen=True)
class EqzConfig:
    k: int = 32           # plaintext bit bound of compared values
    s: int = 40           # statistical masking parameter
    tree_arity: int = 2

    @property
    def mask_bits(self) -> int:
        return 2 * self.k + self.s

    def check_field(self, p: int) -> None:
        if p <= 2 ** (2 * self.k + self.s + 2):
            raise ValueError(f"field too small for k={self.k}, s={self.s}")

    def tree_depth(self) -> int:
        return math.ceil(math.log2(self.mask_bits))

    def rounds(self) -> int:
        """Square + open + product tree."""
        return 2 + self.tree_depth()


def mul(xs: Sequence[RepShare], ys: Sequence[RepShare]):
    return (yield Mul(list(xs), list(ys)))


def open_(xs: Sequence[RepShare], verify: bool = False):
    return (yield Open(list(xs), verify))


def product_tree(party: Party, groups: list[list[RepShare]]):
    """Multiply out each group; all groups advance one tree level per round."""
    groups = [list(g) for g in groups]
    while any(len(g) > 1 for g in groups):
        left, right, plan = [], [], []
        for g in groups:
            half = len(g) // 2
            left += g[0:2 * half:2]
            right += g[1:2 * half:2]
            plan.append((half, g[2 * half:]))
        prod = yield Mul(left, right)
        pos, new = 0, []
        for half, carry in plan:
            new.append(prod[pos:pos + half] + carry)
            pos += half
        groups = new
    return [g[0] if g else party.const(1) for g in groups]


def eqz_pairs(party: Party, xs: Sequence[RepShare], ys: Sequence[RepShare], cfg: EqzConfig):
    """Shared [x_j == y_j] for every pair, nothing else revealed.

    d = (x - y)^2 < 2^(2k) is masked with r = sum b_i 2^i built from shared
    random bits; c = d + r is opened and compared bitwise against the bits of
    r, so d == 0 iff every bit of c matches.  If c >= 2^(2k+s) the pair is
    certainly unequal.
    """
    if len(xs) != len(ys):
        raise ValueError("length mismatch")
    if not xs:
        return []
    p = party.field.p
    cfg.check_field(p)
    m = cfg.mask_bits
    diff = [x - y for x, y in zip(xs, ys)]
    sq = yield Mul(diff, diff)
    bits = party.tape.random_bits(m * len(xs))
    party.stats.preprocessing_consumed["random_bits"] += m * len(xs)
    masked = []
    for j, d in enumerate(sq):
        r = party.const(0)
        for i, b in enumerate(bits[j * m:(j + 1) * m]):
            r = r + b * (1 << i)
        masked.append(d + r)
    cs = yield Open(masked)
    groups = []
    for j, c in enumerate(cs):
        g = []
        for i, b in enumerate(bits[j * m:(j + 1) * m]):
            ci = (c >> i) & 1
            # e = c_i XOR b_i, factor = 1 - e
            g.append((b * (2 * ci - 1)).add_const(1 - ci))
        groups.append(g)
    res = yield from product_tree(party, groups)
    limit = 1 << m
    return [party.const(0) if c >= limit else r for c, r in zip(cs, res)]


def eqz_pair(party: Party, x: RepShare, y: RepShare, cfg: EqzConfig):
    return (yield from eqz_pairs(party, [x], [y], cfg))[0]


def select_key(party: Party, eq_bits: Sequence[RepShare], key_shares: Sequence[Sequence[RepShare]]):
    """Sum over rows of eq_y * K_y, componentwise.  One round, n mults per component."""
    if len(eq_bits) != len(key_shares):
        raise ValueError("eq_bits and key rows differ in length")
    if not key_shares:
        return []
    width = len(key_shares[0])
    if any(len(k) != width for k in key_shares):
        raise ValueError("key rows differ in width")
    xs = [e for e in eq_bits for _ in range(width)]
    ys = [c for row in key_shares for c in row]
    prods = yield Mul(xs, ys)
    out = []
    for c in range(width):
        acc = party.const(0)
        for y in range(len(eq_bits)):
            acc = acc + prods[y * width + c]
        out.append(acc)
    return out
