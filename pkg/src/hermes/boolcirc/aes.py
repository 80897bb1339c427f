"""The vendored AES-128 circuit and cleartext AES helpers used as oracles."""
from __future__ import annotations

import hashlib
from functools import lru_cache
from importlib import resources
from typing import Sequence

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .bristol import BristolCircuit, parse_bristol
from .shared import counter_block

AES_CIRCUIT_SHA256 = "2bf14d25b38acd1cf1305602d59a09660ea6ac861c345ecd968422e22783bcc1"
AES_AND_COUNT = 6400
BLOCK_MASK = (1 << 128) - 1


class CircuitIntegrityError(ValueError):
    pass


def load_circuit_text(text: str, expected_sha256: str | None = AES_CIRCUIT_SHA256) -> BristolCircuit:
    if expected_sha256 is not None:
        digest = hashlib.sha256(text.encode()).hexdigest()
        if digest != expected_sha256:
            raise CircuitIntegrityError(f"AES circuit hash {digest} does not match pin")
    circ = parse_bristol(text)
    if circ.and_count != AES_AND_COUNT or circ.input_sizes != [128, 128] or circ.output_sizes != [128]:
        raise CircuitIntegrityError("not an AES-128 circuit")
    return circ


@lru_cache(maxsize=1)
def aes_circuit() -> BristolCircuit:
    text = resources.files(__package__).joinpath("data/aes_128.txt").read_text()
    return load_circuit_text(text)


def aes_block(key: int, block: int) -> int:
    enc = Cipher(algorithms.AES(key.to_bytes(16, "big")), modes.ECB()).encryptor()
    return int.from_bytes(enc.update(block.to_bytes(16, "big")), "big")


def aes_ctr(key: int, nonce: int, blocks: Sequence[int]) -> list[int]:
    return [m ^ aes_block(key, counter_block(nonce, j)) for j, m in enumerate(blocks, 1)]


def cbc_mac(key: int, blocks: Sequence[int]) -> int:
    c = 0
    for m in blocks:
        c = aes_block(key, c ^ m)
    return c
