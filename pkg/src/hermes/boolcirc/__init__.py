"""Bristol circuits and their evaluation over replicated GF(2) shares."""
from .aes import (AES_AND_COUNT, AES_CIRCUIT_SHA256, CircuitIntegrityError, aes_block, aes_circuit,
                  aes_ctr, cbc_mac, load_circuit_text)
from .bristol import (BristolCircuit, BristolError, CyclicDependency, DanglingWire, Gate,
                      MalformedGate, MalformedHeader, MultipleAssignment, UnknownGateKind,
                      WireOutOfRange, evaluate, evaluate_packed, parse_bristol, unparse_bristol)
from .shared import (CompiledCircuit, aes_ctr_shared, aes_shared, blocks_to_wires, cbc_mac_shared,
                     counter_block, equality_select_binary, eval_shared, wires_to_blocks)

__all__ = [
    "AES_AND_COUNT", "AES_CIRCUIT_SHA256", "BristolCircuit", "BristolError", "CircuitIntegrityError",
    "CompiledCircuit", "CyclicDependency", "DanglingWire", "Gate", "MalformedGate", "MalformedHeader",
    "MultipleAssignment", "UnknownGateKind", "WireOutOfRange", "aes_block", "aes_circuit", "aes_ctr",
    "aes_ctr_shared", "aes_shared", "blocks_to_wires", "cbc_mac", "cbc_mac_shared", "counter_block",
    "equality_select_binary", "eval_shared", "evaluate", "evaluate_packed", "load_circuit_text",
    "parse_bristol", "unparse_bristol", "wires_to_blocks",
]
