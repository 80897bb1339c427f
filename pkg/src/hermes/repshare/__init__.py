"""Semi-honest 2-out-of-3 replicated secret sharing."""
from .engine import And, Fork, Mul, Open, OpenBits, Party, Request, run_three
from .ops import EqzConfig, eqz_pair, eqz_pairs, mul, open_, product_tree, select_key
from .shares import (BIT, IntegrityError, RepShare, ThresholdError, components_to_shares,
                     const_share, reconstruct, share, share_many)
from .tape import (PreprocessingExhausted, PreprocessingTape, Prg, TapeCounts, TapeFormatError,
                   dealer_generate)

__all__ = [
    "And", "BIT", "EqzConfig", "Fork", "IntegrityError", "Mul", "Open", "OpenBits", "Party",
    "PreprocessingExhausted", "PreprocessingTape", "Prg", "RepShare", "Request", "TapeCounts",
    "TapeFormatError", "ThresholdError", "components_to_shares", "const_share", "dealer_generate",
    "eqz_pair", "eqz_pairs", "mul", "open_", "product_tree", "reconstruct", "run_three",
    "select_key", "share", "share_many",
]
