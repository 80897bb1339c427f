"""Trusted dealer: writes per-party preprocessing tapes for token sessions."""
from __future__ import annotations

import os
from pathlib import Path

from .protocol.step2 import required_preprocessing
from .protocol.wire import domain_of
from .repshare.tape import TapeCounts, dealer_generate


def tape_path(tape_dir: str | Path, backend: str, index: int, party: int) -> Path:
    return Path(tape_dir) / backend / f"{index:06d}.p{party}.tape"


def session_counts(backend: str, n_rows: int, m_blocks: int = 10) -> TapeCounts:
    return required_preprocessing(backend, n_rows, m_blocks)


def write_tapes(tape_dir: str | Path, backend: str, n_rows: int, count: int, seed=None,
                m_blocks: int = 10, start: int | None = None) -> list[int]:
    """Write ``count`` tape triples sized for sessions with up to ``n_rows`` rows.

    Indices continue after the highest existing one unless ``start`` is given.
    A ``seed`` makes the output reproducible (tests only).
    """
    d = Path(tape_dir) / backend
    d.mkdir(parents=True, exist_ok=True)
    if start is None:
        taken = [int(p.name.split(".")[0]) for p in d.iterdir() if p.name[:6].isdigit()]
        start = max(taken) + 1 if taken else 0
    counts = session_counts(backend, n_rows, m_blocks)
    dom = domain_of(backend)
    written = []
    for index in range(start, start + count):
        tape_seed = os.urandom(32).hex() if seed is None else f"{seed}:{index}"
        for tape in dealer_generate(counts, tape_seed, dom):
            path = tape_path(tape_dir, backend, index, tape.party)
            tmp = path.with_suffix(".tmp")
            tape.save(tmp)
            os.replace(tmp, path)
        written.append(index)
    return written
