"""Deterministic random-stream management for replicated simulations.

Every replica draws from its own counter-based Philox stream keyed by
(stream seed, replica index).  Streams are independent across replicas and
across labelled purposes, so results never depend on scheduling, chunking
or the order in which replicas are processed.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def stream_seed(master_seed: int, label: str) -> int:
    """Derive an independent 64-bit stream seed from a master seed and a label."""
    key = (int(master_seed) & _MASK64).to_bytes(8, "little")
    digest = hashlib.blake2b(label.encode("utf-8"), key=key, digest_size=8).digest()
    return int.from_bytes(digest, "little")


def replica_rng(seed: int, replica: int = 0) -> np.random.Generator:
    """Counter-based generator for one replica of a stream."""
    key = np.array([int(seed) & _MASK64, int(replica) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
