"""Deterministic synthetic telemetry workloads.

Keys are 13-byte flow-tuple-shaped strings (two 4-byte addresses, two ports,
a protocol byte). Distinctness is guaranteed by embedding the key index in
the port/protocol bytes; the address bytes come from a seeded mixer so the
population still hashes like random traffic.
"""

from __future__ import annotations

import numpy as np

from .hashing import MASK64, _GOLDEN, mix64

FLOW_KEY_WIDTH = 13

_U = np.uint64


def _mix_indices(indices: np.ndarray, seed: int) -> np.ndarray:
    z = indices.astype(np.uint64) * _U(_GOLDEN) + _U(seed & MASK64)
    z = (z ^ (z >> _U(30))) * _U(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> _U(27))) * _U(0x94D049BB133111EB)
    return z ^ (z >> _U(31))


def flow_keys(count: int, seed: int) -> np.ndarray:
    """(count, 13) uint8 array of pairwise-distinct synthetic flow keys."""
    if count >= 1 << 40:
        raise ValueError("flow key space caps at 2**40 distinct keys")
    idx = np.arange(count, dtype=np.uint64)
    mixed = _mix_indices(idx, seed)
    keys = np.empty((count, FLOW_KEY_WIDTH), dtype=np.uint8)
    for byte in range(8):  # src/dst address bytes from the mixer
        keys[:, byte] = (mixed >> _U(8 * byte)).astype(np.uint8)
    for byte in range(5):  # ports and protocol carry the index: injective
        keys[:, 8 + byte] = (idx >> _U(8 * byte)).astype(np.uint8)
    return keys


def flow_key(index: int, seed: int) -> bytes:
    """Scalar twin of flow_keys for single-key tests and examples."""
    return bytes(flow_keys(index + 1, seed)[index])


def values_for(count: int, width: int, seed: int) -> np.ndarray:
    """(count, width) uint8 of reproducible pseudo-random telemetry values."""
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.integers(0, 256, size=(count, width), dtype=np.uint8)
