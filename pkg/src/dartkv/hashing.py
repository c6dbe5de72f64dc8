"""Keyed 64-bit hashing for slot addressing, key checksums and collector selection.

Everything here is a pure function of (input bytes, seed), so writers and
queriers that share the same seeds agree on addresses without any shared
state. The vectorized twins (`bulk_*`) produce bit-identical results to the
scalar functions and exist only so million-key simulations stay fast.
"""

from __future__ import annotations

import struct

import numpy as np

MASK64 = (1 << 64) - 1

_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# rehash attempts before falling back to linear probing, see slot_addresses()
_MAX_REHASH = 64


def mix64(z: int) -> int:
    """Full-avalanche finalizer (splitmix64 style)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def hash64(data: bytes, seed: int) -> int:
    """Hash a byte string under a 64-bit seed.

    Absorbs zero-padded 8-byte little-endian blocks through the avalanche
    mixer; the true input length is folded into the initial state so padded
    inputs cannot collide with their unpadded prefixes.
    """
    h = mix64(seed ^ ((len(data) * _GOLDEN) & MASK64))
    if len(data) % 8:
        data = data + b"\x00" * (8 - len(data) % 8)
    for (word,) in struct.iter_unpack("<Q", data):
        h = mix64(h ^ word)
    return h


def key_checksum(key: bytes, bits: int, seed: int) -> int:
    """Checksum stored next to a value: the low `bits` of hash64(key)."""
    if not 1 <= bits <= 64:
        raise ValueError(f"checksum bits must be in [1, 64], got {bits}")
    return hash64(key, seed) & ((1 << bits) - 1)


def slot_addresses(key: bytes, copies: int, slots: int, seed: int) -> tuple[int, ...]:
    """Pairwise-distinct slot indices for a key, stateless given the seed.

    Copy n starts from hash64(key || le32(n)) mod slots. If that candidate
    collides with an earlier copy, a shared rehash counter (starting at
    `copies`) is appended instead and advanced until the index is fresh.
    After _MAX_REHASH attempts we linear-probe so termination never depends
    on hash behaviour; with slots >= copies an index always exists.
    """
    out: list[int] = []
    counter = copies
    for n in range(copies):
        idx = hash64(key + struct.pack("<I", n), seed) % slots
        tries = 0
        while idx in out:
            tries += 1
            if tries <= _MAX_REHASH:
                idx = hash64(key + struct.pack("<I", counter), seed) % slots
                counter += 1
            else:
                idx = (idx + 1) % slots
        out.append(idx)
    return tuple(out)


def collector_for_key(key: bytes, num_collectors: int, seed: int) -> int:
    """Which collector holds every copy of this key's data."""
    return hash64(key, seed) % num_collectors


# ---------------------------------------------------------------------------
# Vectorized twins. Keys are rows of a (n, width) uint8 array, all the same
# width; results match the scalar functions byte for byte.
# ---------------------------------------------------------------------------

_U = np.uint64


def _mix64_vec(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _U(30))) * _U(_MIX1)
    z = (z ^ (z >> _U(27))) * _U(_MIX2)
    return z ^ (z >> _U(31))


def _absorb(rows: np.ndarray, length: int, seed: int) -> np.ndarray:
    """Run the block chain over zero-padded rows whose true length is `length`."""
    n, width = rows.shape
    padded = width if width % 8 == 0 else width + (8 - width % 8)
    if padded != width or not rows.flags.c_contiguous:
        buf = np.zeros((n, padded), dtype=np.uint8)
        buf[:, :width] = rows
    else:
        buf = rows
    words = buf.view("<u8")
    h = np.full(n, mix64(seed ^ ((length * _GOLDEN) & MASK64)), dtype=np.uint64)
    for j in range(words.shape[1]):
        h = _mix64_vec(h ^ words[:, j])
    return h


def bulk_hash(keys: np.ndarray, seed: int) -> np.ndarray:
    """hash64(row, seed) for every row of a (n, width) uint8 array."""
    return _absorb(keys, keys.shape[1], seed)


def bulk_counter_hash(keys: np.ndarray, counter: int, seed: int) -> np.ndarray:
    """hash64(row || le32(counter), seed) for every row."""
    n, width = keys.shape
    suffixed = np.empty((n, width + 4), dtype=np.uint8)
    suffixed[:, :width] = keys
    suffixed[:, width:] = np.frombuffer(struct.pack("<I", counter), dtype=np.uint8)
    return _absorb(suffixed, width + 4, seed)


def bulk_checksums(keys: np.ndarray, bits: int, seed: int) -> np.ndarray:
    if not 1 <= bits <= 64:
        raise ValueError(f"checksum bits must be in [1, 64], got {bits}")
    mask = _U(MASK64 if bits == 64 else (1 << bits) - 1)
    return bulk_hash(keys, seed) & mask


def bulk_addresses(keys: np.ndarray, copies: int, slots: int, seed: int) -> np.ndarray:
    """(n, copies) int64 slot indices; rows with colliding primary candidates
    fall back to the scalar path so results always equal slot_addresses()."""
    cols = [bulk_counter_hash(keys, c, seed) % _U(slots) for c in range(copies)]
    addrs = np.stack(cols, axis=1).astype(np.int64)
    if copies > 1:
        dup = np.zeros(len(keys), dtype=bool)
        for i in range(copies):
            for j in range(i + 1, copies):
                dup |= addrs[:, i] == addrs[:, j]
        for row in np.flatnonzero(dup):
            addrs[row] = slot_addresses(bytes(keys[row]), copies, slots, seed)
    return addrs


def bulk_collectors(keys: np.ndarray, num_collectors: int, seed: int) -> np.ndarray:
    return (bulk_hash(keys, seed) % _U(num_collectors)).astype(np.int64)
