"""Vectorized write and query paths for million-key simulations.

These functions operate on whole key populations at once but are required
to be observationally identical to looping the scalar region operations;
the test suite holds the two paths byte-for-byte equal on shared workloads.
Keys are rows of a (n, width) uint8 array, values rows of (n, value_width).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ResolutionPolicy, StoreConfig
from .hashing import bulk_addresses, bulk_checksums
from .store import MemoryRegion

_U = np.uint64


def addresses_for(keys: np.ndarray, cfg: StoreConfig) -> np.ndarray:
    return bulk_addresses(keys, cfg.copies, cfg.slots, cfg.address_seed)


def checksums_for(keys: np.ndarray, cfg: StoreConfig) -> np.ndarray:
    return bulk_checksums(keys, cfg.checksum_bits, cfg.checksum_seed)


def checksum_bytes(checksums: np.ndarray, cfg: StoreConfig) -> np.ndarray:
    """(n, checksum_width) big-endian byte columns of the checksums."""
    w = cfg.checksum_width
    out = np.empty((len(checksums), w), dtype=np.uint8)
    for col in range(w):
        out[:, col] = (checksums >> _U(8 * (w - 1 - col))).astype(np.uint8)
    return out


def payloads_for(keys: np.ndarray, values: np.ndarray, cfg: StoreConfig) -> np.ndarray:
    """Slot images (checksum || value) for each key/value row."""
    n = len(keys)
    if values.shape != (n, cfg.value_width):
        raise ValueError("values must be (n, value_width)")
    out = np.empty((n, cfg.slot_width), dtype=np.uint8)
    out[:, : cfg.checksum_width] = checksum_bytes(checksums_for(keys, cfg), cfg)
    out[:, cfg.checksum_width :] = values
    return out


def bulk_write(region: MemoryRegion, keys: np.ndarray, values: np.ndarray,
               addresses: np.ndarray | None = None) -> np.ndarray:
    """Write every (key, value) row in row order; later rows overwrite earlier.

    Relies on numpy fancy assignment applying duplicate indices in order
    (last write wins), which the suite locks against a scalar oracle.
    Returns the (n, copies) address matrix.
    """
    cfg = region.cfg
    if addresses is None:
        addresses = addresses_for(keys, cfg)
    payloads = payloads_for(keys, values, cfg)
    flat = addresses.reshape(-1)
    region.buf[flat] = np.repeat(payloads, cfg.copies, axis=0)
    region.valid[flat] = True
    return addresses


@dataclass
class BulkQueryOutcome:
    """Per-key query outcomes over a region snapshot."""

    answered: np.ndarray          # bool: policy produced a value
    correct: np.ndarray | None    # bool: value equals the given truth row
    matched: np.ndarray           # uint8: slots whose checksum matched

    @property
    def answer_rate(self) -> float:
        return float(self.answered.mean())

    @property
    def success_rate(self) -> float:
        if self.correct is None:
            raise ValueError("no truth values supplied")
        return float(self.correct.mean())

    @property
    def error_count(self) -> int:
        if self.correct is None:
            raise ValueError("no truth values supplied")
        return int((self.answered & ~self.correct).sum())


def bulk_query(region: MemoryRegion, keys: np.ndarray,
               truth: np.ndarray | None = None,
               policy: ResolutionPolicy | None = None,
               addresses: np.ndarray | None = None) -> BulkQueryOutcome:
    """Query every key row against the region under a policy."""
    cfg = region.cfg
    policy = policy or cfg.policy
    n = len(keys)
    copies = cfg.copies
    if addresses is None:
        addresses = addresses_for(keys, cfg)
    gathered = region.buf[addresses]                      # (n, copies, slot_width)
    expect = checksum_bytes(checksums_for(keys, cfg), cfg)[:, None, :]
    matched = (gathered[:, :, : cfg.checksum_width] == expect).all(-1)  # (n, copies)
    vals = gathered[:, :, cfg.checksum_width :]

    # pairwise value equality among the copies
    eq = np.ones((n, copies, copies), dtype=bool)
    for i in range(copies):
        for j in range(i + 1, copies):
            e = (vals[:, i] == vals[:, j]).all(-1)
            eq[:, i, j] = e
            eq[:, j, i] = e

    any_match = matched.any(1)
    if policy.kind == "single":
        conflict = np.zeros(n, dtype=bool)
        for i in range(copies):
            for j in range(i + 1, copies):
                conflict |= matched[:, i] & matched[:, j] & ~eq[:, i, j]
        answered = any_match & ~conflict
        pick = np.argmax(matched, axis=1)
    else:
        counts = np.where(matched, (eq & matched[:, None, :]).sum(-1), 0)
        if policy.kind == "consensus":
            candidate = matched & (counts >= policy.min_count)
        else:
            candidate = matched
        counts = np.where(candidate, counts, 0)
        best = counts.max(1)
        winners = candidate & (counts == best[:, None]) & (best[:, None] > 0)
        conflict = np.zeros(n, dtype=bool)
        for i in range(copies):
            for j in range(i + 1, copies):
                conflict |= winners[:, i] & winners[:, j] & ~eq[:, i, j]
        answered = (best > 0) & ~conflict
        pick = np.argmax(winners, axis=1)

    correct = None
    if truth is not None:
        returned = vals[np.arange(n), pick]
        correct = answered & (returned == truth).all(-1)
    return BulkQueryOutcome(answered, correct, matched.sum(1).astype(np.uint8))
