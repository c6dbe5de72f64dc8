"""The slot region and its write/query operations.

A region is a flat array of fixed-width slots. A slot holds a big-endian
key checksum followed by the value bytes; that byte layout is also the
payload carried by wire reports, so applying a parsed report and writing
through this module produce identical region bytes.

Writes are unconditional overwrites of whole slots. Queries read the key's
derived slots, keep the ones whose checksum matches, and resolve the kept
values under the configured policy. A zeroed slot is indistinguishable from
a written slot whose checksum and value are zero; queries deliberately do
not consult the separate validity flags (those are emulation diagnostics a
real collector would not have).
"""

from __future__ import annotations

import struct

import numpy as np

from .config import ConfigError, QueryResult, ResolutionPolicy, StoreConfig
from .config import DEFAULT_BASE_ADDRESS
from .hashing import collector_for_key, hash64, key_checksum, slot_addresses


def compute_checksum(key: bytes, cfg: StoreConfig) -> int:
    return key_checksum(key, cfg.checksum_bits, cfg.checksum_seed)


def derive_addresses(key: bytes, cfg: StoreConfig) -> tuple[int, ...]:
    return slot_addresses(key, cfg.copies, cfg.slots, cfg.address_seed)


def select_collector(key: bytes, cfg: StoreConfig) -> int:
    return collector_for_key(key, cfg.num_collectors, cfg.collector_seed)


def _check_key(key: bytes, cfg: StoreConfig):
    if not key:
        raise ValueError("key must be non-empty")
    if len(key) > cfg.max_key_len:
        raise ValueError(f"key longer than {cfg.max_key_len} bytes")


def _check_value(value: bytes, cfg: StoreConfig):
    if len(value) != cfg.value_width:
        raise ValueError(
            f"value must be exactly {cfg.value_width} bytes, got {len(value)}"
        )


class MemoryRegion:
    """Array of slots emulating the collector's remotely writable memory."""

    def __init__(self, cfg: StoreConfig, base_address: int = DEFAULT_BASE_ADDRESS):
        self.cfg = cfg
        self.base_address = base_address
        self.slot_width = cfg.slot_width
        self.buf = np.zeros((cfg.slots, cfg.slot_width), dtype=np.uint8)
        # diagnostics only -- never consulted by query()
        self.valid = np.zeros(cfg.slots, dtype=bool)
        self._flat = memoryview(self.buf.reshape(-1))

    # -- raw slot access ----------------------------------------------------

    def slot_bytes(self, index: int) -> bytes:
        w = self.slot_width
        return bytes(self._flat[index * w : (index + 1) * w])

    def write_slot_bytes(self, index: int, payload) -> None:
        """Replace one slot with raw payload bytes (checksum || value).

        A single buffer copy under the GIL, so concurrent readers observe
        either the old or the new slot, never a torn one.
        """
        w = self.slot_width
        self._flat[index * w : (index + 1) * w] = payload
        self.valid[index] = True

    def slot(self, index: int) -> tuple[int, bytes]:
        raw = self.slot_bytes(index)
        w = self.cfg.checksum_width
        return int.from_bytes(raw[:w], "big"), raw[w:]

    def to_bytes(self) -> bytes:
        return self.buf.tobytes()

    @property
    def filled_slots(self) -> int:
        return int(self.valid.sum())

    # -- store operations ---------------------------------------------------

    def payload_for(self, key: bytes, value: bytes) -> bytes:
        _check_key(key, self.cfg)
        _check_value(value, self.cfg)
        csum = compute_checksum(key, self.cfg)
        return csum.to_bytes(self.cfg.checksum_width, "big") + value

    def write(self, key: bytes, value: bytes) -> tuple[int, ...]:
        """Store the value in all derived slots, overwriting prior contents.

        Returns the slot indices written.
        """
        payload = self.payload_for(key, value)
        addresses = derive_addresses(key, self.cfg)
        for idx in addresses:
            self.write_slot_bytes(idx, payload)
        return addresses

    def write_copy(self, key: bytes, value: bytes, copy_index: int) -> int:
        """Store only the copy_index-th slot, as one wire report would."""
        if not 0 <= copy_index < self.cfg.copies:
            raise ValueError(
                f"copy index {copy_index} out of range [0, {self.cfg.copies})"
            )
        payload = self.payload_for(key, value)
        idx = derive_addresses(key, self.cfg)[copy_index]
        self.write_slot_bytes(idx, payload)
        return idx

    def query(self, key: bytes, policy: ResolutionPolicy | None = None) -> QueryResult:
        """Resolve a key against the region under a policy.

        Slots whose checksum does not match the key's are discarded; the
        survivors' values are resolved per the policy. An empty result is a
        normal outcome, not an error.
        """
        _check_key(key, self.cfg)
        policy = policy or self.cfg.policy
        csum = compute_checksum(key, self.cfg)
        counts: dict[bytes, int] = {}
        matched = 0
        for idx in derive_addresses(key, self.cfg):
            slot_csum, value = self.slot(idx)
            if slot_csum == csum:
                matched += 1
                counts[value] = counts.get(value, 0) + 1
        return _resolve(policy, counts, matched)


def _resolve(policy: ResolutionPolicy, counts: dict[bytes, int], matched: int) -> QueryResult:
    distinct = len(counts)
    if not counts:
        return QueryResult(None, 0, 0)
    if policy.kind == "single":
        if distinct == 1:
            (value,) = counts
            return QueryResult(value, matched, 1)
        return QueryResult(None, matched, distinct)
    if policy.kind == "consensus":
        counts = {v: c for v, c in counts.items() if c >= policy.min_count}
        if not counts:
            return QueryResult(None, matched, distinct)
    # plurality over the (possibly consensus-filtered) candidates: the win
    # must be strict, ties yield an empty return rather than a guess
    best = max(counts.values())
    winners = [v for v, c in counts.items() if c == best]
    if len(winners) == 1:
        return QueryResult(winners[0], matched, distinct)
    return QueryResult(None, matched, distinct)


# -- module-level operation aliases ----------------------------------------
# The class methods above are the primary API; these exist for callers that
# prefer the functional spelling.

def write_report(region: MemoryRegion, key: bytes, value: bytes) -> tuple[int, ...]:
    return region.write(key, value)


def write_single_copy(region: MemoryRegion, key: bytes, value: bytes, copy_index: int) -> int:
    return region.write_copy(key, value, copy_index)


def query(region: MemoryRegion, key: bytes, policy: ResolutionPolicy | None = None) -> QueryResult:
    return region.query(key, policy)


# -- region snapshot files ---------------------------------------------------
# Header: magic, version, checksum_bits, copies, slots, value_width, the
# three seeds, base address; then the raw slot bytes.

SNAPSHOT_MAGIC = b"DART"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct(">4sHHIQIQQQQ")


class SnapshotFormatError(ValueError):
    """Region file is not a readable snapshot."""


def save_region(region: MemoryRegion, path) -> None:
    cfg = region.cfg
    header = _HEADER.pack(
        SNAPSHOT_MAGIC,
        SNAPSHOT_VERSION,
        cfg.checksum_bits,
        cfg.copies,
        cfg.slots,
        cfg.value_width,
        cfg.address_seed,
        cfg.checksum_seed,
        cfg.collector_seed,
        region.base_address,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(region.to_bytes())


def load_region(path, num_collectors: int = 1,
                policy: ResolutionPolicy | None = None) -> MemoryRegion:
    """Rebuild a region from a snapshot file.

    num_collectors and policy are not stored in the file and default unless
    given. Validity flags are inferred from non-zero slots (diagnostic only).
    """
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise SnapshotFormatError("truncated snapshot header")
        (magic, version, bits, copies, slots, value_width,
         aseed, cseed, lseed, base) = _HEADER.unpack(header)
        if magic != SNAPSHOT_MAGIC:
            raise SnapshotFormatError(f"bad magic {magic!r}")
        if version != SNAPSHOT_VERSION:
            raise SnapshotFormatError(f"unsupported snapshot version {version}")
        kwargs = {}
        if policy is not None:
            kwargs["policy"] = policy
        cfg = StoreConfig(
            slots=slots, copies=copies, checksum_bits=bits,
            value_width=value_width, address_seed=aseed, checksum_seed=cseed,
            collector_seed=lseed, num_collectors=num_collectors, **kwargs,
        )
        region = MemoryRegion(cfg, base_address=base)
        body = fh.read(cfg.region_bytes)
        if len(body) != cfg.region_bytes:
            raise SnapshotFormatError("truncated snapshot body")
    region.buf[:] = np.frombuffer(body, dtype=np.uint8).reshape(slots, cfg.slot_width)
    region.valid[:] = region.buf.any(axis=1)
    return region
