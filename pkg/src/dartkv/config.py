"""Store configuration, query policies and result types."""

from __future__ import annotations

from dataclasses import dataclass

DEFAULT_VALUE_WIDTH = 20  # 160-bit values
DEFAULT_CHECKSUM_BITS = 32
DEFAULT_COPIES = 2
DEFAULT_MAX_KEY_LEN = 64

DEFAULT_ADDRESS_SEED = 0x5DA571F08C3B21A7
DEFAULT_CHECKSUM_SEED = 0x9B972A41D6E853C9
DEFAULT_COLLECTOR_SEED = 0x3C6EF372FE94F82B

DEFAULT_BASE_ADDRESS = 0x00007F4200000000


class ConfigError(ValueError):
    """Invalid store or policy configuration."""


_POLICY_KINDS = ("single", "plurality", "consensus")


@dataclass(frozen=True)
class ResolutionPolicy:
    """How checksum-matching slot values resolve into a query answer.

    single     answer only when every matching slot holds one value
    plurality  answer with the strictly most frequent matching value
    consensus  answer only when a value occurs at least `min_count` times
    """

    kind: str
    min_count: int = 2

    def __post_init__(self):
        if self.kind not in _POLICY_KINDS:
            raise ConfigError(f"unknown policy kind {self.kind!r}")
        if self.kind == "consensus" and self.min_count < 2:
            raise ConfigError("consensus requires a minimum count of at least 2")

    @classmethod
    def parse(cls, text: str) -> "ResolutionPolicy":
        """Parse 'single', 'plurality', 'consensus' or 'consensus:k'."""
        name, _, arg = text.strip().lower().partition(":")
        if name == "consensus":
            return cls("consensus", int(arg) if arg else 2)
        if arg:
            raise ConfigError(f"policy {name!r} takes no argument")
        return cls(name)

    def __str__(self):
        if self.kind == "consensus":
            return f"consensus:{self.min_count}"
        return self.kind


SINGLE_MATCH = ResolutionPolicy("single")
PLURALITY_VOTE = ResolutionPolicy("plurality")


def consensus(min_count: int = 2) -> ResolutionPolicy:
    return ResolutionPolicy("consensus", min_count)


@dataclass(frozen=True)
class StoreConfig:
    """All tunables shared by writers and the collector.

    slots is the region size, copies the number of redundant slots per key,
    checksum_bits the width of the per-slot key checksum. The three seeds
    drive addressing, checksums and collector selection independently.
    """

    slots: int
    copies: int = DEFAULT_COPIES
    checksum_bits: int = DEFAULT_CHECKSUM_BITS
    value_width: int = DEFAULT_VALUE_WIDTH
    address_seed: int = DEFAULT_ADDRESS_SEED
    checksum_seed: int = DEFAULT_CHECKSUM_SEED
    collector_seed: int = DEFAULT_COLLECTOR_SEED
    num_collectors: int = 1
    policy: ResolutionPolicy = SINGLE_MATCH
    max_key_len: int = DEFAULT_MAX_KEY_LEN

    def __post_init__(self):
        if self.copies < 1:
            raise ConfigError("copies must be at least 1")
        if self.slots < self.copies:
            raise ConfigError("region must have at least as many slots as copies")
        if not 1 <= self.checksum_bits <= 64:
            raise ConfigError("checksum_bits must be in [1, 64]")
        if self.value_width < 1:
            raise ConfigError("value_width must be positive")
        if self.num_collectors < 1:
            raise ConfigError("num_collectors must be at least 1")
        if self.max_key_len < 1:
            raise ConfigError("max_key_len must be positive")

    @property
    def checksum_width(self) -> int:
        """Bytes used by the checksum inside a slot."""
        return (self.checksum_bits + 7) // 8

    @property
    def slot_width(self) -> int:
        """Slot size in bytes: big-endian checksum, then the value."""
        return self.checksum_width + self.value_width

    @property
    def region_bytes(self) -> int:
        return self.slots * self.slot_width


@dataclass
class QueryResult:
    """Outcome of one query plus resolution diagnostics.

    value is None for an empty return. matched_slots counts slots whose
    checksum matched; distinct_values counts distinct values among them.
    """

    value: bytes | None
    matched_slots: int
    distinct_values: int

    @property
    def found(self) -> bool:
        return self.value is not None
