"""dartkv: hash-addressed direct-write telemetry store and its toolkit."""

from .config import (
    PLURALITY_VOTE,
    SINGLE_MATCH,
    ConfigError,
    QueryResult,
    ResolutionPolicy,
    StoreConfig,
    consensus,
)
from .store import (
    MemoryRegion,
    compute_checksum,
    derive_addresses,
    load_region,
    save_region,
    select_collector,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "MemoryRegion",
    "PLURALITY_VOTE",
    "QueryResult",
    "ResolutionPolicy",
    "SINGLE_MATCH",
    "StoreConfig",
    "compute_checksum",
    "consensus",
    "derive_addresses",
    "load_region",
    "save_region",
    "select_collector",
    "__version__",
]
