import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from dartkv import hashing as H


def test_hash_deterministic():
    assert H.hash64(b"some-key", 42) == H.hash64(b"some-key", 42)
    assert H.hash64(b"some-key", 42) != H.hash64(b"some-key", 43)
    assert H.hash64(b"some-key", 42) != H.hash64(b"some-kez", 42)


def test_hash_padding_is_not_ambiguous():
    assert H.hash64(b"abc", 7) != H.hash64(b"abc\x00", 7)


def test_checksum_range_single_bit():
    seen = {H.key_checksum(bytes([i]), 1, 9) for i in range(64)}
    assert seen == {0, 1}


def test_checksum_bits_validated():
    with pytest.raises(ValueError):
        H.key_checksum(b"k", 0, 1)
    with pytest.raises(ValueError):
        H.key_checksum(b"k", 65, 1)


def test_checksum_uniformity_chi_square():
    # the analysis treats checksums as uniform; 8-bit buckets over 1e5 keys
    rng = np.random.default_rng(7)
    keys = rng.integers(0, 256, size=(100_000, 13), dtype=np.uint8)
    csums = H.bulk_checksums(keys, 8, 1234)
    counts = np.bincount(csums.astype(np.int64), minlength=256)
    p = stats.chisquare(counts).pvalue
    assert p > 0.01, f"checksum distribution not uniform (p={p})"


def test_addresses_distinct_in_range_deterministic():
    for copies in (1, 2, 3, 4):
        for slots in (copies, copies + 1, 17, 1024):
            addrs = H.slot_addresses(b"k1", copies, slots, 5)
            assert addrs == H.slot_addresses(b"k1", copies, slots, 5)
            assert len(set(addrs)) == copies
            assert all(0 <= a < slots for a in addrs)


def test_addresses_saturate_tiny_region():
    # slots == copies leaves exactly one choice; rehash/probing must find it
    for i in range(300):
        key = i.to_bytes(2, "little")
        assert sorted(H.slot_addresses(key, 3, 3, 11)) == [0, 1, 2]


@given(st.integers(1, 24), st.integers(0, 2**64 - 1),
       st.lists(st.integers(0, 255), min_size=1, max_size=40))
def test_bulk_hash_matches_scalar(width, seed, seeds):
    rng = np.random.default_rng(seeds[0])
    keys = rng.integers(0, 256, size=(len(seeds), width), dtype=np.uint8)
    out = H.bulk_hash(keys, seed)
    for i in range(len(seeds)):
        assert out[i] == H.hash64(bytes(keys[i]), seed)


@given(st.integers(0, 2**32 - 1), st.integers(0, 2**64 - 1))
def test_bulk_counter_hash_matches_scalar(counter, seed):
    rng = np.random.default_rng(counter & 0xFFFF)
    keys = rng.integers(0, 256, size=(16, 13), dtype=np.uint8)
    out = H.bulk_counter_hash(keys, counter, seed)
    for i in range(16):
        expect = H.hash64(bytes(keys[i]) + struct.pack("<I", counter), seed)
        assert out[i] == expect


@given(st.integers(1, 4), st.integers(0, 1000))
def test_bulk_addresses_match_scalar(copies, seed):
    # slots small enough that the duplicate-candidate fallback gets exercised
    slots = copies + 3
    rng = np.random.default_rng(seed)
    keys = rng.integers(0, 256, size=(64, 13), dtype=np.uint8)
    out = H.bulk_addresses(keys, copies, slots, seed)
    for i in range(64):
        assert tuple(out[i]) == H.slot_addresses(bytes(keys[i]), copies, slots, seed)


def test_collector_uniform_share():
    keys = np.random.default_rng(3).integers(0, 256, size=(1_000_000, 13),
                                             dtype=np.uint8)
    cids = H.bulk_collectors(keys, 16, 99)
    shares = np.bincount(cids, minlength=16) / len(keys)
    assert np.all(np.abs(shares - 1 / 16) < 0.01)
    one = H.collector_for_key(bytes(keys[0]), 16, 99)
    assert one == cids[0]
    assert H.collector_for_key(bytes(keys[0]), 1, 99) == 0


def test_balls_in_bins_occupancy():
    # per-slot occupancy of the derived addresses vs the Poisson law, with an
    # independently simulated balls-in-bins oracle for the max load
    slots, copies, n = 1 << 20, 2, 1_000_000
    keys = np.random.default_rng(5).integers(0, 256, size=(n, 13), dtype=np.uint8)
    addrs = H.bulk_addresses(keys, copies, slots, 17)
    occupancy = np.bincount(addrs.reshape(-1), minlength=slots)
    lam = n * copies / slots
    hist = np.bincount(occupancy)

    # oracle: independent uniform throws of the same volume
    oracle_rng = np.random.default_rng(1005)
    oracle_occ = np.bincount(
        oracle_rng.integers(0, slots, size=n * copies), minlength=slots)
    assert abs(occupancy.max() - oracle_occ.max()) <= 3

    # chi-square against Poisson pmf with tail pooling
    kmax = len(hist) - 1
    expected = stats.poisson.pmf(np.arange(kmax + 1), lam) * slots
    tail = slots - expected.sum()
    observed = np.append(hist, 0).astype(float)
    expected = np.append(expected, max(tail, 1e-9))
    # pool bins with tiny expectation
    keep = expected >= 5
    obs = np.append(observed[keep], observed[~keep].sum())
    exp = np.append(expected[keep], expected[~keep].sum())
    exp *= obs.sum() / exp.sum()
    p = stats.chisquare(obs, exp).pvalue
    assert p > 0.001, f"occupancy does not look Poisson({lam:.2f}) (p={p})"
