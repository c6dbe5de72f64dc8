import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dartkv import analytic as A
from dartkv import workload
from dartkv.bulk import addresses_for, bulk_query, bulk_write
from dartkv.config import PLURALITY_VOTE, SINGLE_MATCH, StoreConfig, consensus
from dartkv.store import MemoryRegion


def test_flow_keys_unique_and_shaped():
    keys = workload.flow_keys(100_000, 1)
    assert keys.shape == (100_000, 13)
    assert len({bytes(k) for k in keys[:20_000]}) == 20_000
    # the index bytes guarantee global uniqueness
    assert len(np.unique(keys[:, 8:], axis=0)) == 100_000


def test_flow_key_scalar_twin():
    keys = workload.flow_keys(50, 7)
    for i in (0, 3, 49):
        assert workload.flow_key(i, 7) == bytes(keys[i])


def test_values_deterministic():
    a = workload.values_for(100, 20, 5)
    b = workload.values_for(100, 20, 5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, workload.values_for(100, 20, 6))


def test_fancy_assignment_last_write_wins():
    # the bulk writer depends on numpy applying duplicate indices in order;
    # lock that against a scalar loop on a collision-heavy workload
    cfg = StoreConfig(slots=8, copies=2, checksum_bits=4, value_width=4)
    keys = workload.flow_keys(200, 3)
    values = workload.values_for(200, 4, 4)
    fast = MemoryRegion(cfg)
    slow = MemoryRegion(cfg)
    bulk_write(fast, keys, values)
    for i in range(200):
        slow.write(bytes(keys[i]), bytes(values[i]))
    assert fast.to_bytes() == slow.to_bytes()


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 6),
       st.sampled_from([SINGLE_MATCH, PLURALITY_VOTE, consensus(2)]))
def test_bulk_matches_scalar_store(seed, copies, bits, policy):
    cfg = StoreConfig(slots=24, copies=copies, checksum_bits=bits,
                      value_width=6, policy=policy)
    n = 150
    keys = workload.flow_keys(n, seed)
    values = workload.values_for(n, 6, seed + 1)
    fast = MemoryRegion(cfg)
    slow = MemoryRegion(cfg)
    bulk_write(fast, keys, values)
    for i in range(n):
        slow.write(bytes(keys[i]), bytes(values[i]))
    assert fast.to_bytes() == slow.to_bytes()
    out = bulk_query(fast, keys, truth=values)
    for i in range(n):
        q = slow.query(bytes(keys[i]))
        assert bool(out.answered[i]) == q.found
        assert int(out.matched[i]) == q.matched_slots
        if q.found:
            assert bool(out.correct[i]) == (q.value == bytes(values[i]))


def test_bulk_query_recomputes_addresses_statelessly():
    cfg = StoreConfig(slots=512, copies=2, checksum_bits=16, value_width=8)
    keys = workload.flow_keys(300, 11)
    values = workload.values_for(300, 8, 12)
    region = MemoryRegion(cfg)
    addrs = bulk_write(region, keys, values)
    assert np.array_equal(addrs, addresses_for(keys, cfg))
    with_addrs = bulk_query(region, keys, truth=values, addresses=addrs)
    without = bulk_query(region, keys, truth=values)
    assert np.array_equal(with_addrs.answered, without.answered)
    assert np.array_equal(with_addrs.correct, without.correct)


def test_single_copy_fill_expectation():
    # random copy choice per report: expected distinct filled slots per key
    # follows the coupon-collector form copies*(1-(1-1/copies)^reports)
    rng = np.random.default_rng(8)
    copies, reports, n = 2, 4, 20_000
    cfg = StoreConfig(slots=1 << 16, copies=copies, checksum_bits=32)
    keys = workload.flow_keys(n, 21)
    values = workload.values_for(n, 20, 22)
    region = MemoryRegion(cfg)
    distinct = 0
    for i in range(n):
        picks = rng.integers(0, copies, size=reports)
        written = {region.write_copy(bytes(keys[i]), bytes(values[i]), int(p))
                   for p in picks}
        distinct += len(written)
    expect = copies * (1 - (1 - 1 / copies) ** reports)
    assert distinct / n == pytest.approx(expect, abs=0.01)


def test_oldest_key_success_tracks_exact_age_mean():
    # Poisson-approximation gap at 2^16 slots: simulate, then compare to the
    # analytic success averaged over each probe's exact age
    keys_n, load, copies = 52_429, 0.8, 2
    slots = round(keys_n / load)
    probes = 4000
    trials = 6
    succ = 0
    for trial in range(trials):
        cfg = StoreConfig(slots=slots, copies=copies, checksum_bits=32,
                          address_seed=trial * 7 + 1, checksum_seed=trial * 7 + 2,
                          collector_seed=trial * 7 + 3)
        keys = workload.flow_keys(keys_n, 1000 + trial)
        values = workload.values_for(keys_n, 20, 2000 + trial)
        region = MemoryRegion(cfg)
        addrs = bulk_write(region, keys, values)
        out = bulk_query(region, keys[:probes], truth=values[:probes],
                         addresses=addrs[:probes])
        succ += int(out.correct.sum())
    measured = succ / (probes * trials)
    ages = [(keys_n - 1 - i) / slots for i in range(probes)]
    expected = sum(1 - A.p_slot_overwritten(a, copies) ** copies
                   for a in ages) / probes
    assert measured == pytest.approx(expected, abs=0.005)


def test_scale_invariance_of_success():
    # equal load, different absolute sizes: same success within noise
    rates = []
    for keys_n in (50_000, 200_000):
        slots = round(keys_n / 0.5)
        cfg = StoreConfig(slots=slots, copies=2, checksum_bits=32)
        keys = workload.flow_keys(keys_n, 31)
        values = workload.values_for(keys_n, 20, 32)
        region = MemoryRegion(cfg)
        addrs = bulk_write(region, keys, values)
        out = bulk_query(region, keys, truth=values, addresses=addrs)
        rates.append(out.success_rate)
    assert abs(rates[0] - rates[1]) < 0.01
