"""Experiment drivers: seeded simulations with CSV output.

Each runner returns rows as plain dicts in a fixed column order (documented
per runner below) carrying both the measured rate and the matching analytic
value, so a regression is visible inside the output itself. Rows never
contain wall-clock readings; with a fixed seed a rerun produces
byte-identical CSV.

Success throughout means the query returned the value that was actually
written for the key; a wrong value counts as answered but not successful.
"""

from __future__ import annotations

import csv
import math
import socket
import time
from dataclasses import dataclass

import numpy as np

from . import analytic
from .bulk import bulk_query, bulk_write
from .collector import CollectorClient, CollectorRuntime
from .config import SINGLE_MATCH, ResolutionPolicy, StoreConfig
from .hashing import MASK64, _GOLDEN, mix64
from .store import MemoryRegion
from .wire import CollectorTableEntry, PcapWriter, SwitchEmulator, parse_report
from .workload import flow_keys, values_for

SWEEP_COLUMNS = [
    "experiment", "load", "copies", "checksum_bits", "keys", "slots",
    "trials", "queries", "successes", "measured", "wilson_lo", "wilson_hi",
    "analytic", "oldest_queries", "oldest_successes", "oldest_measured",
    "oldest_analytic",
]

AGING_COLUMNS = [
    "experiment", "load", "copies", "checksum_bits", "keys", "slots",
    "trials", "bucket", "age_lo", "age_hi", "queries", "successes",
    "measured", "wilson_lo", "wilson_hi", "analytic",
]

CORRECTNESS_COLUMNS = [
    "experiment", "load", "copies", "checksum_bits", "keys", "slots",
    "trials", "scope", "queries", "answered", "errors", "error_rate",
    "wilson_lo", "wilson_hi", "bound_lo", "bound_hi",
]

E2E_COLUMNS = [
    "experiment", "load", "copies", "checksum_bits", "keys", "slots",
    "copies_per_report", "drop_rate", "reports_crafted", "reports_sent",
    "reports_dropped", "accepted", "rejected", "queries",
    "successes_live", "measured_live", "successes_offline",
    "measured_offline", "analytic",
]

ANALYTIC_COLUMNS = [
    "load", "copies", "checksum_bits", "p_slot_overwritten",
    "p_empty_no_match", "ambiguity_lo", "ambiguity_hi", "error_lo",
    "error_hi", "success_lo", "success_hi", "avg_success",
]


@dataclass
class ExperimentSpec:
    """One experiment request; see the CLI for the file/flag schema."""

    kind: str
    keys: int = 1_000_000
    loads: tuple[float, ...] = (0.5,)
    copies_list: tuple[int, ...] = (2,)
    checksum_bits_list: tuple[int, ...] = (32,)
    policy: ResolutionPolicy = SINGLE_MATCH
    trials: int = 1
    seed: int = 1
    value_width: int = 20
    probes: int = 10_000        # oldest-key window size
    buckets: int = 100          # aging percentile buckets
    copies_per_report: int | None = None   # e2e: reports emitted per key
    drop_rate: float = 0.0                 # e2e: synthetic datagram loss
    queries: int | None = None             # e2e: how many keys to query
    pcap: str | None = None                # e2e: capture crafted frames

    def __post_init__(self):
        if self.keys < 1 or self.trials < 1:
            raise ValueError("keys and trials must be positive")
        if self.probes < 1 or self.probes > self.keys:
            raise ValueError("probes must be in [1, keys]")
        if self.buckets < 1 or self.keys % self.buckets:
            raise ValueError("buckets must divide the key count")
        if not all(l > 0 for l in self.loads):
            raise ValueError("loads must be positive")


def derive_seed(master: int, *parts: int) -> int:
    h = master & MASK64
    for p in parts:
        h = mix64(h ^ ((p * _GOLDEN) & MASK64))
    return h


def wilson_interval(successes: int, total: int, z: float = 1.96) -> tuple[float, float]:
    """95% score interval for a binomial proportion."""
    if total == 0:
        return (0.0, 1.0)
    p = successes / total
    z2 = z * z
    denom = 1.0 + z2 / total
    center = (p + z2 / (2 * total)) / denom
    half = z * math.sqrt(p * (1.0 - p) / total + z2 / (4 * total * total)) / denom
    return (max(center - half, 0.0), min(center + half, 1.0))


def _slots_for(keys: int, load: float, copies: int) -> int:
    return max(round(keys / load), copies)


def _trial_cfg(spec: ExperimentSpec, slots: int, copies: int, bits: int,
               trial: int) -> StoreConfig:
    return StoreConfig(
        slots=slots, copies=copies, checksum_bits=bits,
        value_width=spec.value_width,
        address_seed=derive_seed(spec.seed, trial, 1),
        checksum_seed=derive_seed(spec.seed, trial, 2),
        collector_seed=derive_seed(spec.seed, trial, 3),
        policy=spec.policy,
    )


def _trial_population(spec: ExperimentSpec, trial: int):
    keys = flow_keys(spec.keys, derive_seed(spec.seed, trial, 11))
    values = values_for(spec.keys, spec.value_width, derive_seed(spec.seed, trial, 12))
    return keys, values


def _trial_outcome(spec: ExperimentSpec, slots: int, copies: int, bits: int,
                   trial: int):
    """Write the whole population in order, then query every key."""
    cfg = _trial_cfg(spec, slots, copies, bits, trial)
    keys, values = _trial_population(spec, trial)
    region = MemoryRegion(cfg)
    addresses = bulk_write(region, keys, values)
    # addresses are identical on the query side by statelessness; reusing
    # them just skips the second derivation
    return bulk_query(region, keys, truth=values, policy=spec.policy,
                      addresses=addresses)


# -- redundancy sweep ---------------------------------------------------------

def run_redundancy_sweep(spec: ExperimentSpec) -> list[dict]:
    """Age-averaged and oldest-window success per (load, copies) cell."""
    rows = []
    for load in spec.loads:
        for copies in spec.copies_list:
            for bits in spec.checksum_bits_list:
                slots = _slots_for(spec.keys, load, copies)
                alpha = spec.keys / slots
                succ = total = old_succ = old_total = 0
                for trial in range(spec.trials):
                    out = _trial_outcome(spec, slots, copies, bits, trial)
                    succ += int(out.correct.sum())
                    total += spec.keys
                    old_succ += int(out.correct[: spec.probes].sum())
                    old_total += spec.probes
                lo, hi = wilson_interval(succ, total)
                rows.append({
                    "experiment": "sweep", "load": load, "copies": copies,
                    "checksum_bits": bits, "keys": spec.keys, "slots": slots,
                    "trials": spec.trials, "queries": total,
                    "successes": succ, "measured": succ / total,
                    "wilson_lo": lo, "wilson_hi": hi,
                    "analytic": analytic.avg_success_over_ages(alpha, copies, bits),
                    "oldest_queries": old_total, "oldest_successes": old_succ,
                    "oldest_measured": old_succ / old_total,
                    "oldest_analytic": analytic.p_query_success(
                        alpha, copies, bits).midpoint,
                })
    return rows


# -- data aging ---------------------------------------------------------------

def run_aging(spec: ExperimentSpec) -> list[dict]:
    """Success bucketed by insertion-age percentile (bucket 0 = oldest)."""
    rows = []
    per_bucket = spec.keys // spec.buckets
    for load in spec.loads:
        for copies in spec.copies_list:
            for bits in spec.checksum_bits_list:
                slots = _slots_for(spec.keys, load, copies)
                alpha = spec.keys / slots
                succ = np.zeros(spec.buckets, dtype=np.int64)
                for trial in range(spec.trials):
                    out = _trial_outcome(spec, slots, copies, bits, trial)
                    succ += out.correct.reshape(spec.buckets, per_bucket).sum(1)
                for bucket in range(spec.buckets):
                    total = per_bucket * spec.trials
                    s = int(succ[bucket])
                    lo, hi = wilson_interval(s, total)
                    mid_age = (bucket + 0.5) / spec.buckets
                    rows.append({
                        "experiment": "aging", "load": load, "copies": copies,
                        "checksum_bits": bits, "keys": spec.keys,
                        "slots": slots, "trials": spec.trials,
                        "bucket": bucket,
                        "age_lo": bucket / spec.buckets,
                        "age_hi": (bucket + 1) / spec.buckets,
                        "queries": total, "successes": s,
                        "measured": s / total, "wilson_lo": lo, "wilson_hi": hi,
                        "analytic": analytic.p_query_success(
                            alpha * (1.0 - mid_age), copies, bits).midpoint,
                    })
    return rows


def aging_summary(rows: list[dict]) -> dict:
    """Overall mean and oldest-bucket success from equal-sized bucket rows."""
    means = [r["measured"] for r in rows]
    oldest = [r for r in rows if r["bucket"] == 0]
    return {
        "mean": sum(means) / len(means),
        "oldest": sum(r["measured"] for r in oldest) / len(oldest),
    }


# -- answer correctness ---------------------------------------------------------

def _age_averaged_error_bounds(alpha: float, copies: int, bits: int):
    lo = analytic._adaptive_simpson(
        lambda x: analytic.p_return_error_bounds(x, copies, bits).lower,
        0.0, alpha, 1e-10) / alpha
    hi = analytic._adaptive_simpson(
        lambda x: analytic.p_return_error_bounds(x, copies, bits).upper,
        0.0, alpha, 1e-10) / alpha
    return lo, hi


def run_correctness(spec: ExperimentSpec) -> list[dict]:
    """Wrong-answer rates per checksum width, over all ages and the oldest
    window, against the analytic bound interval."""
    rows = []
    load = spec.loads[0]
    for copies in spec.copies_list:
        for bits in spec.checksum_bits_list:
            slots = _slots_for(spec.keys, load, copies)
            alpha = spec.keys / slots
            err_all = ans_all = err_old = ans_old = 0
            for trial in range(spec.trials):
                out = _trial_outcome(spec, slots, copies, bits, trial)
                wrong = out.answered & ~out.correct
                err_all += int(wrong.sum())
                ans_all += int(out.answered.sum())
                err_old += int(wrong[: spec.probes].sum())
                ans_old += int(out.answered[: spec.probes].sum())
            total_all = spec.keys * spec.trials
            total_old = spec.probes * spec.trials
            for scope, errors, answered, total, bounds in (
                ("all", err_all, ans_all, total_all,
                 _age_averaged_error_bounds(alpha, copies, bits)),
                ("oldest", err_old, ans_old, total_old,
                 (analytic.p_return_error_bounds(alpha, copies, bits).lower,
                  analytic.p_return_error_bounds(alpha, copies, bits).upper)),
            ):
                lo, hi = wilson_interval(errors, total)
                rows.append({
                    "experiment": "correctness", "load": load,
                    "copies": copies, "checksum_bits": bits,
                    "keys": spec.keys, "slots": slots, "trials": spec.trials,
                    "scope": scope, "queries": total, "answered": answered,
                    "errors": errors, "error_rate": errors / total,
                    "wilson_lo": lo, "wilson_hi": hi,
                    "bound_lo": bounds[0], "bound_hi": bounds[1],
                })
    return rows


# -- end-to-end wire path ---------------------------------------------------------

def run_e2e_wire(spec: ExperimentSpec, report_port: int = 0,
                 query_port: int = 0) -> list[dict]:
    """Emit reports through the switch emulator into a live collector over
    UDP, query over TCP, and hold the result against an offline twin fed the
    same frames in-process."""
    load = spec.loads[0]
    copies = spec.copies_list[0]
    bits = spec.checksum_bits_list[0]
    slots = _slots_for(spec.keys, load, copies)
    alpha = spec.keys / slots
    cfg = _trial_cfg(spec, slots, copies, bits, 0)
    keys, values = _trial_population(spec, 0)
    per_key = spec.copies_per_report or copies
    n_queries = spec.queries or spec.keys

    runtime = CollectorRuntime(cfg, report_port=report_port, query_port=query_port)
    offline = MemoryRegion(cfg)
    drop_rng = np.random.Generator(np.random.PCG64(derive_seed(spec.seed, 0, 77)))
    with runtime:
        entry = CollectorTableEntry(
            0, "02:00:00:00:00:02", "127.0.0.1", 0x100, 0x1234,
            runtime.region.base_address, cfg.slots)
        switch = SwitchEmulator(cfg, [entry], seed=derive_seed(spec.seed, 0, 78))
        pcap = PcapWriter(spec.pcap) if spec.pcap else None
        frames = []
        crafted = dropped = 0
        for i in range(spec.keys):
            key = bytes(keys[i])
            value = bytes(values[i])
            for pkt in switch.emit_report_burst(key, value, per_key):
                crafted += 1
                frame = pkt.to_bytes()
                if pcap:
                    pcap.write(frame)
                if spec.drop_rate and drop_rng.random() < spec.drop_rate:
                    dropped += 1
                    continue
                frames.append(frame)
        if pcap:
            pcap.close()

        # offline twin: the surviving frames applied without the network
        for frame in frames:
            parse_report(frame, cfg, offline.base_address).apply(offline)

        _paced_send(frames, runtime.report_address, rate=30_000)
        _wait_for_drain(runtime, len(frames))

        live_succ = 0
        with CollectorClient(*runtime.query_address) as client:
            for i in range(n_queries):
                reply = client.query(bytes(keys[i]))
                if reply.found and reply.value == bytes(values[i]):
                    live_succ += 1
        accepted = runtime.stats.accepted
        rejected = runtime.stats.rejected_total

    out = bulk_query(offline, keys[:n_queries], truth=values[:n_queries],
                     policy=spec.policy)
    offline_succ = int(out.correct.sum())
    fill = analytic.report_fill_probability(copies, per_key, 1.0 - spec.drop_rate)
    return [{
        "experiment": "e2e", "load": load, "copies": copies,
        "checksum_bits": bits, "keys": spec.keys, "slots": slots,
        "copies_per_report": per_key, "drop_rate": spec.drop_rate,
        "reports_crafted": crafted, "reports_sent": len(frames),
        "reports_dropped": dropped, "accepted": accepted,
        "rejected": rejected, "queries": n_queries,
        "successes_live": live_succ, "measured_live": live_succ / n_queries,
        "successes_offline": offline_succ,
        "measured_offline": offline_succ / n_queries,
        "analytic": analytic.avg_success_with_fill(alpha, copies, fill),
    }]


def _paced_send(frames, address, rate: float) -> None:
    """Send datagrams at a bounded rate so the receiver keeps up."""
    tx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    tx.connect(address)
    chunk = 200
    interval = chunk / rate
    next_at = time.monotonic()
    for i, frame in enumerate(frames):
        if i % chunk == 0:
            delay = next_at - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            next_at += interval
        tx.send(frame)
    tx.close()


def _wait_for_drain(runtime: CollectorRuntime, expected: int,
                    timeout: float = 30.0) -> None:
    deadline = time.monotonic() + timeout
    prev = -1
    while time.monotonic() < deadline:
        seen = runtime.stats.received
        if seen >= expected:
            return
        if seen == prev:
            time.sleep(0.05)
        prev = seen
        time.sleep(0.02)


# -- analytic tables -----------------------------------------------------------

def analytic_rows(loads, copies_list, checksum_bits_list) -> list[dict]:
    rows = []
    for load in loads:
        for copies in copies_list:
            for bits in checksum_bits_list:
                amb = analytic.p_empty_ambiguity_bounds(load, copies, bits)
                err = analytic.p_return_error_bounds(load, copies, bits)
                succ = analytic.p_query_success(load, copies, bits)
                rows.append({
                    "load": load, "copies": copies, "checksum_bits": bits,
                    "p_slot_overwritten": analytic.p_slot_overwritten(load, copies),
                    "p_empty_no_match": analytic.p_empty_all_overwritten(
                        load, copies, bits),
                    "ambiguity_lo": amb.lower, "ambiguity_hi": amb.upper,
                    "error_lo": err.lower, "error_hi": err.upper,
                    "success_lo": succ.lower, "success_hi": succ.upper,
                    "avg_success": analytic.avg_success_over_ages(
                        load, copies, bits),
                })
    return rows


# -- CSV -------------------------------------------------------------------------

def format_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_cell(row[c]) for c in columns])


COLUMNS_FOR_KIND = {
    "sweep": SWEEP_COLUMNS,
    "aging": AGING_COLUMNS,
    "correctness": CORRECTNESS_COLUMNS,
    "e2e": E2E_COLUMNS,
}

RUNNER_FOR_KIND = {
    "sweep": run_redundancy_sweep,
    "aging": run_aging,
    "correctness": run_correctness,
    "e2e": run_e2e_wire,
}
