"""Command line interface: experiment drivers, collector service, queries.

Every flag can also come from an environment variable named
DARTKV_<COMMAND>_<FLAG> (click's auto-envvar mapping), and the experiment
commands accept a JSON config file whose keys mirror the flag names; an
explicit flag always wins over the file.
"""

from __future__ import annotations

import json
import signal
import sys
import time
from pathlib import Path

import click

from .collector import CollectorClient, CollectorRuntime, route_query
from .config import (
    DEFAULT_ADDRESS_SEED,
    DEFAULT_CHECKSUM_SEED,
    DEFAULT_COLLECTOR_SEED,
    ResolutionPolicy,
    StoreConfig,
)
from .experiments import (
    ANALYTIC_COLUMNS,
    COLUMNS_FOR_KIND,
    RUNNER_FOR_KIND,
    ExperimentSpec,
    aging_summary,
    analytic_rows,
    write_csv,
)
from . import analytic as _analytic
from .plotting import PLOTTER_FOR_KIND

DEFAULT_SWEEP_LOADS = "0.1,0.15,0.2,0.35,0.5,0.65,0.8,1.0,1.3,1.8,2.5"


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in str(text).split(",") if str(x).strip())

def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in str(text).split(",") if str(x).strip())


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _pick(flag, config: dict, name: str, default):
    """Flag beats config file beats default."""
    if flag is not None:
        return flag
    if name in config:
        return config[name]
    return default


@click.group(context_settings={"auto_envvar_prefix": "DARTKV"})
@click.version_option()
def main():
    """Direct-write telemetry store toolkit."""


def _experiment_options(fn):
    for opt in reversed([
        click.option("--config", "config_path", type=click.Path(exists=True),
                     default=None, help="JSON config file; flags override it."),
        click.option("--keys", type=int, default=None,
                     help="Distinct keys written per trial."),
        click.option("--loads", default=None,
                     help="Comma-separated load factors (keys/slots)."),
        click.option("--copies", "copies_list", default=None,
                     help="Comma-separated redundant copy counts."),
        click.option("--checksum-bits", "bits_list", default=None,
                     help="Comma-separated checksum widths."),
        click.option("--policy", default=None,
                     help="single | plurality | consensus[:k]"),
        click.option("--trials", type=int, default=None),
        click.option("--seed", type=int, default=None),
        click.option("--probes", type=int, default=None,
                     help="Oldest-key window size."),
        click.option("--out", type=click.Path(), default=None,
                     help="CSV output path."),
        click.option("--plot/--no-plot", default=True,
                     help="Render a PNG figure next to the CSV."),
        click.option("--figure", type=click.Path(), default=None,
                     help="Figure path (default: CSV path with .png)."),
    ]):
        fn = opt(fn)
    return fn


def _build_spec(kind: str, config_path, keys, loads, copies_list, bits_list,
                policy, trials, seed, probes, defaults: dict, **extra) -> ExperimentSpec:
    config = _load_config(config_path)
    n_keys = int(_pick(keys, config, "keys", defaults["keys"]))
    default_probes = min(defaults.get("probes", 10_000), n_keys)
    spec = ExperimentSpec(
        kind=kind,
        keys=n_keys,
        loads=_floats(_pick(loads, config, "loads", defaults["loads"])),
        copies_list=_ints(_pick(copies_list, config, "copies", defaults["copies"])),
        checksum_bits_list=_ints(_pick(bits_list, config, "checksum_bits",
                                       defaults["checksum_bits"])),
        policy=ResolutionPolicy.parse(_pick(policy, config, "policy", "single")),
        trials=int(_pick(trials, config, "trials", defaults["trials"])),
        seed=int(_pick(seed, config, "seed", 1)),
        probes=int(_pick(probes, config, "probes", default_probes)),
        **extra,
    )
    return spec


def _emit(kind: str, spec: ExperimentSpec, rows: list[dict], out, plot, figure,
          elapsed: float) -> None:
    out = Path(out) if out else Path(f"{kind}.csv")
    write_csv(out, rows, COLUMNS_FOR_KIND[kind])
    click.echo(f"{kind}: {len(rows)} rows -> {out}  ({elapsed:.1f}s)")
    if plot:
        figure = Path(figure) if figure else out.with_suffix(".png")
        PLOTTER_FOR_KIND[kind](rows, figure)
        click.echo(f"figure -> {figure}")


@main.command()
@_experiment_options
def sweep(config_path, keys, loads, copies_list, bits_list, policy, trials,
          seed, probes, out, plot, figure):
    """Success vs load for several redundancy levels."""
    spec = _build_spec("sweep", config_path, keys, loads, copies_list,
                       bits_list, policy, trials, seed, probes,
                       {"keys": 200_000, "loads": DEFAULT_SWEEP_LOADS,
                        "copies": "1,2,3,4", "checksum_bits": "32",
                        "trials": 3, "probes": 5_000})
    t0 = time.monotonic()
    rows = RUNNER_FOR_KIND["sweep"](spec)
    _emit("sweep", spec, rows, out, plot, figure, time.monotonic() - t0)
    for load in spec.loads:
        cell = {r["copies"]: r["measured"] for r in rows if r["load"] == load}
        best = max(cell, key=cell.get)
        ana = _analytic.optimal_copies(load, spec.copies_list)
        click.echo(f"  load {load:g}: best copies measured={best} analytic={ana}")


@main.command()
@_experiment_options
@click.option("--target-success", type=float, default=None,
              help="Calibrate the load so oldest-key success hits this value.")
@click.option("--buckets", type=int, default=None, help="Age percentile buckets.")
def aging(config_path, keys, loads, copies_list, bits_list, policy, trials,
          seed, probes, out, plot, figure, target_success, buckets):
    """Success by report age at one or more storage loads."""
    config = _load_config(config_path)
    target_success = _pick(target_success, config, "target_success", None)
    if target_success is not None and loads is None and "loads" not in config:
        copies_eff = _ints(_pick(copies_list, config, "copies", "2"))[0]
        bits_eff = _ints(_pick(bits_list, config, "checksum_bits", "32"))[0]
        loads = repr(_analytic.invert_load_for_success(
            float(target_success), copies_eff, bits_eff))
    spec = _build_spec("aging", config_path, keys, loads, copies_list,
                       bits_list, policy, trials, seed, probes,
                       {"keys": 1_000_000, "loads": "0.764", "copies": "2",
                        "checksum_bits": "32", "trials": 2},
                       buckets=int(_pick(buckets, config, "buckets", 100)))
    t0 = time.monotonic()
    rows = RUNNER_FOR_KIND["aging"](spec)
    _emit("aging", spec, rows, out, plot, figure, time.monotonic() - t0)
    for load in spec.loads:
        for copies in spec.copies_list:
            sub = [r for r in rows
                   if r["load"] == load and r["copies"] == copies]
            s = aging_summary(sub)
            click.echo(f"  load {load:g} copies {copies}: "
                       f"mean={s['mean']:.4f} oldest={s['oldest']:.4f}")


@main.command()
@_experiment_options
def correctness(config_path, keys, loads, copies_list, bits_list, policy,
                trials, seed, probes, out, plot, figure):
    """Wrong-answer rates across checksum widths."""
    spec = _build_spec("correctness", config_path, keys, loads, copies_list,
                       bits_list, policy, trials, seed, probes,
                       {"keys": 1_000_000, "loads": "1.0", "copies": "2",
                        "checksum_bits": "1,2,4,8,32", "trials": 5})
    t0 = time.monotonic()
    rows = RUNNER_FOR_KIND["correctness"](spec)
    _emit("correctness", spec, rows, out, plot, figure, time.monotonic() - t0)
    for r in rows:
        if r["scope"] == "oldest":
            click.echo(f"  bits {r['checksum_bits']}: errors {r['errors']}/"
                       f"{r['queries']} rate={r['error_rate']:.2e} "
                       f"bounds=[{r['bound_lo']:.2e}, {r['bound_hi']:.2e}]")


@main.command()
@_experiment_options
@click.option("--copies-per-report", type=int, default=None,
              help="Redundant reports emitted per key (default: copy count).")
@click.option("--drop-rate", type=float, default=None,
              help="Synthetic datagram loss probability.")
@click.option("--queries", type=int, default=None,
              help="How many keys to query back (default: all).")
@click.option("--pcap", type=click.Path(), default=None,
              help="Also dump crafted frames to this capture file.")
@click.option("--report-port", type=int, default=0)
@click.option("--query-port", type=int, default=0)
def e2e(config_path, keys, loads, copies_list, bits_list, policy, trials,
        seed, probes, out, plot, figure, copies_per_report, drop_rate,
        queries, pcap, report_port, query_port):
    """Full wire path: switch emulator -> UDP ingest -> TCP queries."""
    config = _load_config(config_path)
    spec = _build_spec("e2e", config_path, keys, loads, copies_list,
                       bits_list, policy, trials, seed, probes,
                       {"keys": 20_000, "loads": "0.5", "copies": "2",
                        "checksum_bits": "32", "trials": 1},
                       copies_per_report=_pick(copies_per_report, config,
                                               "copies_per_report", None),
                       drop_rate=float(_pick(drop_rate, config, "drop_rate", 0.0)),
                       queries=_pick(queries, config, "queries", None),
                       pcap=_pick(pcap, config, "pcap", None))
    t0 = time.monotonic()
    rows = RUNNER_FOR_KIND["e2e"](spec, report_port=report_port,
                                  query_port=query_port)
    _emit("e2e", spec, rows, out, plot, figure, time.monotonic() - t0)
    r = rows[0]
    click.echo(f"  live={r['measured_live']:.4f} offline={r['measured_offline']:.4f} "
               f"accepted={r['accepted']} rejected={r['rejected']}")


@main.command("analytic")
@click.option("--loads", default="0.25,0.5,0.764,1.0,2.0")
@click.option("--copies", "copies_list", default="1,2,4")
@click.option("--checksum-bits", "bits_list", default="32")
@click.option("--out", type=click.Path(), default=None,
              help="Also write the table as CSV.")
def analytic_cmd(loads, copies_list, bits_list, out):
    """Print the closed-form probability tables."""
    rows = analytic_rows(_floats(loads), _ints(copies_list), _ints(bits_list))
    header = ("load copies bits  p_ow      p_empty   amb_lo    amb_hi    "
              "err_lo    err_hi    succ_lo   succ_hi   avg_succ")
    click.echo(header)
    for r in rows:
        click.echo(
            f"{r['load']:<5g}{r['copies']:^7d}{r['checksum_bits']:<5d}"
            f"{r['p_slot_overwritten']:<10.4g}{r['p_empty_no_match']:<10.4g}"
            f"{r['ambiguity_lo']:<10.3g}{r['ambiguity_hi']:<10.3g}"
            f"{r['error_lo']:<10.3g}{r['error_hi']:<10.3g}"
            f"{r['success_lo']:<10.4g}{r['success_hi']:<10.4g}"
            f"{r['avg_success']:<10.4g}")
    if out:
        write_csv(out, rows, ANALYTIC_COLUMNS)
        click.echo(f"table -> {out}")


@main.command()
@click.option("--slots", type=int, required=True, help="Region slot count.")
@click.option("--copies", type=int, default=2)
@click.option("--checksum-bits", type=int, default=32)
@click.option("--value-width", type=int, default=20)
@click.option("--address-seed", type=int, default=DEFAULT_ADDRESS_SEED)
@click.option("--checksum-seed", type=int, default=DEFAULT_CHECKSUM_SEED)
@click.option("--collector-seed", type=int, default=DEFAULT_COLLECTOR_SEED)
@click.option("--num-collectors", type=int, default=1)
@click.option("--collector-id", type=int, default=0)
@click.option("--policy", default="single")
@click.option("--bind", default="0.0.0.0")
@click.option("--report-port", type=int, default=4791)
@click.option("--query-port", type=int, default=4790)
@click.option("--base-address", type=int, default=None)
@click.option("--snapshot-in", type=click.Path(exists=True), default=None,
              help="Restore the region from this snapshot at startup.")
@click.option("--snapshot-out", type=click.Path(), default=None,
              help="Write a snapshot on shutdown.")
def serve(slots, copies, checksum_bits, value_width, address_seed,
          checksum_seed, collector_seed, num_collectors, collector_id,
          policy, bind, report_port, query_port, base_address, snapshot_in,
          snapshot_out):
    """Run one collector: UDP report ingest plus the TCP query service."""
    if snapshot_in:
        runtime = CollectorRuntime.restore(
            snapshot_in, collector_id=collector_id,
            report_host=bind, report_port=report_port,
            query_host=bind, query_port=query_port)
    else:
        cfg = StoreConfig(
            slots=slots, copies=copies, checksum_bits=checksum_bits,
            value_width=value_width, address_seed=address_seed,
            checksum_seed=checksum_seed, collector_seed=collector_seed,
            num_collectors=num_collectors,
            policy=ResolutionPolicy.parse(policy))
        kwargs = {} if base_address is None else {"base_address": base_address}
        runtime = CollectorRuntime(cfg, collector_id=collector_id,
                                   report_host=bind, report_port=report_port,
                                   query_host=bind, query_port=query_port,
                                   **kwargs)
    stop = {"flag": False}
    signal.signal(signal.SIGINT, lambda *a: stop.update(flag=True))
    signal.signal(signal.SIGTERM, lambda *a: stop.update(flag=True))
    with runtime:
        click.echo(f"collector {runtime.collector_id}: "
                   f"reports on udp {runtime.report_address}, "
                   f"queries on tcp {runtime.query_address}")
        while not stop["flag"]:
            time.sleep(0.2)
        stats = runtime.stats
        click.echo(f"shutting down: accepted={stats.accepted} "
                   f"rejected={dict(stats.rejected)}")
        if snapshot_out:
            runtime.snapshot(snapshot_out)
            click.echo(f"snapshot -> {snapshot_out}")


@main.command()
@click.argument("key_hex")
@click.option("--collectors", required=True,
              help="Comma-separated host:port list indexed by collector id.")
@click.option("--policy", default=None, help="single | plurality | consensus[:k]")
@click.option("--num-collectors", type=int, default=None,
              help="Defaults to the endpoint count.")
@click.option("--collector-seed", type=int, default=DEFAULT_COLLECTOR_SEED)
@click.option("--slots", type=int, default=2,
              help="Region slot count (only used for the routing config).")
def query(key_hex, collectors, policy, num_collectors, collector_seed, slots):
    """Query the collector that owns KEY_HEX."""
    endpoints = []
    for part in collectors.split(","):
        host, _, port = part.strip().rpartition(":")
        endpoints.append((host, int(port)))
    key = bytes.fromhex(key_hex)
    cfg = StoreConfig(slots=slots, copies=1,
                      num_collectors=num_collectors or len(endpoints),
                      collector_seed=collector_seed)
    pol = ResolutionPolicy.parse(policy) if policy else None
    reply = route_query(endpoints, key, cfg, pol)
    if reply.found:
        click.echo(f"value {reply.value.hex()} (collector {reply.collector_id}, "
                   f"matched {reply.matched_slots}, distinct {reply.distinct_values})")
    elif reply.error:
        click.echo(f"error: {reply.error}", err=True)
        sys.exit(2)
    else:
        click.echo(f"empty (collector {reply.collector_id}, "
                   f"matched {reply.matched_slots})")
        sys.exit(1)


if __name__ == "__main__":
    main()
