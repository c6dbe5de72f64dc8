import socket
import threading
import time

import pytest

from dartkv import workload
from dartkv.collector import (
    STATUS_EMPTY,
    STATUS_ERROR,
    STATUS_VALUE,
    CollectorClient,
    CollectorRuntime,
    QueryReply,
    decode_query_reply,
    encode_query_reply,
    route_query,
)
from dartkv.config import PLURALITY_VOTE, StoreConfig, consensus
from dartkv.store import MemoryRegion, select_collector
from dartkv.wire import CollectorTableEntry, SwitchEmulator, parse_report


def wait_until(predicate, timeout=5.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        if predicate():
            return True
        time.sleep(0.01)
    return predicate()


@pytest.fixture()
def runtime():
    cfg = StoreConfig(slots=1024, copies=2, checksum_bits=32)
    rt = CollectorRuntime(cfg, report_port=0, query_port=0)
    with rt:
        yield rt


def switch_for(rt, seed=1):
    entry = CollectorTableEntry(0, "02:00:00:00:00:02", "127.0.0.1", 0x55,
                                0x66, rt.region.base_address, rt.cfg.slots)
    return SwitchEmulator(rt.cfg, [entry], seed=seed)


def udp_send(rt, frames):
    tx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    for f in frames:
        tx.sendto(f, rt.report_address)
    tx.close()


def test_ingest_then_query_roundtrip(runtime):
    sw = switch_for(runtime)
    key, value = b"online-key", bytes(range(20))
    udp_send(runtime, [p.to_bytes() for p in sw.emit_report_burst(key, value, 4)])
    assert wait_until(lambda: runtime.stats.accepted == 4)
    with CollectorClient(*runtime.query_address) as client:
        reply = client.query(key)
        assert reply.status == STATUS_VALUE and reply.value == value
        assert reply.collector_id == 0
        assert len(reply.addresses) == 2
        missing = client.query(b"nobody-wrote-this")
        assert missing.status == STATUS_EMPTY
        assert missing.collector_id == 0


def test_rejected_reports_counted_and_harmless(runtime):
    sw = switch_for(runtime)
    key, value = b"damaged", bytes(20)
    good = sw.craft_report(key, value).to_bytes()
    bad = bytearray(sw.craft_report(key, value).to_bytes())
    bad[-2] ^= 0xFF
    before = runtime.region.to_bytes()
    udp_send(runtime, [bytes(bad)])
    assert wait_until(lambda: runtime.stats.rejected_total == 1)
    assert runtime.stats.rejected["bad_icrc"] == 1
    assert runtime.region.to_bytes() == before     # nothing written
    udp_send(runtime, [good, b"junk"])
    assert wait_until(lambda: runtime.stats.received == 3)
    assert runtime.stats.accepted == 1
    assert runtime.stats.rejected["malformed"] == 1
    # conservation, and the damage never perturbed the stored value
    assert runtime.stats.received == runtime.stats.accepted + runtime.stats.rejected_total
    assert runtime.serve_query(key).value == value


def test_policy_override_per_query(runtime):
    cfg = runtime.cfg
    key = b"override"
    from dartkv.store import compute_checksum, derive_addresses
    addrs = derive_addresses(key, cfg)
    cs = compute_checksum(key, cfg).to_bytes(cfg.checksum_width, "big")
    runtime.region.write_slot_bytes(addrs[0], cs + bytes(20))
    runtime.region.write_slot_bytes(addrs[1], cs + bytes(range(20)))
    with CollectorClient(*runtime.query_address) as client:
        assert client.query(key).status == STATUS_EMPTY          # single-match
        assert client.query(key, PLURALITY_VOTE).status == STATUS_EMPTY  # tie
        assert client.query(key, consensus(2)).status == STATUS_EMPTY
    # same connection stayed usable across policies above


def test_malformed_request_keeps_connection(runtime):
    sock = socket.create_connection(runtime.query_address)
    sock.sendall((5).to_bytes(4, "big") + b"\x09zzzz")   # unknown opcode
    length = int.from_bytes(sock.recv(4), "big")
    body = b""
    while len(body) < length:
        body += sock.recv(length - len(body))
    reply = decode_query_reply(body)
    assert reply.status == STATUS_ERROR and "bad request" in reply.error
    # the same connection still answers a well-formed query
    from dartkv.collector import encode_query_request
    req = encode_query_request(b"after-error")
    sock.sendall(len(req).to_bytes(4, "big") + req)
    length = int.from_bytes(sock.recv(4), "big")
    body = b""
    while len(body) < length:
        body += sock.recv(length - len(body))
    assert decode_query_reply(body).status == STATUS_EMPTY
    sock.close()


def test_text_one_shot(runtime):
    sw = switch_for(runtime)
    key, value = b"textmode", bytes(range(20))
    udp_send(runtime, [p.to_bytes()
                       for p in sw.emit_report_burst(key, value, 2)])
    assert wait_until(lambda: runtime.stats.accepted == 2)
    s = socket.create_connection(runtime.query_address)
    s.sendall(key.hex().encode() + b" plurality\n")
    line = s.recv(300).decode()
    s.close()
    assert line.startswith(f"value {value.hex()}")
    assert "collector=0" in line
    s = socket.create_connection(runtime.query_address)
    s.sendall(b"nothex!!\n")
    assert s.recv(300).startswith(b"error")
    s.close()


def test_query_reply_codec_roundtrip():
    for reply in (
        QueryReply(STATUS_VALUE, 3, (7, 9), 2, 1, b"\x01\x02"),
        QueryReply(STATUS_EMPTY, 0, (1, 2, 3), 0, 0, None),
        QueryReply(STATUS_ERROR, 9, error="bad request: nope"),
    ):
        assert decode_query_reply(encode_query_reply(reply)) == reply


def test_replay_equivalence_offline(runtime):
    # a captured burst applied through UDP equals in-process application
    sw = switch_for(runtime, seed=77)
    keys = workload.flow_keys(2000, 50)
    values = workload.values_for(2000, 20, 51)
    frames = []
    for i in range(2000):
        for pkt in sw.emit_report_burst(bytes(keys[i]), bytes(values[i]), 2):
            frames.append(pkt.to_bytes())
    offline = MemoryRegion(runtime.cfg, runtime.region.base_address)
    for f in frames:
        parse_report(f, runtime.cfg, offline.base_address).apply(offline)
    for start in range(0, len(frames), 500):   # paced into the socket
        udp_send(runtime, frames[start:start + 500])
        time.sleep(0.02)
    assert wait_until(lambda: runtime.stats.received >= len(frames), timeout=20)
    assert runtime.stats.accepted == len(frames)
    assert runtime.region.to_bytes() == offline.to_bytes()


def test_query_during_ingest_never_torn(runtime):
    sw = switch_for(runtime)
    key = b"hot-key"
    v1, v2 = bytes(20), bytes(range(20))
    stop = threading.Event()
    seen_bad = []

    def blast():
        tx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        i = 0
        while not stop.is_set():
            value = v1 if i % 2 == 0 else v2
            for pkt in sw.emit_report_burst(key, value, 2):
                tx.sendto(pkt.to_bytes(), runtime.report_address)
            i += 1
            time.sleep(0.0005)
        tx.close()

    t = threading.Thread(target=blast)
    t.start()
    with CollectorClient(*runtime.query_address) as client:
        deadline = time.time() + 1.5
        while time.time() < deadline:
            reply = client.query(key)
            if reply.found and reply.value not in (v1, v2):
                seen_bad.append(reply.value)
    stop.set()
    t.join()
    assert not seen_bad


def test_snapshot_restore_over_runtime(tmp_path, runtime):
    sw = switch_for(runtime)
    keys = workload.flow_keys(100, 60)
    values = workload.values_for(100, 20, 61)
    frames = [sw.craft_report(bytes(keys[i]), bytes(values[i]), 0).to_bytes()
              for i in range(100)]
    udp_send(runtime, frames)
    assert wait_until(lambda: runtime.stats.accepted == 100)
    path = tmp_path / "live.dart"
    runtime.snapshot(path)
    restored = CollectorRuntime.restore(path, report_port=0, query_port=0)
    assert restored.region.to_bytes() == runtime.region.to_bytes()
    with restored:
        for i in (0, 17, 99):
            a = runtime.serve_query(bytes(keys[i]))
            b = restored.serve_query(bytes(keys[i]))
            assert (a.status, a.value) == (b.status, b.value)


def test_ingest_path_has_no_per_key_growth(runtime):
    sw = switch_for(runtime)

    def container_footprint():
        sizes = [len(runtime.stats.rejected)]
        for v in vars(runtime).values():
            if isinstance(v, (dict, list, set)):
                sizes.append(len(v))
        return sizes

    keys = workload.flow_keys(5000, 70)
    udp_send(runtime, [sw.craft_report(bytes(keys[i]), bytes(20), 0).to_bytes()
                       for i in range(100)])
    assert wait_until(lambda: runtime.stats.accepted == 100)
    before = container_footprint()
    udp_send(runtime, [sw.craft_report(bytes(keys[i]), bytes(20), 0).to_bytes()
                       for i in range(100, 5000)])
    assert wait_until(lambda: runtime.stats.accepted == 5000)
    assert container_footprint() == before


def test_multi_collector_routing():
    cfg = StoreConfig(slots=512, copies=2, num_collectors=2)
    rt0 = CollectorRuntime(cfg, collector_id=0, report_port=0, query_port=0)
    rt1 = CollectorRuntime(cfg, collector_id=1, report_port=0, query_port=0)
    with rt0, rt1:
        runtimes = (rt0, rt1)
        entries = [
            CollectorTableEntry(i, "02:00:00:00:00:0%d" % (3 + i), "127.0.0.1",
                                0x10 + i, 0x20 + i,
                                runtimes[i].region.base_address, cfg.slots)
            for i in range(2)
        ]
        sw = SwitchEmulator(cfg, entries, seed=5)
        keys = workload.flow_keys(40, 80)
        values = workload.values_for(40, 20, 81)
        tx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        for i in range(40):
            key = bytes(keys[i])
            cid = select_collector(key, cfg)
            for pkt in sw.emit_report_burst(key, bytes(values[i]), 2):
                tx.sendto(pkt.to_bytes(), runtimes[cid].report_address)
        tx.close()
        assert wait_until(lambda: rt0.stats.accepted + rt1.stats.accepted == 80)
        assert rt0.stats.accepted > 0 and rt1.stats.accepted > 0
        endpoints = [rt.query_address for rt in runtimes]
        for i in range(40):
            reply = route_query(endpoints, bytes(keys[i]), cfg)
            assert reply.found and reply.value == bytes(values[i])
            assert reply.collector_id == select_collector(bytes(keys[i]), cfg)


def test_stats_over_wire(runtime):
    sw = switch_for(runtime)
    frames = [sw.craft_report(b"statskey", bytes(20)).to_bytes()
              for _ in range(3)]
    bad = bytearray(frames[0])
    bad[90] ^= 1
    udp_send(runtime, frames + [bytes(bad)])
    assert wait_until(lambda: runtime.stats.received == 4)
    with CollectorClient(*runtime.query_address) as client:
        accepted, received, reasons = client.stats()
    assert accepted == 3 and received == 4
    assert reasons == {"bad_icrc": 1}
