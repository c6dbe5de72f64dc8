"""Emulated collector: report ingest straight into the region, plus queries.

The ingest endpoint is a UDP socket standing in for the RDMA NIC; each
datagram carries one crafted report frame (Ethernet onward). The per-report
work is validation plus a single slot copy -- no per-key bookkeeping, no
allocation that grows with the key population, mirroring a data path that
never touches the host CPU per report.

Queries arrive on a TCP port. Two wire forms share it, told apart by the
first byte of a connection: length-prefixed binary frames (first byte 0,
since frames are far below 16 MiB), or a one-shot human-readable line such
as "6261636b626f6e652d34 plurality\n" for quick manual checks.

Binary protocol (all integers big-endian):
  request frame   u32 length, then body:
                  u8 op (1 query, 2 stats)
                  query: u16 key length, key bytes, u8 policy tag
                         (0 configured default, 1 single, 2 plurality,
                          3 consensus), u8 consensus minimum
  query response  u8 status (0 empty, 1 value, 2 error), u32 collector id;
                  status 0/1: u8 copies, copies x u64 probed addresses,
                              u8 matched slots, u8 distinct values,
                              u16 value length, value bytes
                  status 2:   u16 message length, message
  stats response  u64 accepted, u64 received, u16 reason count,
                  then per reason u8 name length, name, u64 count
"""

from __future__ import annotations

import select
import socket
import struct
import threading
import time
from collections import Counter
from dataclasses import dataclass, field

from .config import ResolutionPolicy, StoreConfig
from .config import DEFAULT_BASE_ADDRESS
from .store import MemoryRegion, derive_addresses, load_region, save_region
from .wire import ReportRejected, parse_report

OP_QUERY = 1
OP_STATS = 2

STATUS_EMPTY = 0
STATUS_VALUE = 1
STATUS_ERROR = 2

_POLICY_TAGS = {0: None, 1: "single", 2: "plurality", 3: "consensus"}
_TAG_FOR_KIND = {"single": 1, "plurality": 2, "consensus": 3}


@dataclass
class IngestStats:
    accepted: int = 0
    rejected: Counter = field(default_factory=Counter)
    first_accept: float | None = None
    last_accept: float | None = None

    @property
    def rejected_total(self) -> int:
        return sum(self.rejected.values())

    @property
    def received(self) -> int:
        return self.accepted + self.rejected_total

    @property
    def accept_rate(self) -> float | None:
        """Accepted reports per second between the first and last accept."""
        if not self.accepted or self.last_accept == self.first_accept:
            return None
        return (self.accepted - 1) / (self.last_accept - self.first_accept)


@dataclass
class QueryReply:
    status: int
    collector_id: int
    addresses: tuple[int, ...] = ()
    matched_slots: int = 0
    distinct_values: int = 0
    value: bytes | None = None
    error: str | None = None

    @property
    def found(self) -> bool:
        return self.status == STATUS_VALUE


def _policy_from_tag(tag: int, minimum: int) -> ResolutionPolicy | None:
    kind = _POLICY_TAGS.get(tag)
    if tag not in _POLICY_TAGS:
        raise ValueError(f"unknown policy tag {tag}")
    if kind is None:
        return None
    if kind == "consensus":
        return ResolutionPolicy(kind, max(minimum, 2))
    return ResolutionPolicy(kind)


def encode_query_request(key: bytes, policy: ResolutionPolicy | None = None) -> bytes:
    tag = 0 if policy is None else _TAG_FOR_KIND[policy.kind]
    minimum = policy.min_count if policy and policy.kind == "consensus" else 0
    return struct.pack(">BH", OP_QUERY, len(key)) + key + struct.pack(">BB", tag, minimum)


def encode_stats_request() -> bytes:
    return struct.pack(">B", OP_STATS)


def encode_query_reply(reply: QueryReply) -> bytes:
    if reply.status == STATUS_ERROR:
        msg = (reply.error or "").encode()
        return struct.pack(">BIH", reply.status, reply.collector_id, len(msg)) + msg
    body = struct.pack(">BIB", reply.status, reply.collector_id, len(reply.addresses))
    for addr in reply.addresses:
        body += struct.pack(">Q", addr)
    value = reply.value or b""
    body += struct.pack(">BBH", reply.matched_slots, reply.distinct_values, len(value))
    return body + value


def decode_query_reply(body: bytes) -> QueryReply:
    status, cid = struct.unpack_from(">BI", body, 0)
    if status == STATUS_ERROR:
        (mlen,) = struct.unpack_from(">H", body, 5)
        return QueryReply(status, cid, error=body[7 : 7 + mlen].decode())
    (n_addr,) = struct.unpack_from(">B", body, 5)
    off = 6
    addresses = struct.unpack_from(f">{n_addr}Q", body, off) if n_addr else ()
    off += 8 * n_addr
    matched, distinct, vlen = struct.unpack_from(">BBH", body, off)
    off += 4
    value = body[off : off + vlen] if status == STATUS_VALUE else None
    return QueryReply(status, cid, tuple(addresses), matched, distinct, value)


class CollectorRuntime:
    """One collector process: a region, an ingest socket and a query server."""

    def __init__(self, cfg: StoreConfig, collector_id: int = 0,
                 base_address: int = DEFAULT_BASE_ADDRESS,
                 report_host: str = "127.0.0.1", report_port: int = 4791,
                 query_host: str = "127.0.0.1", query_port: int = 0,
                 region: MemoryRegion | None = None,
                 report_socket: socket.socket | None = None):
        self.cfg = cfg
        self.collector_id = collector_id
        self.region = region if region is not None else MemoryRegion(cfg, base_address)
        self.stats = IngestStats()
        self._report_bind = (report_host, report_port)
        self._query_bind = (query_host, query_port)
        self._running = False
        self._threads: list[threading.Thread] = []
        # a pre-bound socket may be handed in (socket activation); reports
        # queued in its buffer before start() are ingested normally
        self._report_sock = report_socket
        self._query_sock: socket.socket | None = None

    # -- lifecycle -----------------------------------------------------------

    @staticmethod
    def bind_report_socket(host: str = "127.0.0.1", port: int = 0) -> socket.socket:
        rs = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        rs.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 1 << 24)
        rs.bind((host, port))
        rs.setblocking(False)
        return rs

    def start(self) -> "CollectorRuntime":
        if self._running:
            return self
        rs = self._report_sock
        if rs is None:
            rs = self.bind_report_socket(*self._report_bind)
        else:
            rs.setblocking(False)
        qs = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        qs.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        qs.bind(self._query_bind)
        qs.listen(32)
        qs.settimeout(0.2)
        self._report_sock, self._query_sock = rs, qs
        self._running = True
        for target, name in ((self._ingest_loop, "ingest"), (self._accept_loop, "query")):
            t = threading.Thread(target=target, name=f"collector-{name}", daemon=True)
            t.start()
            self._threads.append(t)
        return self

    def stop(self) -> None:
        self._running = False
        for t in self._threads:
            t.join(timeout=2.0)
        self._threads.clear()
        for s in (self._report_sock, self._query_sock):
            if s is not None:
                s.close()
        self._report_sock = self._query_sock = None

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
        return False

    @property
    def report_address(self) -> tuple[str, int]:
        return self._report_sock.getsockname()

    @property
    def query_address(self) -> tuple[str, int]:
        return self._query_sock.getsockname()

    # -- report ingest ---------------------------------------------------------

    def _ingest_loop(self) -> None:
        sock = self._report_sock
        cfg = self.cfg
        region = self.region
        base = region.base_address
        stats = self.stats
        buf = bytearray(2048)
        view = memoryview(buf)
        write_slot = region.write_slot_bytes
        monotonic = time.monotonic
        poller = select.poll()
        poller.register(sock, select.POLLIN)
        # non-blocking receive, poll only when the queue runs dry: one
        # syscall per report on the hot path
        while self._running:
            try:
                nbytes = sock.recv_into(buf)
            except BlockingIOError:
                poller.poll(200)
                continue
            except OSError:
                break
            try:
                instruction = parse_report(view[:nbytes], cfg, base)
            except ReportRejected as rej:
                stats.rejected[rej.reason] += 1
                continue
            write_slot(instruction.slot_index, instruction.payload)
            now = monotonic()
            if stats.first_accept is None:
                stats.first_accept = now
            stats.last_accept = now
            stats.accepted += 1

    # -- queries ---------------------------------------------------------------

    def serve_query(self, key: bytes, policy: ResolutionPolicy | None = None) -> QueryReply:
        """Resolve one query against the live region."""
        try:
            result = self.region.query(key, policy)
        except ValueError as err:
            return QueryReply(STATUS_ERROR, self.collector_id, error=str(err))
        return QueryReply(
            STATUS_VALUE if result.found else STATUS_EMPTY,
            self.collector_id,
            derive_addresses(key, self.cfg),
            result.matched_slots,
            result.distinct_values,
            result.value,
        )

    def _accept_loop(self) -> None:
        while self._running:
            try:
                conn, _peer = self._query_sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            t = threading.Thread(target=self._serve_connection, args=(conn,), daemon=True)
            t.start()

    def _serve_connection(self, conn: socket.socket) -> None:
        with conn:
            conn.settimeout(10.0)
            try:
                first = conn.recv(1)
            except OSError:
                return
            if not first:
                return
            if first != b"\x00":
                self._serve_text(conn, first)
                return
            while self._running:
                try:
                    head = _recv_exact(conn, 3, first=b"")
                    if head is None:
                        return
                    (length,) = struct.unpack(">I", b"\x00" + head)
                    body = _recv_exact(conn, length)
                    if body is None:
                        return
                    reply = self._handle_frame(body)
                    conn.sendall(struct.pack(">I", len(reply)) + reply)
                    first = _recv_exact(conn, 1)
                    if first is None:
                        return
                    if first != b"\x00":
                        self._serve_text(conn, first)
                        return
                except OSError:
                    return

    def _handle_frame(self, body: bytes) -> bytes:
        try:
            (op,) = struct.unpack_from(">B", body, 0)
            if op == OP_STATS:
                return self._stats_reply()
            if op != OP_QUERY:
                raise ValueError(f"unknown opcode {op}")
            (klen,) = struct.unpack_from(">H", body, 1)
            key = body[3 : 3 + klen]
            if len(key) != klen:
                raise ValueError("truncated key")
            tag, minimum = struct.unpack_from(">BB", body, 3 + klen)
            policy = _policy_from_tag(tag, minimum)
        except (ValueError, struct.error) as err:
            return encode_query_reply(
                QueryReply(STATUS_ERROR, self.collector_id, error=f"bad request: {err}"))
        return encode_query_reply(self.serve_query(key, policy))

    def _stats_reply(self) -> bytes:
        stats = self.stats
        reasons = sorted(stats.rejected.items())
        out = struct.pack(">QQH", stats.accepted, stats.received, len(reasons))
        for name, count in reasons:
            encoded = name.encode()
            out += struct.pack(">B", len(encoded)) + encoded + struct.pack(">Q", count)
        return out

    def _serve_text(self, conn: socket.socket, first: bytes) -> None:
        data = bytearray(first)
        while b"\n" not in data and len(data) < 1024:
            chunk = conn.recv(256)
            if not chunk:
                break
            data += chunk
        line = bytes(data).split(b"\n", 1)[0].decode(errors="replace").strip()
        parts = line.split()
        try:
            if not parts:
                raise ValueError("empty request")
            key = bytes.fromhex(parts[0])
            policy = ResolutionPolicy.parse(parts[1]) if len(parts) > 1 else None
            reply = self.serve_query(key, policy)
        except ValueError as err:
            conn.sendall(f"error {err}\n".encode())
            return
        if reply.status == STATUS_VALUE:
            conn.sendall(
                f"value {reply.value.hex()} matched={reply.matched_slots} "
                f"distinct={reply.distinct_values} collector={reply.collector_id}\n".encode())
        elif reply.status == STATUS_EMPTY:
            conn.sendall(
                f"empty matched={reply.matched_slots} "
                f"distinct={reply.distinct_values} collector={reply.collector_id}\n".encode())
        else:
            conn.sendall(f"error {reply.error}\n".encode())

    # -- snapshots ---------------------------------------------------------------

    def snapshot(self, path) -> None:
        save_region(self.region, path)

    @classmethod
    def restore(cls, path, **kwargs) -> "CollectorRuntime":
        region = load_region(path)
        runtime = cls(region.cfg, base_address=region.base_address,
                      region=region, **kwargs)
        return runtime


def _recv_exact(conn: socket.socket, count: int, first: bytes = b"") -> bytes | None:
    data = bytearray(first)
    while len(data) < count:
        chunk = conn.recv(count - len(data))
        if not chunk:
            return None
        data += chunk
    return bytes(data)


class CollectorClient:
    """Operator-side connection to one collector's query port."""

    def __init__(self, host: str, port: int, timeout: float = 10.0):
        self._sock = socket.create_connection((host, port), timeout=timeout)

    def query(self, key: bytes, policy: ResolutionPolicy | None = None) -> QueryReply:
        return self._roundtrip(encode_query_request(key, policy))

    def stats(self) -> tuple[int, int, dict[str, int]]:
        """(accepted, received, rejected-by-reason)."""
        body = self._roundtrip(encode_stats_request(), raw=True)
        accepted, received, n = struct.unpack_from(">QQH", body, 0)
        off = 18
        reasons = {}
        for _ in range(n):
            (nlen,) = struct.unpack_from(">B", body, off)
            off += 1
            name = body[off : off + nlen].decode()
            off += nlen
            (count,) = struct.unpack_from(">Q", body, off)
            off += 8
            reasons[name] = count
        return accepted, received, reasons

    def _roundtrip(self, request: bytes, raw: bool = False):
        self._sock.sendall(struct.pack(">I", len(request)) + request)
        head = _recv_exact(self._sock, 4)
        if head is None:
            raise ConnectionError("collector closed the connection")
        (length,) = struct.unpack(">I", head)
        body = _recv_exact(self._sock, length)
        if body is None:
            raise ConnectionError("collector closed mid-reply")
        return body if raw else decode_query_reply(body)

    def close(self) -> None:
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def route_query(endpoints, key: bytes, cfg: StoreConfig,
                policy: ResolutionPolicy | None = None) -> QueryReply:
    """Query the collector that owns `key`, per the shared hash mapping.

    endpoints is a sequence of (host, port), indexed by collector id. A dead
    collector surfaces as the underlying transport error; by design no
    replica exists to fail over to.
    """
    from .store import select_collector

    cid = select_collector(key, cfg)
    if cid >= len(endpoints):
        raise LookupError(f"no endpoint for collector {cid}")
    host, port = endpoints[cid]
    with CollectorClient(host, port) as client:
        return client.query(key, policy)
