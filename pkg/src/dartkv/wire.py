"""RoCEv2 report crafting and dissection, plus the emulated switch state.

One telemetry report copy travels as a one-sided RDMA-WRITE datagram:

    Ethernet 14 | IPv4 20 | UDP 8 | BTH 12 | RETH 16 | payload | iCRC 4

The payload is one slot image (big-endian key checksum, then the value),
padded to a 4-byte multiple on the wire with the pad count recorded in the
BTH. RETH carries the absolute slot address inside the collector's region
and the payload length, so the receiving side needs no per-report logic
beyond validation and a memory copy.

The invariant CRC is CRC-32 (Ethernet polynomial) over a pseudo header of
eight 0xff bytes followed by the frame from the IP header through the
payload, with the fields a router may legally rewrite (IP DSCP/ECN, TTL,
header checksum; UDP checksum; the BTH FECN/BECN/reserved byte) masked to
ones. The 32-bit result is appended little-endian. The UDP checksum itself
is zero, which UDP over IPv4 permits.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

from .config import StoreConfig
from .hashing import MASK64, _GOLDEN, hash64, mix64
from .store import MemoryRegion, compute_checksum, derive_addresses, select_collector

ROCE_UDP_PORT = 4791
RDMA_WRITE_ONLY = 0x0A  # reliable-connection RDMA WRITE Only opcode
ETHERTYPE_IPV4 = 0x0800

ETH_LEN = 14
IP_LEN = 20
UDP_LEN = 8
BTH_LEN = 12
RETH_LEN = 16
ICRC_LEN = 4
HEADERS_LEN = ETH_LEN + IP_LEN + UDP_LEN + BTH_LEN + RETH_LEN

REJECT_MALFORMED = "malformed"
REJECT_BAD_PORT = "bad_port"
REJECT_BAD_OPCODE = "bad_opcode"
REJECT_BAD_ICRC = "bad_icrc"
REJECT_OUT_OF_REGION = "out_of_region"
REJECT_MISALIGNED = "misaligned"
REJECT_BAD_LENGTH = "bad_length"

REJECT_REASONS = (
    REJECT_MALFORMED, REJECT_BAD_PORT, REJECT_BAD_OPCODE, REJECT_BAD_ICRC,
    REJECT_OUT_OF_REGION, REJECT_MISALIGNED, REJECT_BAD_LENGTH,
)


class ReportRejected(Exception):
    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


def mac_bytes(mac: str | bytes) -> bytes:
    if isinstance(mac, bytes):
        if len(mac) != 6:
            raise ValueError("MAC must be 6 bytes")
        return mac
    parts = mac.split(":")
    if len(parts) != 6:
        raise ValueError(f"bad MAC {mac!r}")
    return bytes(int(p, 16) for p in parts)


def ip_bytes(ip: str | bytes) -> bytes:
    if isinstance(ip, bytes):
        if len(ip) != 4:
            raise ValueError("IPv4 address must be 4 bytes")
        return ip
    parts = ip.split(".")
    if len(parts) != 4:
        raise ValueError(f"bad IPv4 address {ip!r}")
    return bytes(int(p) for p in parts)


def ipv4_header_checksum(header: bytes) -> int:
    total = 0
    for i in range(0, len(header), 2):
        total += (header[i] << 8) | header[i + 1]
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


# CRC state after absorbing the 8-byte masked pseudo header
_CRC_PSEUDO = zlib.crc32(b"\xff" * 8)


def compute_icrc(frame) -> int:
    """Invariant CRC over a frame whose trailing 4 iCRC bytes are excluded."""
    masked = bytearray(frame[ETH_LEN:-ICRC_LEN])
    masked[1] = 0xFF                  # IP DSCP/ECN
    masked[8] = 0xFF                  # IP TTL
    masked[10] = masked[11] = 0xFF    # IP header checksum
    masked[26] = masked[27] = 0xFF    # UDP checksum
    masked[32] = 0xFF                 # BTH FECN/BECN/reserved
    return zlib.crc32(masked, _CRC_PSEUDO) & 0xFFFFFFFF


@dataclass
class RoceReportPacket:
    """One report copy, field by field. to_bytes()/from_bytes() round-trip."""

    eth_dst: bytes
    eth_src: bytes
    ip_src: bytes
    ip_dst: bytes
    udp_sport: int
    dqpn: int
    psn: int
    remote_address: int
    remote_key: int
    dma_length: int
    payload: bytes
    ethertype: int = ETHERTYPE_IPV4
    ip_tos: int = 0
    ip_ident: int = 0
    ip_ttl: int = 64
    udp_dport: int = ROCE_UDP_PORT
    opcode: int = RDMA_WRITE_ONLY
    pad_count: int = 0
    solicited: int = 0
    migreq: int = 0
    pkey: int = 0xFFFF
    ack_request: int = 0
    icrc: int = 0

    @property
    def wire_payload(self) -> bytes:
        return self.payload + b"\x00" * self.pad_count

    def to_bytes(self) -> bytes:
        wire_pay = self.wire_payload
        udp_len = UDP_LEN + BTH_LEN + RETH_LEN + len(wire_pay) + ICRC_LEN
        ip_total = IP_LEN + udp_len
        ip_hdr = struct.pack(
            ">BBHHHBBH4s4s",
            0x45, self.ip_tos, ip_total, self.ip_ident, 0x4000,  # DF set
            self.ip_ttl, 17, 0, self.ip_src, self.ip_dst,
        )
        ip_hdr = ip_hdr[:10] + struct.pack(">H", ipv4_header_checksum(ip_hdr)) + ip_hdr[12:]
        udp_hdr = struct.pack(">HHHH", self.udp_sport, self.udp_dport, udp_len, 0)
        bth = struct.pack(
            ">BBHBBHBBH",
            self.opcode,
            (self.solicited << 7) | (self.migreq << 6) | (self.pad_count << 4),
            self.pkey,
            0,                                # FECN/BECN/reserved
            (self.dqpn >> 16) & 0xFF, self.dqpn & 0xFFFF,
            self.ack_request << 7,
            (self.psn >> 16) & 0xFF, self.psn & 0xFFFF,
        )
        reth = struct.pack(">QII", self.remote_address, self.remote_key, self.dma_length)
        eth = self.eth_dst + self.eth_src + struct.pack(">H", self.ethertype)
        return (eth + ip_hdr + udp_hdr + bth + reth + wire_pay
                + struct.pack("<I", self.icrc))

    def seal(self) -> "RoceReportPacket":
        """Recompute the iCRC from the current fields."""
        self.icrc = compute_icrc(self.to_bytes())
        return self

    @classmethod
    def from_bytes(cls, frame: bytes) -> "RoceReportPacket":
        """Dissect without validating; see parse_report for validation."""
        if len(frame) < HEADERS_LEN + ICRC_LEN:
            raise ValueError("frame too short to dissect")
        ethertype = struct.unpack_from(">H", frame, 12)[0]
        _, tos, _, ident, _, ttl = struct.unpack_from(">BBHHHB", frame, ETH_LEN)
        ip_src = frame[26:30]
        ip_dst = frame[30:34]
        sport, dport, _, _ = struct.unpack_from(">HHHH", frame, 34)
        opcode, flags, pkey, _, dqpn_hi, dqpn_lo, ack, psn_hi, psn_lo = struct.unpack_from(
            ">BBHBBHBBH", frame, 42)
        addr, rkey, dlen = struct.unpack_from(">QII", frame, 54)
        pad = (flags >> 4) & 0x3
        payload = frame[HEADERS_LEN:-ICRC_LEN]
        if pad:
            payload = payload[:-pad] if pad <= len(payload) else b""
        icrc = struct.unpack_from("<I", frame, len(frame) - ICRC_LEN)[0]
        return cls(
            eth_dst=frame[0:6], eth_src=frame[6:12], ethertype=ethertype,
            ip_tos=tos, ip_ident=ident, ip_ttl=ttl, ip_src=ip_src, ip_dst=ip_dst,
            udp_sport=sport, udp_dport=dport,
            opcode=opcode, solicited=(flags >> 7) & 1, migreq=(flags >> 6) & 1,
            pad_count=pad, pkey=pkey, dqpn=(dqpn_hi << 16) | dqpn_lo,
            ack_request=(ack >> 7) & 1, psn=(psn_hi << 16) | psn_lo,
            remote_address=addr, remote_key=rkey, dma_length=dlen,
            payload=bytes(payload), icrc=icrc,
        )


@dataclass
class WriteInstruction:
    """A validated report reduced to its effect on the region."""

    slot_index: int
    payload: bytes

    def apply(self, region: MemoryRegion) -> None:
        region.write_slot_bytes(self.slot_index, self.payload)


_IP_HEAD = struct.Struct(">BBH")     # ver/ihl, tos, total length (at 14)
_UDP_HEAD = struct.Struct(">HHH")    # sport, dport, length (at 34)
_RETH = struct.Struct(">QII")        # address, rkey, dma length (at 54)
_ICRC_TRAILER = struct.Struct("<I")


def parse_report(frame, cfg: StoreConfig, base_address: int) -> WriteInstruction:
    """Validate a frame exactly as the emulated NIC would.

    Accepts iff the datagram targets the RoCEv2 UDP port with an RDMA-WRITE
    opcode, the iCRC verifies, the address falls on a slot boundary inside
    the region, and the DMA length is one slot. Raises ReportRejected with a
    reason code otherwise.
    """
    n = len(frame)
    if n < HEADERS_LEN + ICRC_LEN:
        raise ReportRejected(REJECT_MALFORMED, "truncated frame")
    ver_ihl, _tos, ip_total = _IP_HEAD.unpack_from(frame, 14)
    if frame[12] != 0x08 or frame[13] != 0x00 or ver_ihl != 0x45 or frame[23] != 17:
        raise ReportRejected(REJECT_MALFORMED, "not IPv4/UDP")
    _sport, dport, udp_len = _UDP_HEAD.unpack_from(frame, 34)
    if ETH_LEN + ip_total != n or ip_total != IP_LEN + udp_len:
        raise ReportRejected(REJECT_MALFORMED, "inconsistent lengths")
    if dport != ROCE_UDP_PORT:
        raise ReportRejected(REJECT_BAD_PORT)
    if frame[42] != RDMA_WRITE_ONLY:
        raise ReportRejected(REJECT_BAD_OPCODE)
    if _ICRC_TRAILER.unpack_from(frame, n - ICRC_LEN)[0] != compute_icrc(frame):
        raise ReportRejected(REJECT_BAD_ICRC)
    addr, _rkey, dlen = _RETH.unpack_from(frame, 54)
    slot_w = cfg.slot_width
    offset = addr - base_address
    if not 0 <= offset < cfg.slots * slot_w:
        raise ReportRejected(REJECT_OUT_OF_REGION, hex(addr))
    if offset % slot_w:
        raise ReportRejected(REJECT_MISALIGNED, hex(addr))
    if dlen != slot_w:
        raise ReportRejected(REJECT_BAD_LENGTH, f"dma length {dlen}")
    pad = (frame[43] >> 4) & 0x3
    wire_pay = n - HEADERS_LEN - ICRC_LEN
    if wire_pay != dlen + pad or (dlen + pad) % 4:
        raise ReportRejected(REJECT_BAD_LENGTH, f"payload bytes {wire_pay}")
    payload = bytes(frame[HEADERS_LEN : HEADERS_LEN + dlen])
    return WriteInstruction(offset // slot_w, payload)


@dataclass
class CollectorTableEntry:
    """Per-collector reachability info a switch keeps (its lookup table row)."""

    collector_id: int
    mac: str | bytes
    ip: str | bytes
    queue_pair: int
    remote_key: int
    base_address: int
    region_slots: int

    def __post_init__(self):
        self.mac = mac_bytes(self.mac)
        self.ip = ip_bytes(self.ip)


class SwitchEmulator:
    """Crafts report packets the way the switch dataplane would.

    Holds no per-key state: only the store config, the collector lookup
    table, per-collector packet sequence counters and a counter-based RNG
    used to pick which copy each report fills.
    """

    def __init__(self, cfg: StoreConfig, collectors, seed: int = 0,
                 src_mac: str | bytes = "02:00:00:00:00:01",
                 src_ip: str | bytes = "10.0.0.2",
                 udp_sport: int | None = None):
        self.cfg = cfg
        self.table: dict[int, CollectorTableEntry] = {}
        for entry in collectors:
            self.table[entry.collector_id] = entry
        self.src_mac = mac_bytes(src_mac)
        self.src_ip = ip_bytes(src_ip)
        self.udp_sport = udp_sport
        self._seed = seed & MASK64
        self._draws = 0
        self._psn: dict[int, int] = {cid: 0 for cid in self.table}

    def psn(self, collector_id: int) -> int:
        return self._psn[collector_id]

    def set_psn(self, collector_id: int, value: int) -> None:
        self._psn[collector_id] = value & 0xFFFFFF

    def _draw_copy(self) -> int:
        n = mix64(self._seed ^ ((self._draws * _GOLDEN) & MASK64)) % self.cfg.copies
        self._draws += 1
        return n

    def craft_report(self, key: bytes, value: bytes,
                     copy_index: int | None = None) -> RoceReportPacket:
        """Build one sealed report carrying one copy of (key, value).

        The copy index is drawn uniformly unless forced (test hook). The
        packet consumes one PSN from the target collector's counter.
        """
        cfg = self.cfg
        cid = select_collector(key, cfg)
        entry = self.table.get(cid)
        if entry is None:
            raise LookupError(f"no collector table entry for collector {cid}")
        if copy_index is None:
            copy_index = self._draw_copy()
        elif not 0 <= copy_index < cfg.copies:
            raise ValueError(f"copy index {copy_index} out of range")
        if len(value) != cfg.value_width:
            raise ValueError(f"value must be exactly {cfg.value_width} bytes")
        slot = derive_addresses(key, cfg)[copy_index]
        csum = compute_checksum(key, cfg)
        payload = csum.to_bytes(cfg.checksum_width, "big") + value
        psn = self._psn[cid]
        self._psn[cid] = (psn + 1) & 0xFFFFFF
        sport = self.udp_sport
        if sport is None:
            # per-key flow entropy for ECMP, folded into the dynamic range
            sport = 0xC000 | hash64(key, self._seed) & 0x3FFF
        pkt = RoceReportPacket(
            eth_dst=entry.mac, eth_src=self.src_mac,
            ip_src=self.src_ip, ip_dst=entry.ip,
            ip_ident=psn & 0xFFFF,
            udp_sport=sport,
            dqpn=entry.queue_pair, psn=psn,
            remote_address=entry.base_address + slot * cfg.slot_width,
            remote_key=entry.remote_key,
            dma_length=cfg.slot_width,
            pad_count=(4 - cfg.slot_width % 4) % 4,
            payload=payload,
        )
        return pkt.seal()

    def emit_report_burst(self, key: bytes, value: bytes, count: int,
                          copy_sequence=None) -> list[RoceReportPacket]:
        """`count` independent report copies for one key, PSNs consecutive.

        copy_sequence forces the copy indices (test hook); by default each
        report draws its copy uniformly at random.
        """
        if count < 1:
            raise ValueError("burst needs at least one report")
        if copy_sequence is not None and len(copy_sequence) != count:
            raise ValueError("copy_sequence length must equal count")
        return [
            self.craft_report(key, value,
                              None if copy_sequence is None else copy_sequence[i])
            for i in range(count)
        ]


class PcapWriter:
    """Minimal classic-pcap writer for crafted frames (link type Ethernet)."""

    _GLOBAL = struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 1)

    def __init__(self, path):
        self._fh = open(path, "wb")
        self._fh.write(self._GLOBAL)
        self._count = 0

    def write(self, frame: bytes) -> None:
        # synthetic monotonic timestamps keep capture files reproducible
        sec, usec = divmod(self._count, 1_000_000)
        self._fh.write(struct.pack("<IIII", sec, usec, len(frame), len(frame)))
        self._fh.write(frame)
        self._count += 1

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
