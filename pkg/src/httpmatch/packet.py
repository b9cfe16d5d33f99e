"""Capture ingestion: classic PCAP reading, Ethernet/IPv4/TCP decoding and
first-packet HTTP classification.

Everything here works on one packet at a time. No state is carried between
packets, so a message produced by :func:`classify_http` depends only on the
packet it came from.
"""

from __future__ import annotations

import enum
import io
import re
import socket
import struct
from dataclasses import dataclass, replace
from typing import BinaryIO, Iterator, Optional, Union

NANOS_PER_SECOND = 1_000_000_000

PCAP_MAGIC_MICRO = 0xA1B2C3D4
PCAP_MAGIC_NANO = 0xA1B23C4D
LINKTYPE_ETHERNET = 1

ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_VLAN = 0x8100
ETHERTYPE_QINQ = 0x88A8
IPPROTO_TCP = 6

MAX_URI_CHARS = 1455
MAX_AGENT_CHARS = 64

# Order matters: method ids in the columnar decoder index into this tuple.
HTTP_METHODS = ("GET", "POST", "HEAD", "PUT", "DELETE", "OPTIONS", "TRACE", "CONNECT", "PATCH")
_METHOD_BYTES = {m.encode("ascii"): m for m in HTTP_METHODS}
_LONGEST_METHOD = max(len(m) for m in HTTP_METHODS)

_VERSION = re.compile(rb"HTTP/[0-9]\.[0-9]")


class PcapError(ValueError):
    """Raised when a capture cannot be opened."""


class BadMagic(PcapError):
    pass


class TruncatedHeader(PcapError):
    pass


class UnsupportedLinkType(PcapError):
    pass


@dataclass(frozen=True, order=True, slots=True)
class CaptureTimestamp:
    """Capture time as whole Unix seconds plus nanoseconds."""

    seconds: int
    nanos: int = 0

    def __post_init__(self):
        if not 0 <= self.nanos < NANOS_PER_SECOND:
            raise ValueError(f"nanos out of range: {self.nanos}")
        if self.seconds < 0:
            raise ValueError(f"negative seconds: {self.seconds}")

    @classmethod
    def from_ns(cls, ns: int) -> "CaptureTimestamp":
        return cls(*divmod(ns, NANOS_PER_SECOND))

    @property
    def ns(self) -> int:
        return self.seconds * NANOS_PER_SECOND + self.nanos

    def __sub__(self, other: "CaptureTimestamp") -> int:
        """Difference in nanoseconds."""
        return self.ns - other.ns

    def __str__(self) -> str:
        return f"{self.seconds}.{self.nanos:09d}"


@dataclass(frozen=True, slots=True)
class PacketView:
    """Header fields of one TCP/IPv4 packet plus its TCP payload.

    Addresses are 32-bit integers in network order (``10.0.0.1`` is
    ``0x0A000001``).
    """

    ts: CaptureTimestamp
    src_ip: int
    dst_ip: int
    src_port: int
    dst_port: int
    seq: int
    ack: int
    ack_valid: bool
    payload: bytes = b""


class SkipReason(enum.Enum):
    NON_IP = "NonIP"
    NON_TCP = "NonTCP"
    FRAGMENT = "Fragment"
    TRUNCATED = "Truncated"


@dataclass(frozen=True, slots=True)
class Skip:
    reason: SkipReason


class MessageKind(enum.Enum):
    REQUEST = 1
    RESPONSE = 2


@dataclass(frozen=True, slots=True)
class HttpMessage:
    """Head of an HTTP request or response, taken from its first packet only.

    ``pkt`` keeps the header fields and timestamp; its payload is dropped
    once the head has been extracted.
    """

    kind: MessageKind
    pkt: PacketView
    method: Optional[str] = None
    uri: Optional[str] = None
    host: Optional[str] = None
    agent: Optional[str] = None
    status_code: Optional[int] = None
    status_message: Optional[str] = None

    @property
    def is_request(self) -> bool:
        return self.kind is MessageKind.REQUEST

    @property
    def match_number(self) -> int:
        """The number a counterpart must carry: ack for requests, seq for responses."""
        return self.pkt.ack if self.kind is MessageKind.REQUEST else self.pkt.seq


def ip_to_str(addr: int) -> str:
    return socket.inet_ntoa(addr.to_bytes(4, "big"))


def ip_from_str(text: str) -> int:
    return int.from_bytes(socket.inet_aton(text), "big")


# --------------------------------------------------------------------------
# PCAP


@dataclass(frozen=True)
class PcapHeader:
    byteorder: str  # "<" or ">"
    nanosecond: bool
    snaplen: int
    linktype: int


def parse_pcap_header(data: bytes) -> PcapHeader:
    if len(data) < 24:
        raise TruncatedHeader(f"capture is {len(data)} bytes, the global header needs 24")
    for order in ("<", ">"):
        (magic,) = struct.unpack_from(order + "I", data)
        if magic in (PCAP_MAGIC_MICRO, PCAP_MAGIC_NANO):
            break
    else:
        raise BadMagic(f"unrecognized magic {data[:4].hex()}")
    _, _, _, _, _, snaplen, linktype = struct.unpack_from(order + "IHHiIII", data)
    if linktype != LINKTYPE_ETHERNET:
        raise UnsupportedLinkType(f"linktype {linktype} (only Ethernet is supported)")
    return PcapHeader(order, magic == PCAP_MAGIC_NANO, snaplen, linktype)


def read_pcap(source: Union[bytes, bytearray, memoryview, BinaryIO]) -> Iterator[tuple[CaptureTimestamp, bytes]]:
    """Yield ``(timestamp, frame)`` for every record of a classic PCAP capture.

    ``source`` is either the whole capture as bytes or a binary file object.
    The global header is validated before the first record is produced, so
    ``BadMagic``/``TruncatedHeader``/``UnsupportedLinkType`` surface on the
    first ``next()``. A truncated trailing record ends iteration silently.
    """
    stream = io.BytesIO(source) if isinstance(source, (bytes, bytearray, memoryview)) else source
    header = parse_pcap_header(stream.read(24))
    rec = struct.Struct(header.byteorder + "IIII")
    scale = 1 if header.nanosecond else 1000
    read = stream.read
    while True:
        raw = read(16)
        if len(raw) < 16:
            return
        sec, frac, incl_len, _ = rec.unpack(raw)
        frame = read(incl_len)
        if len(frame) < incl_len:
            return
        frac *= scale
        if frac >= NANOS_PER_SECOND:
            sec, frac = sec + frac // NANOS_PER_SECOND, frac % NANOS_PER_SECOND
        yield CaptureTimestamp(sec, frac), frame


def write_pcap(stream: BinaryIO, packets, nanosecond: bool = True, byteorder: str = "<", snaplen: int = 262144) -> int:
    """Write ``(CaptureTimestamp | int ns, frame)`` pairs as a classic PCAP.

    Returns the number of records written.
    """
    magic = PCAP_MAGIC_NANO if nanosecond else PCAP_MAGIC_MICRO
    stream.write(struct.pack(byteorder + "IHHiIII", magic, 2, 4, 0, 0, snaplen, LINKTYPE_ETHERNET))
    rec = struct.Struct(byteorder + "IIII")
    count = 0
    for ts, frame in packets:
        ns = ts if isinstance(ts, int) else ts.ns
        sec, frac = divmod(ns, NANOS_PER_SECOND)
        if not nanosecond:
            frac //= 1000
        stream.write(rec.pack(sec, frac, len(frame), len(frame)))
        stream.write(frame)
        count += 1
    return count


# --------------------------------------------------------------------------
# Frame decoding

_ETH_TYPE = struct.Struct("!H")
_IPV4 = struct.Struct("!BxHxxHxB")  # ver/ihl, total length, flags/frag, protocol
_ADDRS = struct.Struct("!II")
_TCP = struct.Struct("!HHIIBB")

_SKIP_NON_IP = Skip(SkipReason.NON_IP)
_SKIP_NON_TCP = Skip(SkipReason.NON_TCP)
_SKIP_FRAGMENT = Skip(SkipReason.FRAGMENT)
_SKIP_TRUNCATED = Skip(SkipReason.TRUNCATED)


def parse_frame(frame: bytes, ts: CaptureTimestamp) -> Union[PacketView, Skip]:
    """Decode an Ethernet II frame carrying TCP over IPv4.

    A single 802.1Q tag is unwrapped; stacked tags, non-IPv4 traffic,
    non-TCP protocols, non-first fragments and frames too short for their
    headers come back as :class:`Skip`. The payload stops at the IP total
    length so Ethernet padding is never mistaken for data.
    """
    n = len(frame)
    if n < 14:
        return _SKIP_TRUNCATED
    (ethertype,) = _ETH_TYPE.unpack_from(frame, 12)
    l3 = 14
    if ethertype == ETHERTYPE_VLAN:
        if n < 18:
            return _SKIP_TRUNCATED
        (ethertype,) = _ETH_TYPE.unpack_from(frame, 16)
        l3 = 18
        if ethertype in (ETHERTYPE_VLAN, ETHERTYPE_QINQ):
            return _SKIP_NON_IP
    if ethertype != ETHERTYPE_IPV4:
        return _SKIP_NON_IP
    if n < l3 + 20:
        return _SKIP_TRUNCATED
    vihl, total_len, frag, proto = _IPV4.unpack_from(frame, l3)
    if vihl >> 4 != 4:
        return _SKIP_NON_IP
    ihl = (vihl & 0x0F) * 4
    if ihl < 20 or n < l3 + ihl:
        return _SKIP_TRUNCATED
    if frag & 0x1FFF:
        return _SKIP_FRAGMENT
    if proto != IPPROTO_TCP:
        return _SKIP_NON_TCP
    l4 = l3 + ihl
    if n < l4 + 20:
        return _SKIP_TRUNCATED
    src_port, dst_port, seq, ack, data_off, flags = _TCP.unpack_from(frame, l4)
    doff = (data_off >> 4) * 4
    start = l4 + doff
    if doff < 20 or n < start:
        return _SKIP_TRUNCATED
    # A zero total length shows up in captures taken before segmentation offload.
    end = n if total_len == 0 else min(n, l3 + total_len)
    if end < start:
        return _SKIP_TRUNCATED
    src_ip, dst_ip = _ADDRS.unpack_from(frame, l3 + 12)
    return PacketView(ts, src_ip, dst_ip, src_port, dst_port, seq, ack, bool(flags & 0x10), frame[start:end])


def _ows_strip(value: bytes) -> bytes:
    return value.strip(b" \t")


def classify_http(pkt: PacketView) -> Optional[HttpMessage]:
    """Recognize the first packet of an HTTP request or response.

    Returns ``None`` for anything else, including payloads that start like
    HTTP but carry a malformed start line. Only bytes present in this packet
    are examined; a request line cut off by the end of the packet is
    accepted and its target kept as far as it goes.
    """
    p = pkt.payload
    if p.startswith(b"HTTP/"):
        return _classify_response(pkt, p)
    sp = p.find(b" ", 0, _LONGEST_METHOD + 1)
    if sp <= 0:
        return None
    method = _METHOD_BYTES.get(p[:sp])
    if method is None:
        return None
    return _classify_request(pkt, p, method, sp + 1)


def _classify_request(pkt: PacketView, p: bytes, method: str, start: int) -> Optional[HttpMessage]:
    eol = p.find(b"\r\n")
    terminated = eol >= 0
    if not terminated:
        eol = len(p)
    target_end = p.find(b" ", start, eol)
    if target_end < 0:
        if terminated:
            return None
        target_end = eol
    elif terminated and (eol - target_end - 1 != 8 or not _VERSION.match(p, target_end + 1)):
        return None
    if target_end == start:
        return None
    uri = p[start:min(target_end, start + MAX_URI_CHARS)].decode("latin-1")

    host = agent = None
    if terminated:
        pos = eol + 2
        while True:
            nl = p.find(b"\r\n", pos)
            if nl <= pos:
                break
            colon = p.find(b":", pos, nl)
            if colon > pos:
                name = p[pos:colon].lower()
                if name == b"host":
                    if host is None:
                        host = _ows_strip(p[colon + 1:nl]).decode("latin-1") or None
                elif name == b"user-agent":
                    if agent is None:
                        agent = _ows_strip(p[colon + 1:nl])[:MAX_AGENT_CHARS].decode("latin-1") or None
            pos = nl + 2
    return HttpMessage(MessageKind.REQUEST, replace(pkt, payload=b""), method=method, uri=uri, host=host, agent=agent)


def _classify_response(pkt: PacketView, p: bytes) -> Optional[HttpMessage]:
    # HTTP/d.d SP ddd
    if len(p) < 12 or p[6] != 0x2E or p[8] != 0x20:
        return None
    if not (p[5:6].isdigit() and p[7:8].isdigit() and p[9:12].isdigit()):
        return None
    code = int(p[9:12])
    if not 100 <= code <= 599:
        return None
    eol = p.find(b"\r\n", 12)
    if eol < 0:
        eol = len(p)
    rest = p[12:eol]
    if rest and rest[0] != 0x20:
        return None
    reason = rest[1:].decode("latin-1") or None
    return HttpMessage(MessageKind.RESPONSE, replace(pkt, payload=b""), status_code=code, status_message=reason)


def iter_messages(source) -> Iterator[HttpMessage]:
    """Read, decode and classify a capture, yielding only HTTP messages."""
    for ts, frame in read_pcap(source):
        pkt = parse_frame(frame, ts)
        if isinstance(pkt, Skip):
            continue
        msg = classify_http(pkt)
        if msg is not None:
            yield msg


# --------------------------------------------------------------------------
# Frame construction (tests and the synthetic generator)

_ETH_HDR = b"\x02\x00\x00\x00\x00\x02\x02\x00\x00\x00\x00\x01\x08\x00"
_IP_TCP = struct.Struct("!BBHHHBBHIIHHIIBBHHH")


def _ip_checksum(header: bytes) -> int:
    total = sum(struct.unpack("!10H", header))
    total = (total & 0xFFFF) + (total >> 16)
    total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def build_frame(pkt: PacketView, ip_id: int = 0, vlan: Optional[int] = None) -> bytes:
    """Assemble an Ethernet/IPv4/TCP frame carrying ``pkt``.

    The IPv4 checksum is filled in; the TCP checksum is left zero.
    """
    flags = (0x10 if pkt.ack_valid else 0) | (0x08 if pkt.payload else 0)
    total_len = 40 + len(pkt.payload)
    hdr = bytearray(_IP_TCP.pack(
        0x45, 0, total_len, ip_id & 0xFFFF, 0x4000, 64, IPPROTO_TCP, 0,
        pkt.src_ip, pkt.dst_ip,
        pkt.src_port, pkt.dst_port, pkt.seq, pkt.ack, 5 << 4, flags, 65535, 0, 0,
    ))
    struct.pack_into("!H", hdr, 10, _ip_checksum(bytes(hdr[:20])))
    eth = _ETH_HDR if vlan is None else _ETH_HDR[:12] + struct.pack("!HH", ETHERTYPE_VLAN, vlan & 0x0FFF) + b"\x08\x00"
    return eth + bytes(hdr) + pkt.payload
