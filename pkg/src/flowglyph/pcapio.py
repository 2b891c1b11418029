"""Classic pcap reading and writing, limited to Ethernet II / IPv4 / TCP.

Layout: 24-byte global header, then per record a 16-byte header
(ts_sec, ts_usec, incl_len, orig_len) followed by the raw frame bytes.
Files are written little-endian; both byte orders are accepted on read.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

PCAP_MAGIC = 0xA1B2C3D4
LINKTYPE_ETHERNET = 1
PCAP_VERSION = (2, 4)
SNAPLEN = 65535

ETHERTYPE_IPV4 = 0x0800
IPPROTO_TCP = 6

# TCP flag bits
FIN = 0x01
SYN = 0x02
RST = 0x04
PSH = 0x08
ACK = 0x10

_GLOBAL_HDR = "IHHiIII"
_RECORD_HDR = "IIII"


class PcapError(Exception):
    """Base class for capture parsing/serialization failures."""


class BadMagic(PcapError):
    """File does not start with a recognized classic-pcap magic number."""


class Truncated(PcapError):
    """A header or record body extends past the end of the input."""


class UnsupportedLinkType(PcapError):
    """Capture link type is not Ethernet (1)."""


class PayloadTooLarge(PcapError):
    """A frame would not fit the 16-bit pcap/IPv4 length fields."""


def ip_to_int(ip: str) -> int:
    """Dotted-quad IPv4 string to its 32-bit integer value."""
    parts = ip.split(".")
    if len(parts) != 4:
        raise ValueError(f"not a dotted-quad IPv4 address: {ip!r}")
    value = 0
    for part in parts:
        octet = int(part)
        if not 0 <= octet <= 255:
            raise ValueError(f"octet out of range in {ip!r}")
        value = (value << 8) | octet
    return value


def int_to_ip(value: int) -> str:
    return ".".join(str((value >> shift) & 0xFF) for shift in (24, 16, 8, 0))


def make_ts(sec: int, usec: int) -> float:
    """Timestamp as used throughout: pcap seconds plus microseconds.

    Generators must build timestamps through this function so that a
    written capture re-parses to bit-identical floats.
    """
    return sec + usec * 1e-6


@dataclass(frozen=True)
class FrameRecord:
    """One decoded Ethernet/IPv4/TCP frame. payload holds TCP payload only."""

    ts: float
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    tcp_flags: int
    seq: int
    payload: bytes


@dataclass
class Capture:
    """Decoded frames of one capture file, sorted by timestamp."""

    link_type: int = LINKTYPE_ETHERNET
    frames: list[FrameRecord] = field(default_factory=list)
    skipped: int = 0


def parse_pcap(data: bytes) -> Capture:
    """Decode a classic pcap byte string into a Capture.

    Non-IPv4/non-TCP frames (and IP fragments) are counted in
    Capture.skipped rather than raising. Frames come out stably sorted
    by timestamp.
    """
    if len(data) < 24:
        raise Truncated(f"global header needs 24 bytes, got {len(data)}")
    (magic,) = struct.unpack_from("<I", data, 0)
    if magic == PCAP_MAGIC:
        endian = "<"
    elif magic == 0xD4C3B2A1:
        endian = ">"
    else:
        raise BadMagic(f"unknown pcap magic 0x{magic:08x}")
    _, _, _, _, _, _, link_type = struct.unpack_from(endian + _GLOBAL_HDR, data, 0)
    if link_type != LINKTYPE_ETHERNET:
        raise UnsupportedLinkType(f"link type {link_type}, only Ethernet (1) supported")

    record_hdr = struct.Struct(endian + _RECORD_HDR)
    frames: list[FrameRecord] = []
    skipped = 0
    offset = 24
    end = len(data)
    while offset < end:
        if offset + 16 > end:
            raise Truncated("record header extends past end of file")
        sec, usec, incl_len, _orig_len = record_hdr.unpack_from(data, offset)
        offset += 16
        if offset + incl_len > end:
            raise Truncated("record body extends past end of file")
        frame = _decode_frame(make_ts(sec, usec), data[offset : offset + incl_len])
        offset += incl_len
        if frame is None:
            skipped += 1
        else:
            frames.append(frame)
    frames.sort(key=lambda f: f.ts)
    return Capture(link_type=link_type, frames=frames, skipped=skipped)


def _decode_frame(ts: float, buf: bytes) -> FrameRecord | None:
    """Decode Ethernet II -> IPv4 -> TCP; None for anything else."""
    if len(buf) < 14 + 20:
        return None
    ethertype = (buf[12] << 8) | buf[13]
    if ethertype != ETHERTYPE_IPV4:
        return None
    version_ihl = buf[14]
    if version_ihl >> 4 != 4:
        return None
    ihl = (version_ihl & 0x0F) * 4
    if ihl < 20 or len(buf) < 14 + ihl:
        return None
    flags_frag = (buf[20] << 8) | buf[21]
    if flags_frag & 0x2000 or flags_frag & 0x1FFF:  # MF set or nonzero offset
        return None
    if buf[23] != IPPROTO_TCP:
        return None
    src_ip = int_to_ip(int.from_bytes(buf[26:30], "big"))
    dst_ip = int_to_ip(int.from_bytes(buf[30:34], "big"))
    tcp = 14 + ihl
    if len(buf) < tcp + 20:
        return None
    src_port, dst_port = struct.unpack_from("!HH", buf, tcp)
    (seq,) = struct.unpack_from("!I", buf, tcp + 4)
    data_offset = (buf[tcp + 12] >> 4) * 4
    if data_offset < 20 or len(buf) < tcp + data_offset:
        return None
    tcp_flags = buf[tcp + 13]
    payload = buf[tcp + data_offset :]
    return FrameRecord(
        ts=ts,
        src_ip=src_ip,
        dst_ip=dst_ip,
        src_port=src_port,
        dst_port=dst_port,
        tcp_flags=tcp_flags,
        seq=seq,
        payload=payload,
    )


def _ipv4_checksum(header: bytes) -> int:
    total = sum(struct.unpack(f"!{len(header) // 2}H", header))
    total = (total & 0xFFFF) + (total >> 16)
    total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def _encode_frame(frame: FrameRecord) -> bytes:
    """Frame bytes with zeroed MACs and a valid IPv4 header checksum.

    The TCP checksum is left zero; nothing downstream validates it.
    """
    payload = frame.payload
    if 14 + 20 + 20 + len(payload) > SNAPLEN:
        raise PayloadTooLarge(
            f"frame serializes to {14 + 40 + len(payload)} bytes, max {SNAPLEN}"
        )
    if not 0 <= frame.src_port <= 65535 or not 0 <= frame.dst_port <= 65535:
        raise ValueError(f"port out of range: {frame.src_port}/{frame.dst_port}")
    eth = b"\x00" * 12 + struct.pack("!H", ETHERTYPE_IPV4)
    total_len = 20 + 20 + len(payload)
    ip_fields = struct.pack(
        "!BBHHHBBH4s4s",
        0x45,  # version 4, IHL 5
        0,
        total_len,
        0,  # identification
        0x4000,  # DF, no fragmentation
        64,
        IPPROTO_TCP,
        0,  # checksum placeholder
        ip_to_int(frame.src_ip).to_bytes(4, "big"),
        ip_to_int(frame.dst_ip).to_bytes(4, "big"),
    )
    checksum = _ipv4_checksum(ip_fields)
    ip = ip_fields[:10] + struct.pack("!H", checksum) + ip_fields[12:]
    tcp = struct.pack(
        "!HHIIBBHHH",
        frame.src_port,
        frame.dst_port,
        frame.seq & 0xFFFFFFFF,
        0,  # ack number not modeled
        5 << 4,  # data offset 5, no options
        frame.tcp_flags & 0xFF,
        65535,  # window
        0,  # checksum not computed
        0,
    )
    return eth + ip + tcp + payload


def write_pcap(capture: Capture) -> bytes:
    """Serialize a Capture as little-endian classic pcap.

    parse_pcap(write_pcap(c)) reproduces every frame field of c exactly,
    provided frame timestamps were built via make_ts.
    """
    out = bytearray()
    out += struct.pack(
        "<" + _GLOBAL_HDR, PCAP_MAGIC, *PCAP_VERSION, 0, 0, SNAPLEN, LINKTYPE_ETHERNET
    )
    for frame in capture.frames:
        encoded = _encode_frame(frame)
        sec = int(frame.ts)
        usec = int(round((frame.ts - sec) * 1e6))
        if usec == 1_000_000:
            sec, usec = sec + 1, 0
        out += struct.pack("<" + _RECORD_HDR, sec, usec, len(encoded), len(encoded))
        out += encoded
    return bytes(out)
