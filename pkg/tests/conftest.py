"""Shared builders for the test suite."""

import struct

from flowglyph.pcapio import ACK, FrameRecord

TLS12 = 0x0303


def frame(
    ts,
    src_ip="10.0.0.1",
    dst_ip="198.51.0.1",
    src_port=40000,
    dst_port=443,
    flags=ACK,
    seq=0,
    payload=b"",
):
    """FrameRecord with client->server defaults."""
    return FrameRecord(
        ts=ts,
        src_ip=src_ip,
        dst_ip=dst_ip,
        src_port=src_port,
        dst_port=dst_port,
        tcp_flags=flags,
        seq=seq,
        payload=payload,
    )


def reply(f, **overrides):
    """Same conversation, opposite direction."""
    fields = dict(
        ts=f.ts,
        src_ip=f.dst_ip,
        dst_ip=f.src_ip,
        src_port=f.dst_port,
        dst_port=f.src_port,
        flags=ACK,
        seq=0,
        payload=b"",
    )
    fields.update(overrides)
    return frame(**fields)


def tls(content_type, body_len, version=TLS12):
    """One TLS record with a zero-filled body, packed independently."""
    return struct.pack(">BHH", content_type, version, body_len) + b"\x00" * body_len
