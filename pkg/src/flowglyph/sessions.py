"""Bidirectional TCP session assembly and TLS application-data accounting.

A session is everything exchanged under one canonical 4-tuple until an
idle gap, an RST, or a completed FIN handshake ends it. Volume counters
only see TLS application_data records (content type 23): the bytes the
peers exchange after key negotiation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .pcapio import ACK, FIN, RST, SYN, Capture, FrameRecord, ip_to_int

DEFAULT_IDLE_TIMEOUT = 300.0

TLS_APPLICATION_DATA = 23
_TLS_CONTENT_TYPES = frozenset({20, 21, 22, 23, 24})


@dataclass
class Session:
    """One two-way TCP conversation, with per-direction TLS app volumes."""

    client_ip: str
    server_ip: str
    client_port: int
    server_port: int
    first_ts: float
    last_ts: float
    up_app_bytes: int
    down_app_bytes: int
    frame_count: int
    tls_ok: bool = True

    def triplet_key(self) -> tuple[str, str, int]:
        """Grouping key: both hosts plus the server port, client port dropped."""
        return (self.client_ip, self.server_ip, self.server_port)

    def to_dict(self) -> dict:
        return {
            "client_ip": self.client_ip,
            "server_ip": self.server_ip,
            "client_port": self.client_port,
            "server_port": self.server_port,
            "first_ts": self.first_ts,
            "last_ts": self.last_ts,
            "up_app_bytes": self.up_app_bytes,
            "down_app_bytes": self.down_app_bytes,
            "frame_count": self.frame_count,
            "tls_ok": self.tls_ok,
        }


@dataclass
class SessionSet:
    sessions: list[Session]

    @property
    def n(self) -> int:
        return len(self.sessions)


@dataclass(frozen=True)
class TlsVolumes:
    up_app_bytes: int
    down_app_bytes: int
    up_ok: bool
    down_ok: bool


def _canonical_key(frame: FrameRecord) -> tuple:
    a = (ip_to_int(frame.src_ip), frame.src_port)
    b = (ip_to_int(frame.dst_ip), frame.dst_port)
    return (a, b) if a <= b else (b, a)


def _is_pure_ack(frame: FrameRecord) -> bool:
    return (
        frame.tcp_flags & ACK != 0
        and frame.tcp_flags & (SYN | FIN | RST) == 0
        and not frame.payload
    )


class _OpenSession:
    """Mutable accumulator for one in-progress session."""

    __slots__ = ("frames", "fins", "closed")

    def __init__(self) -> None:
        self.frames: list[FrameRecord] = []
        self.fins: set[tuple[str, int]] = set()
        self.closed = False

    def add(self, frame: FrameRecord) -> None:
        self.frames.append(frame)
        if frame.tcp_flags & RST:
            self.closed = True
            return
        # The pure ACK that answers the second FIN still belongs to this
        # session; anything after it starts a new one.
        if len(self.fins) == 2 and _is_pure_ack(frame):
            self.closed = True
        if frame.tcp_flags & FIN:
            self.fins.add((frame.src_ip, frame.src_port))


def assemble_sessions(
    capture: Capture, idle_timeout: float = DEFAULT_IDLE_TIMEOUT
) -> SessionSet:
    """Bucket frames by canonical 4-tuple and cut sessions at idle gaps,
    RSTs, and completed FIN teardowns.

    The client is the sender of the first SYN-without-ACK; with no SYN
    evidence, the sender of the chronologically first frame.
    """
    open_by_key: dict[tuple, _OpenSession] = {}
    finished: list[_OpenSession] = []
    for frame in capture.frames:
        key = _canonical_key(frame)
        current = open_by_key.get(key)
        if current is not None and (
            current.closed or frame.ts - current.frames[-1].ts > idle_timeout
        ):
            finished.append(current)
            current = None
        if current is None:
            current = _OpenSession()
            open_by_key[key] = current
        current.add(frame)
    finished.extend(open_by_key.values())

    sessions = [_finalize(open_session) for open_session in finished]
    sessions.sort(
        key=lambda s: (
            s.first_ts,
            ip_to_int(s.client_ip),
            s.client_port,
            ip_to_int(s.server_ip),
            s.server_port,
        )
    )
    return SessionSet(sessions)


def _finalize(open_session: _OpenSession) -> Session:
    frames = open_session.frames
    client = None
    for frame in frames:
        if frame.tcp_flags & SYN and not frame.tcp_flags & ACK:
            client = (frame.src_ip, frame.src_port)
            break
    if client is None:
        client = (frames[0].src_ip, frames[0].src_port)
    server = None
    for frame in frames:
        endpoint = (frame.src_ip, frame.src_port)
        if endpoint != client:
            server = endpoint
            break
        endpoint = (frame.dst_ip, frame.dst_port)
        if endpoint != client:
            server = endpoint
            break
    if server is None:  # degenerate: a frame from an endpoint to itself
        server = (frames[0].dst_ip, frames[0].dst_port)

    volumes = count_tls_app_bytes(frames, client[0], client[1])
    return Session(
        client_ip=client[0],
        server_ip=server[0],
        client_port=client[1],
        server_port=server[1],
        first_ts=frames[0].ts,
        last_ts=frames[-1].ts,
        up_app_bytes=volumes.up_app_bytes,
        down_app_bytes=volumes.down_app_bytes,
        frame_count=len(frames),
        tls_ok=volumes.up_ok and volumes.down_ok,
    )


def _direction_stream(
    frames: Iterable[FrameRecord], src_ip: str, src_port: int
) -> bytes:
    """Concatenated payload of one direction, exact duplicate seqs dropped."""
    seen: set[int] = set()
    parts: list[bytes] = []
    for frame in frames:
        if not frame.payload:
            continue
        if frame.src_ip != src_ip or frame.src_port != src_port:
            continue
        if frame.seq in seen:
            continue
        seen.add(frame.seq)
        parts.append(frame.payload)
    return b"".join(parts)


def _scan_app_bytes(stream: bytes) -> tuple[int, bool]:
    """Sum application_data record-body lengths from a TLS record stream.

    Scanning stops at the first offset that does not hold a complete,
    plausible record (content type 20-24, version major 3). The second
    element is False unless the scan consumed the whole stream.
    """
    total = 0
    offset = 0
    end = len(stream)
    while offset + 5 <= end:
        content_type = stream[offset]
        if content_type not in _TLS_CONTENT_TYPES or stream[offset + 1] != 3:
            break
        length = (stream[offset + 3] << 8) | stream[offset + 4]
        if offset + 5 + length > end:
            break
        if content_type == TLS_APPLICATION_DATA:
            total += length
        offset += 5 + length
    return total, offset == end


def count_tls_app_bytes(
    frames: list[FrameRecord], client_ip: str, client_port: int
) -> TlsVolumes:
    """Per-direction TLS application-data byte totals for one session's frames.

    Frames must be in timestamp order. Malformed or non-TLS streams keep
    whatever was counted before the first bad offset and clear the ok flag.
    """
    server = None
    for frame in frames:
        for endpoint in ((frame.src_ip, frame.src_port), (frame.dst_ip, frame.dst_port)):
            if endpoint != (client_ip, client_port):
                server = endpoint
                break
        if server is not None:
            break
    if server is None:
        return TlsVolumes(0, 0, True, True)
    up_stream = _direction_stream(frames, client_ip, client_port)
    down_stream = _direction_stream(frames, server[0], server[1])
    up, up_ok = _scan_app_bytes(up_stream)
    down, down_ok = _scan_app_bytes(down_stream)
    return TlsVolumes(up, down, up_ok, down_ok)
