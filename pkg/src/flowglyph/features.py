"""Party-pair grouping and per-group feature extraction.

Sessions between the same two hosts and server port form one group no
matter which client port each connection used. A group's features are
the session start times, the gaps between consecutive sessions, and the
raw up/down TLS application-byte legs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .pcapio import ip_to_int
from .sessions import Session, SessionSet


@dataclass
class PartyGroup:
    """All sessions sharing a (client_ip, server_ip, server_port) triplet."""

    client_ip: str
    server_ip: str
    server_port: int
    sessions: list[Session]
    m_index: int = 0

    @property
    def triplet(self) -> tuple[str, str, int]:
        return (self.client_ip, self.server_ip, self.server_port)


@dataclass
class FeatureSet:
    """Temporal and volume features of one PartyGroup.

    intervals[i] is the gap between session i's last frame and session
    i+1's first frame, clamped at 0; `overlapped` records whether any
    clamp fired. Both byte legs are kept raw so a ratio is recoverable
    without ever dividing by zero.
    """

    first_ts_seq: list[float]
    intervals: list[float]
    up_bytes: list[int]
    down_bytes: list[int]
    group_ref: tuple[str, str, int]
    overlapped: bool = False

    @property
    def n_sessions(self) -> int:
        return len(self.first_ts_seq)

    def to_dict(self) -> dict:
        return {
            "group_ref": list(self.group_ref),
            "first_ts_seq": self.first_ts_seq,
            "intervals": self.intervals,
            "up_bytes": self.up_bytes,
            "down_bytes": self.down_bytes,
            "overlapped": self.overlapped,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSet":
        ref = d["group_ref"]
        return cls(
            first_ts_seq=list(d["first_ts_seq"]),
            intervals=list(d["intervals"]),
            up_bytes=list(d["up_bytes"]),
            down_bytes=list(d["down_bytes"]),
            group_ref=(ref[0], ref[1], int(ref[2])),
            overlapped=bool(d.get("overlapped", False)),
        )


def group_sessions(session_set: SessionSet) -> list[PartyGroup]:
    """Bucket sessions by party triplet, ignoring the client port.

    Groups come out ordered by (client ip, server ip, server port) with
    IPs compared as 32-bit integers; within a group sessions are ordered
    by (first_ts, client_port).
    """
    buckets: dict[tuple[str, str, int], list[Session]] = {}
    for session in session_set.sessions:
        buckets.setdefault(session.triplet_key(), []).append(session)

    groups = []
    ordered = sorted(
        buckets.items(),
        key=lambda item: (ip_to_int(item[0][0]), ip_to_int(item[0][1]), item[0][2]),
    )
    for m_index, (triplet, sessions) in enumerate(ordered):
        sessions = sorted(sessions, key=lambda s: (s.first_ts, s.client_port))
        groups.append(
            PartyGroup(
                client_ip=triplet[0],
                server_ip=triplet[1],
                server_port=triplet[2],
                sessions=sessions,
                m_index=m_index,
            )
        )
    return groups


def extract_features(group: PartyGroup) -> FeatureSet:
    """Feature vectors for one group: start times, gaps, byte legs."""
    sessions = group.sessions
    intervals = []
    overlapped = False
    for prev, cur in zip(sessions, sessions[1:]):
        raw = cur.first_ts - prev.last_ts
        if raw < 0:
            raw = 0.0
            overlapped = True
        intervals.append(raw)
    return FeatureSet(
        first_ts_seq=[s.first_ts for s in sessions],
        intervals=intervals,
        up_bytes=[s.up_app_bytes for s in sessions],
        down_bytes=[s.down_app_bytes for s in sessions],
        group_ref=group.triplet,
        overlapped=overlapped,
    )
