"""Deterministic synthetic traffic generator.

Emits labeled pcap captures, one communicating-party group per file,
for five traffic classes: periodic low-volume C&C heartbeats and four
kinds of ordinary client traffic. TLS record headers are real; record
bodies are zero-filled because the pipeline only reads headers and
lengths. Everything is driven by seeded generators so identical inputs
give byte-identical files.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .pcapio import ACK, FIN, PSH, SYN, Capture, FrameRecord, make_ts, write_pcap

MAX_RECORD_BODY = 16384
TLS12_VERSION = 0x0303
SERVER_PORT = 443

_US = 10**6


class InvalidProfile(ValueError):
    """Raised when a ClassProfile or DatasetSpec is unusable."""


class IoFailure(RuntimeError):
    """Raised when dataset files cannot be written."""


@dataclass(frozen=True)
class IntervalModel:
    """Session start-to-start spacing: 'periodic' for jittered heartbeats,
    'bursty' for clumps of sessions separated by long exponential gaps."""

    kind: str
    mean: float = 0.0
    jitter: float = 0.0
    burst_size: int = 0
    gap: float = 0.0

    def validate(self) -> None:
        if self.kind == "periodic":
            if self.mean <= 0 or not 0 < self.jitter < 1:
                raise InvalidProfile(
                    f"periodic model needs mean > 0 and jitter in (0, 1), "
                    f"got mean={self.mean} jitter={self.jitter}"
                )
        elif self.kind == "bursty":
            if self.burst_size < 1 or self.gap <= 0:
                raise InvalidProfile(
                    f"bursty model needs burst_size >= 1 and gap > 0, "
                    f"got burst_size={self.burst_size} gap={self.gap}"
                )
        else:
            raise InvalidProfile(f"unknown interval model {self.kind!r}")

    def to_dict(self) -> dict:
        if self.kind == "periodic":
            return {"kind": "periodic", "mean": self.mean, "jitter": self.jitter}
        return {"kind": "bursty", "burst_size": self.burst_size, "gap": self.gap}

    @classmethod
    def from_dict(cls, d: dict) -> "IntervalModel":
        kind = d.get("kind")
        if kind == "periodic":
            return cls(kind="periodic", mean=d["mean"], jitter=d["jitter"])
        if kind == "bursty":
            return cls(kind="bursty", burst_size=d["burst_size"], gap=d["gap"])
        raise InvalidProfile(f"unknown interval model {kind!r}")


@dataclass(frozen=True)
class LogNormalBytes:
    """Log-normal volume model over per-session application bytes."""

    mu: float
    sigma: float

    def validate(self) -> None:
        if self.mu <= 0 or self.sigma <= 0:
            raise InvalidProfile(
                f"log-normal parameters must be positive, got mu={self.mu} "
                f"sigma={self.sigma}"
            )

    def draw(self, rng: np.random.Generator) -> int:
        return int(round(rng.lognormal(self.mu, self.sigma)))

    def to_dict(self) -> dict:
        return {"mu": self.mu, "sigma": self.sigma}

    @classmethod
    def from_dict(cls, d: dict) -> "LogNormalBytes":
        return cls(mu=d["mu"], sigma=d["sigma"])


@dataclass(frozen=True)
class ClassProfile:
    name: str
    sessions_per_group: tuple[int, int]
    interval_model: IntervalModel
    up_bytes_model: LogNormalBytes
    down_bytes_model: LogNormalBytes
    records_per_session: tuple[int, int]

    def validate(self) -> None:
        for label, (lo, hi) in (
            ("sessions_per_group", self.sessions_per_group),
            ("records_per_session", self.records_per_session),
        ):
            if lo < 1 or hi < lo:
                raise InvalidProfile(f"{label} range [{lo}, {hi}] is empty or invalid")
        self.interval_model.validate()
        self.up_bytes_model.validate()
        self.down_bytes_model.validate()

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "sessions_per_group": list(self.sessions_per_group),
            "interval_model": self.interval_model.to_dict(),
            "up_bytes_model": self.up_bytes_model.to_dict(),
            "down_bytes_model": self.down_bytes_model.to_dict(),
            "records_per_session": list(self.records_per_session),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassProfile":
        profile = cls(
            name=d["name"],
            sessions_per_group=tuple(d["sessions_per_group"]),
            interval_model=IntervalModel.from_dict(d["interval_model"]),
            up_bytes_model=LogNormalBytes.from_dict(d["up_bytes_model"]),
            down_bytes_model=LogNormalBytes.from_dict(d["down_bytes_model"]),
            records_per_session=tuple(d["records_per_session"]),
        )
        profile.validate()
        return profile


def _profile(name, sessions, interval, up, down, records) -> ClassProfile:
    return ClassProfile(
        name=name,
        sessions_per_group=sessions,
        interval_model=interval,
        up_bytes_model=LogNormalBytes(*up),
        down_bytes_model=LogNormalBytes(*down),
        records_per_session=records,
    )


DEFAULT_PROFILES: dict[str, ClassProfile] = {
    "apt_cc": _profile(
        "apt_cc",
        (20, 60),
        IntervalModel(kind="periodic", mean=30.0, jitter=0.1),
        (math.log(300), 0.3),
        (math.log(200), 0.3),
        (1, 4),
    ),
    "browser": _profile(
        "browser",
        (5, 30),
        IntervalModel(kind="bursty", burst_size=5, gap=60.0),
        (math.log(2000), 0.5),
        (math.log(200000), 1.0),
        (4, 40),
    ),
    "mail": _profile(
        "mail",
        (2, 10),
        IntervalModel(kind="bursty", burst_size=2, gap=600.0),
        (math.log(150000), 0.8),
        (math.log(4000), 0.6),
        (4, 30),
    ),
    "office": _profile(
        "office",
        (3, 12),
        IntervalModel(kind="bursty", burst_size=3, gap=300.0),
        (math.log(8000), 0.7),
        (math.log(9000), 0.7),
        (2, 20),
    ),
    "video": _profile(
        "video",
        (2, 5),
        IntervalModel(kind="bursty", burst_size=2, gap=120.0),
        (math.log(5000), 0.5),
        (math.log(600000), 0.6),
        (30, 80),
    ),
}


@dataclass
class DatasetSpec:
    groups_per_class: int
    profiles: list[ClassProfile]
    seed: int
    output_dir: Path


def tls_record(content_type: int, body_len: int) -> bytes:
    """One TLS record with a zero-filled body."""
    return struct.pack(">BHH", content_type, TLS12_VERSION, body_len) + bytes(body_len)


def _app_records(total: int, n_hint: int) -> list[int]:
    """Split a session volume into record body sizes summing to total."""
    if total <= 0:
        return []
    chunk = min(MAX_RECORD_BODY, max(1, math.ceil(total / n_hint)))
    sizes = [chunk] * (total // chunk)
    if total % chunk:
        sizes.append(total % chunk)
    return sizes


class _Endpoint:
    """Per-direction frame factory tracking its own sequence number."""

    __slots__ = ("ip", "port", "peer_ip", "peer_port", "seq")

    def __init__(self, ip, port, peer_ip, peer_port, seq):
        self.ip, self.port = ip, port
        self.peer_ip, self.peer_port = peer_ip, peer_port
        self.seq = seq

    def frame(self, t_us: int, flags: int, payload: bytes = b"") -> FrameRecord:
        record = FrameRecord(
            ts=make_ts(t_us // _US, t_us % _US),
            src_ip=self.ip,
            dst_ip=self.peer_ip,
            src_port=self.port,
            dst_port=self.peer_port,
            tcp_flags=flags,
            seq=self.seq,
            payload=payload,
        )
        self.seq = (self.seq + max(len(payload), 1 if flags & (SYN | FIN) else 0)) % 2**32
        return record


def _synth_session(
    rng: np.random.Generator,
    client_ip: str,
    server_ip: str,
    client_port: int,
    start_us: int,
    up_total: int,
    down_total: int,
    records_range: tuple[int, int],
) -> list[FrameRecord]:
    """SYN handshake, dummy TLS handshake, app records up then down, FIN."""
    client = _Endpoint(client_ip, client_port, server_ip, SERVER_PORT,
                       int(rng.integers(0, 2**31)))
    server = _Endpoint(server_ip, SERVER_PORT, client_ip, client_port,
                       int(rng.integers(0, 2**31)))
    t = start_us

    def step() -> int:
        nonlocal t
        t += int(rng.integers(500, 5000))
        return t

    frames = [client.frame(t, SYN)]
    frames.append(server.frame(step(), SYN | ACK))
    frames.append(client.frame(step(), ACK))

    hello = tls_record(22, int(rng.integers(180, 400)))
    frames.append(client.frame(step(), PSH | ACK, hello))
    reply = tls_record(22, int(rng.integers(800, 3500)))
    frames.append(server.frame(step(), PSH | ACK, reply))
    finish = tls_record(20, 1) + tls_record(22, 40)
    frames.append(client.frame(step(), PSH | ACK, finish))
    frames.append(server.frame(step(), PSH | ACK, finish))

    lo, hi = records_range
    for body in _app_records(up_total, int(rng.integers(lo, hi + 1))):
        frames.append(client.frame(step(), PSH | ACK, tls_record(23, body)))
    for body in _app_records(down_total, int(rng.integers(lo, hi + 1))):
        frames.append(server.frame(step(), PSH | ACK, tls_record(23, body)))

    frames.append(client.frame(step(), FIN | ACK))
    frames.append(server.frame(step(), FIN | ACK))
    frames.append(client.frame(step(), ACK))
    return frames


def _session_gaps_us(
    rng: np.random.Generator, model: IntervalModel, n: int
) -> list[int]:
    """Start-to-start gaps between consecutive sessions, in microseconds."""
    gaps = []
    if model.kind == "periodic":
        for _ in range(n - 1):
            factor = 1.0 + rng.uniform(-model.jitter, model.jitter)
            gaps.append(int(round(model.mean * factor * _US)))
    else:
        position = 1
        for _ in range(n - 1):
            if position < model.burst_size:
                gaps.append(int(round(rng.uniform(0.05, 0.5) * _US)))
                position += 1
            else:
                gaps.append(int(round(rng.exponential(model.gap) * _US)) + _US)
                position = 1
    return gaps


def synth_group(profile: ClassProfile, seed) -> Capture:
    """Generate one party group's traffic as a Capture.

    One random client, one random server on port 443, a fresh client
    port per session, session starts spaced by the interval model.
    """
    profile.validate()
    rng = np.random.default_rng(seed)
    client_ip = "10.{}.{}.{}".format(*rng.integers(0, 250, size=2), rng.integers(1, 250))
    server_ip = "198.51.{}.{}".format(rng.integers(0, 250), rng.integers(1, 250))

    n = int(rng.integers(profile.sessions_per_group[0],
                         profile.sessions_per_group[1] + 1))
    ports = rng.choice(np.arange(1024, 65536), size=n, replace=False)
    gaps = _session_gaps_us(rng, profile.interval_model, n)

    frames: list[FrameRecord] = []
    t_us = 1_700_000_000 * _US + int(rng.integers(0, _US))
    for i in range(n):
        if i > 0:
            t_us += gaps[i - 1]
        frames.extend(
            _synth_session(
                rng,
                client_ip,
                server_ip,
                int(ports[i]),
                t_us,
                profile.up_bytes_model.draw(rng),
                profile.down_bytes_model.draw(rng),
                profile.records_per_session,
            )
        )
    frames.sort(key=lambda f: f.ts)
    return Capture(frames=frames)


def synth_dataset(spec: DatasetSpec) -> Path:
    """Write groups_per_class pcaps per profile plus a JSON-lines manifest.

    Group seeds derive from (spec.seed, class index, group index), so
    any file can be regenerated in isolation. Returns the manifest path.
    """
    if len(spec.profiles) < 2:
        raise InvalidProfile("a dataset needs at least 2 class profiles")
    if spec.groups_per_class < 1:
        raise InvalidProfile("groups_per_class must be >= 1")
    for profile in spec.profiles:
        profile.validate()

    out_dir = Path(spec.output_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest_path = out_dir / "manifest.jsonl"
        with open(manifest_path, "w", encoding="utf-8") as manifest:
            for class_idx, profile in enumerate(spec.profiles):
                for group_idx in range(spec.groups_per_class):
                    seed = np.random.SeedSequence(
                        [spec.seed, class_idx, group_idx]
                    )
                    capture = synth_group(profile, seed)
                    name = f"{profile.name}_{group_idx:05d}.pcap"
                    (out_dir / name).write_bytes(write_pcap(capture))
                    manifest.write(
                        json.dumps({"path": name, "label": profile.name}) + "\n"
                    )
    except OSError as exc:
        raise IoFailure(f"cannot write dataset: {exc}") from exc
    return manifest_path


def load_profiles(config: dict | None) -> list[ClassProfile]:
    """Default profiles, optionally overridden per class from a config dict.

    config["profiles"] maps class name to partial or complete profile
    fields; unknown names define new classes and must be complete.
    """
    profiles = {name: p.to_dict() for name, p in DEFAULT_PROFILES.items()}
    if config:
        for name, fields in config.get("profiles", {}).items():
            base = profiles.get(name, {"name": name})
            merged = {**base, **fields, "name": name}
            profiles[name] = merged
    return [ClassProfile.from_dict(d) for d in profiles.values()]
