"""Session assembly and TLS application-data accounting."""

import pytest

from flowglyph.pcapio import ACK, FIN, RST, SYN, Capture
from flowglyph.sessions import (
    DEFAULT_IDLE_TIMEOUT,
    Session,
    assemble_sessions,
    count_tls_app_bytes,
)
from conftest import frame, reply, tls

CLIENT = ("10.0.0.1", 40000)
SERVER = ("198.51.0.1", 443)


def _capture(frames):
    return Capture(frames=sorted(frames, key=lambda f: f.ts))


def test_both_directions_one_session():
    f1 = frame(1.0, flags=SYN)
    f2 = reply(f1, ts=1.1, flags=SYN | ACK)
    f3 = frame(1.2)
    got = assemble_sessions(_capture([f1, f2, f3]))
    assert got.n == 1
    s = got.sessions[0]
    assert (s.client_ip, s.client_port) == CLIENT
    assert (s.server_ip, s.server_port) == SERVER
    assert s.frame_count == 3
    assert (s.first_ts, s.last_ts) == (1.0, 1.2)


def test_client_is_syn_sender_even_if_server_speaks_first():
    # server data arrives first; the bare SYN still identifies the client
    f1 = frame(1.0, src_ip=SERVER[0], src_port=SERVER[1],
               dst_ip=CLIENT[0], dst_port=CLIENT[1], payload=b"x")
    f2 = frame(1.5, flags=SYN)
    got = assemble_sessions(_capture([f1, f2]))
    assert (got.sessions[0].client_ip, got.sessions[0].client_port) == CLIENT


def test_syn_ack_does_not_elect_client():
    f1 = frame(1.0, src_ip=SERVER[0], src_port=SERVER[1],
               dst_ip=CLIENT[0], dst_port=CLIENT[1], flags=SYN | ACK)
    f2 = frame(1.1, flags=SYN)
    got = assemble_sessions(_capture([f1, f2]))
    assert (got.sessions[0].client_ip, got.sessions[0].client_port) == CLIENT


def test_no_syn_falls_back_to_first_sender():
    f1 = frame(2.0, payload=b"a")
    f2 = reply(f1, ts=2.1, payload=b"b")
    got = assemble_sessions(_capture([f1, f2]))
    assert (got.sessions[0].client_ip, got.sessions[0].client_port) == CLIENT


def test_idle_gap_splits_but_exact_timeout_does_not():
    base = [frame(0.0, flags=SYN), frame(DEFAULT_IDLE_TIMEOUT)]
    assert assemble_sessions(_capture(base)).n == 1
    late = [frame(0.0, flags=SYN), frame(DEFAULT_IDLE_TIMEOUT + 0.000001)]
    got = assemble_sessions(_capture(late))
    assert got.n == 2
    assert [s.frame_count for s in got.sessions] == [1, 1]


def test_idle_timeout_parameter():
    frames = [frame(0.0), frame(11.0)]
    assert assemble_sessions(_capture(frames), idle_timeout=10.0).n == 2
    assert assemble_sessions(_capture(frames), idle_timeout=12.0).n == 1


def test_rst_closes_session():
    frames = [frame(1.0, flags=SYN), frame(2.0, flags=RST | ACK), frame(3.0, flags=SYN)]
    got = assemble_sessions(_capture(frames))
    assert got.n == 2
    assert got.sessions[0].frame_count == 2
    assert got.sessions[1].first_ts == 3.0


def test_fin_fin_ack_close_keeps_closing_ack():
    f1 = frame(1.0, flags=SYN)
    f2 = frame(2.0, flags=FIN | ACK)
    f3 = reply(f1, ts=2.1, flags=FIN | ACK)
    f4 = frame(2.2, flags=ACK)  # answers the second FIN; last of the session
    f5 = frame(5.0, flags=SYN)  # same 4-tuple reused afterwards
    got = assemble_sessions(_capture([f1, f2, f3, f4, f5]))
    assert got.n == 2
    assert got.sessions[0].frame_count == 4
    assert got.sessions[0].last_ts == 2.2
    assert got.sessions[1].first_ts == 5.0


def test_one_fin_does_not_close():
    frames = [frame(1.0, flags=SYN), frame(2.0, flags=FIN | ACK),
              frame(3.0, flags=ACK), frame(4.0, flags=ACK)]
    assert assemble_sessions(_capture(frames)).n == 1


def test_sessions_sorted_by_start_then_endpoints():
    a = frame(5.0, src_ip="10.0.0.9", flags=SYN)
    b = frame(1.0, src_ip="10.0.0.5", src_port=50001, flags=SYN)
    c = frame(1.0, src_ip="10.0.0.5", src_port=50000, flags=SYN)
    got = assemble_sessions(_capture([a, b, c]))
    order = [(s.client_ip, s.client_port) for s in got.sessions]
    assert order == [("10.0.0.5", 50000), ("10.0.0.5", 50001), ("10.0.0.9", 40000)]


def test_tls_volumes_counted_per_direction():
    up1 = tls(22, 100)
    up2 = tls(23, 400) + tls(23, 200)  # two records in one segment
    down = tls(22, 300) + tls(20, 1) + tls(23, 50)
    frames = [
        frame(1.0, flags=SYN),
        reply(frame(1.0), ts=1.1, flags=SYN | ACK),
        frame(1.2, seq=1, payload=up1),
        reply(frame(1.0), ts=1.3, seq=1, payload=down),
        frame(1.4, seq=2, payload=up2),
    ]
    got = assemble_sessions(_capture(frames)).sessions[0]
    assert got.up_app_bytes == 600
    assert got.down_app_bytes == 50
    assert got.tls_ok


def test_record_split_across_segments():
    blob = tls(23, 1000)
    frames = [
        frame(1.0, seq=1, payload=blob[:300]),
        frame(1.1, seq=2, payload=blob[300:]),
    ]
    volumes = count_tls_app_bytes(frames, *CLIENT)
    assert volumes.up_app_bytes == 1000
    assert volumes.up_ok


def test_duplicate_seq_dropped():
    rec = tls(23, 400)
    frames = [
        frame(1.0, seq=7, payload=rec),
        frame(1.1, seq=7, payload=rec),  # straight retransmission
        frame(1.2, seq=8, payload=tls(23, 10)),
    ]
    volumes = count_tls_app_bytes(frames, *CLIENT)
    assert volumes.up_app_bytes == 410
    assert volumes.up_ok


def test_non_tls_stream_flagged():
    frames = [frame(1.0, seq=1, payload=b"GET / HTTP/1.1\r\n")]
    volumes = count_tls_app_bytes(frames, *CLIENT)
    assert volumes.up_app_bytes == 0
    assert not volumes.up_ok
    assert volumes.down_ok  # the silent direction stays clean


def test_bad_version_byte_stops_scan():
    frames = [frame(1.0, seq=1, payload=tls(23, 40) + tls(23, 8, version=0x0203))]
    volumes = count_tls_app_bytes(frames, *CLIENT)
    assert volumes.up_app_bytes == 40
    assert not volumes.up_ok


def test_truncated_final_record_keeps_prior_count():
    frames = [frame(1.0, seq=1, payload=tls(23, 100) + tls(23, 500)[:200])]
    volumes = count_tls_app_bytes(frames, *CLIENT)
    assert volumes.up_app_bytes == 100
    assert not volumes.up_ok


def test_all_handshake_content_types_consumed():
    # types 20/21/22/24 are valid records but contribute no app bytes
    payload = tls(20, 1) + tls(21, 2) + tls(22, 800) + tls(24, 16) + tls(23, 99)
    volumes = count_tls_app_bytes([frame(1.0, seq=1, payload=payload)], *CLIENT)
    assert volumes.up_app_bytes == 99
    assert volumes.up_ok


def test_empty_directions_are_ok():
    volumes = count_tls_app_bytes([frame(1.0, flags=SYN)], *CLIENT)
    assert volumes == type(volumes)(0, 0, True, True)


def test_session_tls_ok_false_when_either_direction_bad():
    frames = [
        frame(1.0, flags=SYN),
        frame(1.1, seq=1, payload=tls(23, 10)),
        reply(frame(1.0), ts=1.2, seq=1, payload=b"\xffjunk"),
    ]
    got = assemble_sessions(_capture(frames)).sessions[0]
    assert got.up_app_bytes == 10
    assert not got.tls_ok


def test_to_dict_round_trips_fields():
    s = Session(
        client_ip="10.0.0.1", server_ip="198.51.0.1", client_port=40000,
        server_port=443, first_ts=1.0, last_ts=2.0, up_app_bytes=3,
        down_app_bytes=4, frame_count=5, tls_ok=False,
    )
    d = s.to_dict()
    assert d["client_port"] == 40000
    assert d["tls_ok"] is False
    assert s.triplet_key() == ("10.0.0.1", "198.51.0.1", 443)
