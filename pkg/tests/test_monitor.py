"""Monitor core behavior against a scripted fake peer and a mock clock."""

import io
import math
import random

from addrscope import codec
from addrscope.events import (
    ADDR_RECEIVED,
    CONNECT_OPENED,
    GETADDR_SENT,
    VERSION_RECEIVED,
    LogWriter,
    parse_line,
)
from addrscope.monitor import (
    Close,
    Dial,
    MonitorConfig,
    MonitorCore,
    Send,
    classify_solicited,
)

ALLOWED_COMMANDS = {"version", "verack", "getaddr", "pong"}


def make_core(seeds=(("1.2.3.4", 8333),), **cfg_overrides):
    fh = io.StringIO()
    config = MonitorConfig(seed_addresses=list(seeds), **cfg_overrides)
    core = MonitorCore(config, LogWriter(fh), rng=random.Random(42))
    return core, fh


def peer_version(services=9, version=70016):
    return codec.Version(
        version=version,
        services=services,
        timestamp=0,
        recv_services=0,
        recv_address=codec.NetworkAddress.from_ipv4(9, 9, 9, 9),
        recv_port=0,
        from_services=services,
        from_address=codec.NetworkAddress.from_ipv4(1, 2, 3, 4),
        from_port=8333,
        nonce=1,
        user_agent="/peer:1.0/",
        start_height=1,
    )


def sent_commands(commands):
    out = []
    for command in commands:
        if isinstance(command, Send):
            buf = command.data
            while buf:
                msg, consumed = codec.decode_message(buf)
                out.append(msg)
                buf = buf[consumed:]
    return out


def drive_handshake(core, now=0.0):
    commands = core.start(now)
    dials = [c for c in commands if isinstance(c, Dial)]
    assert len(dials) == 1
    sid = dials[0].session
    core.on_connected(sid, now)
    core.on_data(sid, codec.encode_message(peer_version()), now)
    core.on_data(sid, codec.encode_message(codec.Verack()), now)
    return sid


def logged(fh):
    return [parse_line(line) for line in fh.getvalue().splitlines()]


def test_monitor_only_sends_allowed_commands():
    core, fh = make_core()
    all_sent = []
    commands = core.start(0.0)
    sid = [c for c in commands if isinstance(c, Dial)][0].session
    all_sent += sent_commands(core.on_connected(sid, 0.0))
    all_sent += sent_commands(core.on_data(sid, codec.encode_message(peer_version()), 1.0))
    all_sent += sent_commands(core.on_data(sid, codec.encode_message(codec.Ping(7)), 2.0))
    addr = codec.Addr(
        entries=(codec.AddrEntry(0, 9, codec.NetworkAddress.from_ipv4(5, 5, 5, 5), 8333),)
    )
    all_sent += sent_commands(core.on_data(sid, codec.encode_message(addr), 3.0))
    all_sent += sent_commands(core.on_tick(200.0))
    assert all_sent, "handshake must send something"
    assert {m.command for m in all_sent} <= ALLOWED_COMMANDS


def test_ping_answered_even_before_verack():
    core, fh = make_core()
    commands = core.start(0.0)
    sid = [c for c in commands if isinstance(c, Dial)][0].session
    core.on_connected(sid, 0.0)
    replies = sent_commands(core.on_data(sid, codec.encode_message(codec.Ping(99)), 0.5))
    assert codec.Pong(99) in replies


def test_handshake_sequence_and_log_order():
    core, fh = make_core()
    sid = drive_handshake(core)
    kinds = [e.kind for e in logged(fh)]
    assert kinds[:3] == [CONNECT_OPENED, VERSION_RECEIVED, GETADDR_SENT]
    assert all(e.session == sid for e in logged(fh))


def test_write_ahead_logging():
    """The log line for an observation exists before the command acting on
    it is returned to the driver."""
    core, fh = make_core()
    commands = core.start(0.0)
    sid = [c for c in commands if isinstance(c, Dial)][0].session
    core.on_connected(sid, 0.0)
    before = len(fh.getvalue().splitlines())
    assert before >= 1  # connect_opened logged before VERSION was returned
    core.on_data(sid, codec.encode_message(peer_version()), 1.0)
    events = logged(fh)
    assert events[-1].kind == GETADDR_SENT  # logged before Send returned


def test_old_peer_version_closed():
    core, fh = make_core()
    commands = core.start(0.0)
    sid = [c for c in commands if isinstance(c, Dial)][0].session
    core.on_connected(sid, 0.0)
    out = core.on_data(sid, codec.encode_message(peer_version(version=31000)), 1.0)
    assert any(isinstance(c, Close) for c in out)
    assert sid not in core.sessions


def test_addr_entries_logged_and_dialed():
    core, fh = make_core()
    sid = drive_handshake(core)
    entries = tuple(
        codec.AddrEntry(100, 9, codec.NetworkAddress.from_ipv4(5, 0, 0, i), 8333) for i in range(3)
    )
    core.on_data(sid, codec.encode_message(codec.Addr(entries)), 5.0)
    event = [e for e in logged(fh) if e.kind == ADDR_RECEIVED][0]
    assert event.entry_count == 3
    assert event.solicited_hint is False
    assert {e.addr for e in event.entries} == {"5.0.0.0", "5.0.0.1", "5.0.0.2"}
    dials = [c for c in core.on_tick(6.0) if isinstance(c, Dial)]
    assert {d.addr for d in dials} == {"5.0.0.0", "5.0.0.1", "5.0.0.2"}


def test_solicited_hint_is_size_based():
    assert not classify_solicited(1, 10)
    assert classify_solicited(0, 11)
    assert classify_solicited(5, 1000)
    assert not classify_solicited(3, 1)


def test_large_addr_marked_solicited():
    core, fh = make_core()
    sid = drive_handshake(core)
    entries = tuple(
        codec.AddrEntry(100, 9, codec.NetworkAddress.from_ipv4(5, 1, i // 256, i % 256), 8333)
        for i in range(50)
    )
    core.on_data(sid, codec.encode_message(codec.Addr(entries)), 5.0)
    event = [e for e in logged(fh) if e.kind == ADDR_RECEIVED][-1]
    assert event.solicited_hint is True


def test_reconnect_rate_limit_six_hours():
    core, fh = make_core(reconnect_rate_limit_s=6 * 3600.0)
    commands = core.start(0.0)
    sid = [c for c in commands if isinstance(c, Dial)][0].session
    core.on_connect_failed(sid, "refused", 0.0)
    # retries stay suppressed until six hours after the last attempt
    assert not [c for c in core.on_tick(3600.0) if isinstance(c, Dial)]
    assert not [c for c in core.on_tick(6 * 3600.0 - 1) if isinstance(c, Dial)]
    dials = [c for c in core.on_tick(6 * 3600.0 + 1) if isinstance(c, Dial)]
    assert len(dials) == 1


def test_handshake_timeout_closes_session():
    core, fh = make_core(handshake_timeout_s=30.0)
    commands = core.start(0.0)
    sid = [c for c in commands if isinstance(c, Dial)][0].session
    core.on_connected(sid, 0.0)
    assert not [c for c in core.on_tick(29.0) if isinstance(c, Close)]
    closes = [c for c in core.on_tick(31.0) if isinstance(c, Close)]
    assert [c.session for c in closes] == [sid]


def test_periodic_getaddr_roughly_uniform():
    """Over many ticks, each established session should get close to an
    equal share of the periodic GETADDRs."""
    seeds = [(f"10.0.0.{i}", 8333) for i in range(1, 5)]
    core, fh = make_core(seeds=seeds, getaddr_interval_s=1.0)
    commands = core.start(0.0)
    sids = [c.session for c in commands if isinstance(c, Dial)]
    assert len(sids) == 4
    for sid in sids:
        core.on_connected(sid, 0.0)
        core.on_data(sid, codec.encode_message(peer_version()), 0.0)
    baseline = {
        e.session for e in logged(fh) if e.kind == GETADDR_SENT
    }  # one per handshake
    n_ticks = 1000
    for i in range(n_ticks):
        core.on_tick(1.0 + i)
    counts = {sid: 0 for sid in sids}
    per_handshake = {sid: 0 for sid in sids}
    for e in logged(fh):
        if e.kind == GETADDR_SENT:
            if per_handshake[e.session] == 0:
                per_handshake[e.session] = 1
                continue
            counts[e.session] += 1
    assert sum(counts.values()) == n_ticks
    expected = n_ticks / len(sids)
    tolerance = 5 * math.sqrt(expected)
    for sid, count in counts.items():
        assert abs(count - expected) < tolerance, (sid, count)


def test_codec_error_closes_session():
    core, fh = make_core()
    sid = drive_handshake(core)
    bad = bytearray(codec.encode_message(codec.Ping(1)))
    bad[20] ^= 0xFF  # corrupt checksum
    out = core.on_data(sid, bytes(bad), 9.0)
    assert any(isinstance(c, Close) for c in out)


def test_partial_frames_reassembled():
    core, fh = make_core()
    sid = drive_handshake(core)
    wire = codec.encode_message(codec.Ping(1234))
    out = []
    for i in range(0, len(wire), 5):
        out += core.on_data(sid, wire[i : i + 5], 9.0)
    assert codec.Pong(1234) in sent_commands(out)
