"""Passive monitor node.

The core is sans-IO: a driver owns the sockets (or fake transports in
tests) and feeds events in; the core returns commands (dial, send, close)
and writes every observation to the event log *before* returning the
command that acts on it (write-ahead order).

The monitor originates only four message kinds: VERSION, VERACK, GETADDR
and PONG. PONG is required in practice: without it peers drop the
connection after their ping timeout, making long passive sessions
impossible.
"""

from __future__ import annotations

import heapq
import random
import time as _time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from . import codec
from .events import (
    ADDR_RECEIVED,
    CONNECT_FAILED,
    CONNECT_OPENED,
    DISCONNECTED,
    GETADDR_SENT,
    VERSION_RECEIVED,
    LogWriter,
    LoggedEntry,
    MonitorEvent,
)

SOLICITED_SIZE_THRESHOLD = 10  # entries; larger messages are getaddr replies


@dataclass
class MonitorConfig:
    seed_addresses: List[Tuple[str, int]]
    user_agent: str = "/addrscope:0.1.0/"
    getaddr_interval_s: float = 120.0
    reconnect_rate_limit_s: float = 6 * 3600.0
    handshake_timeout_s: float = 30.0
    connect_timeout_s: float = 10.0
    max_sessions: int = 20000
    magic: bytes = codec.MAINNET_MAGIC

    def validate(self) -> None:
        if self.getaddr_interval_s <= 0:
            raise ValueError("getaddr_interval must be positive")
        if self.reconnect_rate_limit_s <= 0:
            raise ValueError("reconnect_rate_limit must be positive")
        if not self.seed_addresses:
            raise ValueError("at least one seed address is required")


# Commands returned to the driver.


@dataclass(frozen=True)
class Dial:
    session: int
    addr: str
    port: int


@dataclass(frozen=True)
class Send:
    session: int
    data: bytes


@dataclass(frozen=True)
class Close:
    session: int
    reason: str


Command = object


@dataclass
class _Session:
    session_id: int
    addr: str
    port: int
    opened_at: Optional[float] = None
    dialed_at: float = 0.0
    established: bool = False
    buffer: bytearray = field(default_factory=bytearray)
    getaddrs_sent: int = 0
    large_addr_after_getaddr: int = 0


@dataclass
class _BookEntry:
    last_attempt: float = float("-inf")
    last_success: float = float("-inf")
    source: str = "addr_gossip"  # or "seed"


def classify_solicited(session_getaddrs_outstanding: int, entry_count: int) -> bool:
    """Size-based solicited hint: replies to GETADDR are the large
    messages; anything with more than 10 entries is treated as solicited.
    Small messages are never solicited. Final filtering happens in the
    analysis stage; this flag is advisory."""
    return entry_count > SOLICITED_SIZE_THRESHOLD


class MonitorCore:
    """Protocol/state logic of the monitor, independent of transport."""

    def __init__(self, config: MonitorConfig, log: LogWriter, rng: Optional[random.Random] = None):
        config.validate()
        self.config = config
        self.log = log
        self.rng = rng or random.Random()
        self.sessions: Dict[int, _Session] = {}
        self.book: Dict[Tuple[str, int], _BookEntry] = {}
        self._attempt_queue: List[Tuple[float, Tuple[str, int]]] = []
        self._next_session_id = 0
        self._next_getaddr_tick: Optional[float] = None
        self._dialing = 0

    # -- lifecycle ---------------------------------------------------------

    def start(self, now: float) -> List[Command]:
        for addr, port in self.config.seed_addresses:
            self.book[(addr, port)] = _BookEntry(source="seed")
            heapq.heappush(self._attempt_queue, (now, (addr, port)))
        self._next_getaddr_tick = now + self.config.getaddr_interval_s
        return self.on_tick(now)

    def on_tick(self, now: float) -> List[Command]:
        """Advance timers: due connection attempts, handshake timeouts and
        the periodic GETADDR."""
        commands: List[Command] = []
        commands.extend(self._due_attempts(now))
        commands.extend(self._handshake_timeouts(now))
        if self._next_getaddr_tick is not None and now >= self._next_getaddr_tick:
            self._next_getaddr_tick += self.config.getaddr_interval_s
            commands.extend(self._getaddr_tick(now))
        return commands

    # -- driver callbacks --------------------------------------------------

    def on_connected(self, session_id: int, now: float) -> List[Command]:
        sess = self.sessions[session_id]
        self._dialing -= 1
        sess.opened_at = now
        entry = self.book[(sess.addr, sess.port)]
        entry.last_success = now
        self._log(sess, now, CONNECT_OPENED)
        version = codec.Version(
            version=codec.PROTOCOL_VERSION,
            services=0,
            timestamp=int(now),
            recv_services=0,
            recv_address=codec.NetworkAddress.from_string(sess.addr),
            recv_port=sess.port,
            from_services=0,
            from_address=codec.NetworkAddress.from_string("0.0.0.0"),
            from_port=0,
            nonce=self.rng.getrandbits(64),
            user_agent=self.config.user_agent,
            start_height=0,
            relay=False,
        )
        return [Send(session_id, self._encode(version))]

    def on_connect_failed(self, session_id: int, reason: str, now: float) -> List[Command]:
        sess = self.sessions.pop(session_id)
        self._dialing -= 1
        self._log(sess, now, CONNECT_FAILED, reason=reason)
        self._schedule_retry(sess.addr, sess.port, now)
        return []

    def on_closed(self, session_id: int, reason: str, now: float) -> List[Command]:
        sess = self.sessions.pop(session_id, None)
        if sess is None or sess.opened_at is None:
            return []
        self._log(sess, now, DISCONNECTED, reason=reason)
        self._schedule_retry(sess.addr, sess.port, now)
        return []

    def on_data(self, session_id: int, data: bytes, now: float) -> List[Command]:
        sess = self.sessions.get(session_id)
        if sess is None:
            return []
        sess.buffer.extend(data)
        commands: List[Command] = []
        while True:
            try:
                result = codec.decode_message(bytes(sess.buffer), self.config.magic)
            except codec.CodecError as exc:
                commands.append(self._close(sess, f"codec: {exc}", now))
                return commands
            if isinstance(result, codec.NeedMoreData):
                return commands
            message, consumed = result
            del sess.buffer[:consumed]
            commands.extend(self._handle_message(sess, message, now))
            if session_id not in self.sessions:
                return commands

    # -- message handling ----------------------------------------------------

    def _handle_message(self, sess: _Session, message: codec.Message, now: float) -> List[Command]:
        if isinstance(message, codec.Version):
            return self._handle_version(sess, message, now)
        if isinstance(message, codec.Ping):
            return [Send(sess.session_id, self._encode(codec.Pong(message.nonce)))]
        if isinstance(message, codec.Addr):
            return self._handle_addr(sess, message, now)
        # verack, pong, unknown commands: the monitor stays passive
        return []

    def _handle_version(self, sess: _Session, message: codec.Version, now: float) -> List[Command]:
        if message.version < codec.MIN_PEER_VERSION:
            return [self._close(sess, f"peer version {message.version} too old", now)]
        self._log(
            sess,
            now,
            VERSION_RECEIVED,
            version=message.version,
            services=message.services,
            user_agent=message.user_agent,
        )
        sess.established = True
        commands = [Send(sess.session_id, self._encode(codec.Verack()))]
        commands.extend(self._send_getaddr(sess, now))
        return commands

    def _handle_addr(self, sess: _Session, message: codec.Addr, now: float) -> List[Command]:
        solicited = classify_solicited(sess.getaddrs_sent, len(message.entries))
        logged = tuple(
            LoggedEntry(e.timestamp, e.services, str(e.address), e.port) for e in message.entries
        )
        self._log(
            sess,
            now,
            ADDR_RECEIVED,
            entry_count=len(logged),
            entries=logged,
            solicited_hint=solicited,
        )
        for entry in logged:
            key = (entry.addr, entry.port)
            if key not in self.book:
                self.book[key] = _BookEntry()
                heapq.heappush(self._attempt_queue, (now, key))
        return []

    # -- timers --------------------------------------------------------------

    def _due_attempts(self, now: float) -> List[Command]:
        commands: List[Command] = []
        active = {(s.addr, s.port) for s in self.sessions.values()}
        while self._attempt_queue and self._attempt_queue[0][0] <= now:
            _, key = heapq.heappop(self._attempt_queue)
            entry = self.book.get(key)
            if entry is None:
                continue
            if key in active:
                continue
            if now - entry.last_attempt < self.config.reconnect_rate_limit_s:
                continue
            if len(self.sessions) >= self.config.max_sessions:
                heapq.heappush(self._attempt_queue, (now + 60.0, key))
                break
            entry.last_attempt = now
            addr, port = key
            session_id = self._next_session_id
            self._next_session_id += 1
            self.sessions[session_id] = _Session(session_id, addr, port, dialed_at=now)
            self._dialing += 1
            active.add(key)
            commands.append(Dial(session_id, addr, port))
        return commands

    def _handshake_timeouts(self, now: float) -> List[Command]:
        commands = []
        for sess in list(self.sessions.values()):
            if sess.established or sess.opened_at is None:
                continue
            if now - sess.opened_at >= self.config.handshake_timeout_s:
                commands.append(self._close(sess, "handshake timeout", now))
        return commands

    def _getaddr_tick(self, now: float) -> List[Command]:
        established = [s for s in self.sessions.values() if s.established]
        if not established:
            return []
        sess = established[self.rng.randrange(len(established))]
        return self._send_getaddr(sess, now)

    def _send_getaddr(self, sess: _Session, now: float) -> List[Command]:
        sess.getaddrs_sent += 1
        self._log(sess, now, GETADDR_SENT)
        return [Send(sess.session_id, self._encode(codec.Getaddr()))]

    # -- helpers ---------------------------------------------------------------

    def _schedule_retry(self, addr: str, port: int, now: float) -> None:
        entry = self.book.get((addr, port))
        if entry is None:
            return
        heapq.heappush(
            self._attempt_queue,
            (entry.last_attempt + self.config.reconnect_rate_limit_s, (addr, port)),
        )

    def _close(self, sess: _Session, reason: str, now: float) -> Close:
        self.sessions.pop(sess.session_id, None)
        if sess.opened_at is not None:
            self._log(sess, now, DISCONNECTED, reason=reason)
        self._schedule_retry(sess.addr, sess.port, now)
        return Close(sess.session_id, reason)

    def _encode(self, message: codec.Message) -> bytes:
        return codec.encode_message(message, self.config.magic)

    def _log(self, sess: _Session, now: float, kind: str, **fields) -> None:
        self.log.write(
            MonitorEvent(
                ts_ms=int(now * 1000),
                session=sess.session_id,
                remote_addr=sess.addr,
                remote_port=sess.port,
                kind=kind,
                **fields,
            )
        )


def wall_clock() -> float:
    return _time.time()
