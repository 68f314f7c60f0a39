"""Single-threaded TCP driver for :class:`~addrscope.monitor.MonitorCore`.

Uses non-blocking sockets behind a ``selectors`` loop, so the event log
keeps the authoritative total order without any cross-thread coordination.
The monitor never listens for inbound connections.
"""

from __future__ import annotations

import errno
import logging
import selectors
import socket
import time
from typing import Dict

from .monitor import Close, Dial, MonitorCore, Send

log = logging.getLogger(__name__)

_TICK_S = 0.2


class TcpDriver:
    def __init__(self, core: MonitorCore):
        self.core = core
        self.selector = selectors.DefaultSelector()
        self.socks: Dict[int, socket.socket] = {}
        self.connecting: Dict[int, float] = {}  # session -> dial time
        self.running = False

    def run(self) -> None:
        """Drive the monitor until interrupted. Fatal only on log I/O
        failure; per-session errors become events."""
        now = time.time()
        self.running = True
        self._apply(self.core.start(now))
        next_tick = now
        while self.running:
            timeout = max(0.0, next_tick - time.time())
            for key, mask in self.selector.select(timeout):
                self._service(key.fileobj, key.data, mask)
            now = time.time()
            if now >= next_tick:
                next_tick = now + _TICK_S
                self._apply(self.core.on_tick(now))
                self._check_connect_timeouts(now)

    def stop(self) -> None:
        self.running = False

    # -- socket handling --------------------------------------------------

    def _service(self, sock: socket.socket, session: int, mask: int) -> None:
        now = time.time()
        if session in self.connecting:
            err = sock.getsockopt(socket.SOL_SOCKET, socket.SO_ERROR)
            del self.connecting[session]
            if err != 0:
                self._drop(session)
                self._apply(self.core.on_connect_failed(session, errno.errorcode.get(err, str(err)), now))
                return
            self.selector.modify(sock, selectors.EVENT_READ, session)
            self._apply(self.core.on_connected(session, now))
            return
        try:
            data = sock.recv(65536)
        except OSError as exc:
            self._drop(session)
            self._apply(self.core.on_closed(session, str(exc), now))
            return
        if not data:
            self._drop(session)
            self._apply(self.core.on_closed(session, "peer closed", now))
            return
        self._apply(self.core.on_data(session, data, now))

    def _check_connect_timeouts(self, now: float) -> None:
        limit = self.core.config.connect_timeout_s
        for session, dialed in list(self.connecting.items()):
            if now - dialed >= limit:
                del self.connecting[session]
                self._drop(session)
                self._apply(self.core.on_connect_failed(session, "connect timeout", now))

    def _drop(self, session: int) -> None:
        sock = self.socks.pop(session, None)
        if sock is None:
            return
        try:
            self.selector.unregister(sock)
        except KeyError:
            pass
        sock.close()

    # -- command execution -------------------------------------------------

    def _apply(self, commands) -> None:
        now = time.time()
        for cmd in commands:
            if isinstance(cmd, Dial):
                self._dial(cmd, now)
            elif isinstance(cmd, Send):
                sock = self.socks.get(cmd.session)
                if sock is None:
                    continue
                try:
                    sock.sendall(cmd.data)
                except OSError as exc:
                    self._drop(cmd.session)
                    self._apply(self.core.on_closed(cmd.session, str(exc), time.time()))
            elif isinstance(cmd, Close):
                self._drop(cmd.session)

    def _dial(self, cmd: Dial, now: float) -> None:
        try:
            family = socket.AF_INET6 if ":" in cmd.addr else socket.AF_INET
            sock = socket.socket(family, socket.SOCK_STREAM)
            sock.setblocking(False)
            rc = sock.connect_ex((cmd.addr, cmd.port))
            if rc not in (0, errno.EINPROGRESS, errno.EWOULDBLOCK):
                sock.close()
                self._apply(self.core.on_connect_failed(cmd.session, errno.errorcode.get(rc, str(rc)), now))
                return
        except OSError as exc:
            self._apply(self.core.on_connect_failed(cmd.session, str(exc), now))
            return
        self.socks[cmd.session] = sock
        self.connecting[cmd.session] = now
        self.selector.register(sock, selectors.EVENT_WRITE, cmd.session)
