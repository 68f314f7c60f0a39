"""The monitor's append-only event log format.

One JSON object per line with fields: ts_ms, session, remote_addr,
remote_port, kind, plus kind-specific payload. The same format is written
by the live monitor and the simulator, and read by the analysis pipeline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, List, Optional, Tuple

CONNECT_OPENED = "connect_opened"
CONNECT_FAILED = "connect_failed"
DISCONNECTED = "disconnected"
VERSION_RECEIVED = "version_received"
ADDR_RECEIVED = "addr_received"
GETADDR_SENT = "getaddr_sent"

_KINDS = {
    CONNECT_OPENED,
    CONNECT_FAILED,
    DISCONNECTED,
    VERSION_RECEIVED,
    ADDR_RECEIVED,
    GETADDR_SENT,
}


@dataclass(frozen=True)
class LoggedEntry:
    """One ADDR entry as logged: (time, services, addr, port)."""

    time: int
    services: int
    addr: str
    port: int


@dataclass(frozen=True)
class MonitorEvent:
    ts_ms: int
    session: int
    remote_addr: str
    remote_port: int
    kind: str
    # version_received
    version: Optional[int] = None
    services: Optional[int] = None
    user_agent: Optional[str] = None
    # addr_received
    entry_count: Optional[int] = None
    entries: Tuple[LoggedEntry, ...] = ()
    solicited_hint: Optional[bool] = None
    # disconnected / connect_failed
    reason: Optional[str] = None

    def to_json_line(self) -> str:
        obj = {
            "ts_ms": self.ts_ms,
            "session": self.session,
            "remote_addr": self.remote_addr,
            "remote_port": self.remote_port,
            "kind": self.kind,
        }
        if self.kind == VERSION_RECEIVED:
            obj["version"] = self.version
            obj["services"] = self.services
            obj["user_agent"] = self.user_agent
        elif self.kind == ADDR_RECEIVED:
            obj["entry_count"] = self.entry_count
            obj["solicited_hint"] = self.solicited_hint
            obj["entries"] = [
                {"time": e.time, "services": e.services, "addr": e.addr, "port": e.port}
                for e in self.entries
            ]
        elif self.kind in (DISCONNECTED, CONNECT_FAILED) and self.reason is not None:
            obj["reason"] = self.reason
        return json.dumps(obj, separators=(",", ":"))


class MalformedRecord(ValueError):
    pass


def parse_line(line: str) -> MonitorEvent:
    """Parse one log line; raises MalformedRecord on damage."""
    try:
        obj = json.loads(line)
        kind = obj["kind"]
        if kind not in _KINDS:
            raise MalformedRecord(f"unknown kind {kind!r}")
        entries: Tuple[LoggedEntry, ...] = ()
        entry_count = None
        solicited = None
        if kind == ADDR_RECEIVED:
            entries = tuple(
                LoggedEntry(e["time"], e["services"], e["addr"], e["port"])
                for e in obj["entries"]
            )
            entry_count = obj["entry_count"]
            if entry_count != len(entries):
                raise MalformedRecord("entry_count does not match entries")
            solicited = obj.get("solicited_hint", False)
        return MonitorEvent(
            ts_ms=int(obj["ts_ms"]),
            session=int(obj["session"]),
            remote_addr=str(obj["remote_addr"]),
            remote_port=int(obj["remote_port"]),
            kind=kind,
            version=obj.get("version"),
            services=obj.get("services"),
            user_agent=obj.get("user_agent"),
            entry_count=entry_count,
            entries=entries,
            solicited_hint=solicited,
            reason=obj.get("reason"),
        )
    except MalformedRecord:
        raise
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise MalformedRecord(str(exc)) from exc


@dataclass
class ReadStats:
    lines: int = 0
    malformed: int = 0
    first_errors: List[str] = field(default_factory=list)


def read_log(path: str, stats: Optional[ReadStats] = None) -> Iterator[MonitorEvent]:
    """Stream events from a log file, skipping (and counting) damaged lines."""
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if stats is not None:
                stats.lines += 1
            try:
                yield parse_line(line)
            except MalformedRecord as exc:
                if stats is None:
                    continue
                stats.malformed += 1
                if len(stats.first_errors) < 10:
                    stats.first_errors.append(str(exc))


class LogWriter:
    """Write-ahead event log: each event is flushed before the caller acts
    on it. Single-writer; callers serialize access."""

    def __init__(self, fh: IO[str]):
        self._fh = fh

    def write(self, event: MonitorEvent) -> None:
        self._fh.write(event.to_json_line())
        self._fh.write("\n")
        self._fh.flush()

    def write_many(self, events: Iterable[MonitorEvent]) -> None:
        for event in events:
            self.write(event)
