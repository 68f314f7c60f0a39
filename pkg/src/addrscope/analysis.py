"""Daily set-algebra pipeline over monitor event logs.

For each UTC calendar day t the pipeline derives:

- M: every address received in ADDR messages,
- A: addresses from small (<= 10 entries), unsolicited ADDR messages,
     excluding entries that announce the sender's own address,
- P: addresses the monitor was connected to (session established before
     the day started and still open, or version received during the day),
- R = A intersect P (reachable peers that were also announced),
- U = A minus P (the unreachable-peer estimate).

Addresses in gossip-derived sets are keyed by address only; session-derived
P can optionally be keyed by (address, port), but joins always compare on
address.
"""

from __future__ import annotations

import csv
import datetime as dt
import ipaddress
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Set, Tuple

from .codec import has_useful_services
from .events import (
    ADDR_RECEIVED,
    CONNECT_OPENED,
    DISCONNECTED,
    VERSION_RECEIVED,
    MonitorEvent,
    ReadStats,
    read_log,
)

SMALL_ADDR_MAX_ENTRIES = 10

DayKey = dt.date


def day_of(ts_ms: int) -> DayKey:
    """UTC calendar date; day boundaries at 00:00:00, half-open."""
    return dt.datetime.fromtimestamp(ts_ms / 1000.0, dt.timezone.utc).date()


def bucket_events(events: Iterable[MonitorEvent]) -> Dict[DayKey, List[MonitorEvent]]:
    buckets: Dict[DayKey, List[MonitorEvent]] = {}
    for event in events:
        buckets.setdefault(day_of(event.ts_ms), []).append(event)
    return buckets


@dataclass
class DailyEstimate:
    day: DayKey
    M: Set[str]
    A: Set[str]
    P: Set[str]
    p_count: int = 0  # |P| under the configured session identity

    def __post_init__(self):
        if not self.p_count:
            self.p_count = len(self.P)

    @property
    def R(self) -> Set[str]:
        return self.A & self.P

    @property
    def U(self) -> Set[str]:
        return self.A - self.P

    @property
    def coverage(self) -> Optional[float]:
        """|R| / |P|, or None when the monitor had no sessions that day."""
        if not self.P:
            return None
        return len(self.R) / len(self.P)


def compute_A(day_events: Iterable[MonitorEvent]) -> Set[str]:
    """Small-message, non-self-announced, unsolicited addresses of one day."""
    out: Set[str] = set()
    for event in day_events:
        if event.kind != ADDR_RECEIVED:
            continue
        if event.entry_count > SMALL_ADDR_MAX_ENTRIES or event.solicited_hint:
            continue
        for entry in event.entries:
            if entry.addr == event.remote_addr and entry.port == event.remote_port:
                continue  # self announcement
            out.add(entry.addr)
    return out


def compute_M(day_events: Iterable[MonitorEvent]) -> Set[str]:
    out: Set[str] = set()
    for event in day_events:
        if event.kind == ADDR_RECEIVED:
            out.update(entry.addr for entry in event.entries)
    return out


@dataclass
class _SessionSpan:
    remote: Tuple[str, int]
    version_ts_ms: Optional[int] = None
    closed_ts_ms: Optional[int] = None


def _session_spans(events: Iterable[MonitorEvent]) -> Dict[int, _SessionSpan]:
    spans: Dict[int, _SessionSpan] = {}
    for event in events:
        if event.kind == CONNECT_OPENED:
            spans[event.session] = _SessionSpan((event.remote_addr, event.remote_port))
        elif event.kind == VERSION_RECEIVED:
            span = spans.setdefault(event.session, _SessionSpan((event.remote_addr, event.remote_port)))
            if span.version_ts_ms is None:
                span.version_ts_ms = event.ts_ms
        elif event.kind == DISCONNECTED:
            span = spans.get(event.session)
            if span is not None:
                span.closed_ts_ms = event.ts_ms
    return spans


def compute_P(
    day: DayKey, spans: Iterable[_SessionSpan], last_day: DayKey, identity: str = "addr"
) -> Set:
    """Addresses with an established session overlapping the day: either the
    session carried over midnight or a VERSION was received during the day."""
    out: Set = set()
    for span in spans:
        if span.version_ts_ms is None:
            continue
        first = day_of(span.version_ts_ms)
        if span.closed_ts_ms is None:
            last = last_day
        else:
            # A session closed exactly at midnight was no longer connected
            # at the beginning of that day.
            last = max(first, day_of(span.closed_ts_ms - 1))
        if first <= day <= last:
            out.add(span.remote if identity == "addr_port" else span.remote[0])
    return out


def estimate(day: DayKey, A: Set[str], P: Set[str]) -> DailyEstimate:
    return DailyEstimate(day=day, M=set(), A=set(A), P=set(P))


def analyze_events(
    events: Iterable[MonitorEvent], session_identity: str = "addr"
) -> List[DailyEstimate]:
    """Run the full per-day pipeline over an event sequence."""
    event_list = list(events)
    if not event_list:
        return []
    spans = _session_spans(event_list)
    buckets = bucket_events(event_list)
    first_day = min(buckets)
    last_day = max(buckets)
    out = []
    day = first_day
    while day <= last_day:
        day_events = buckets.get(day, [])
        P_addr = compute_P(day, spans.values(), last_day, "addr")
        if session_identity == "addr_port":
            p_count = len(compute_P(day, spans.values(), last_day, "addr_port"))
        else:
            p_count = len(P_addr)
        out.append(
            DailyEstimate(
                day=day,
                M=compute_M(day_events),
                A=compute_A(day_events),
                P=P_addr,
                p_count=p_count,
            )
        )
        day += dt.timedelta(days=1)
    return out


def analyze_log(path: str, session_identity: str = "addr") -> Tuple[List[DailyEstimate], ReadStats]:
    stats = ReadStats()
    estimates = analyze_events(read_log(path, stats), session_identity)
    return estimates, stats


def reachable_coverage(est: DailyEstimate) -> Optional[float]:
    return est.coverage


# -- two-monitor overlap -----------------------------------------------------


@dataclass
class OverlapReport:
    day: DayKey
    only_1: int
    both: int
    only_2: int

    @property
    def ratio_1_in_2(self) -> Optional[float]:
        denom = self.both + self.only_1
        if denom == 0:
            return None
        return self.both / denom


def overlap(A1: Set[str], A2: Set[str], day: DayKey) -> OverlapReport:
    both = len(A1 & A2)
    return OverlapReport(day=day, only_1=len(A1) - both, both=both, only_2=len(A2) - both)


def overlap_reports(
    est1: List[DailyEstimate], est2: List[DailyEstimate]
) -> List[OverlapReport]:
    by_day2 = {e.day: e for e in est2}
    out = []
    for e1 in est1:
        e2 = by_day2.get(e1.day)
        if e2 is not None:
            out.append(overlap(e1.A, e2.A, e1.day))
    return out


# -- incoming-connection validation -----------------------------------------


@dataclass
class IncomingValidationReport:
    day: DayKey
    I: Set[str]
    S: Set[str]
    H: Set[str]
    rate_all: Optional[float]
    rate_unreachable: Optional[float]
    rate_reachable: Optional[float]


def _rate(num: int, denom: int) -> Optional[float]:
    return None if denom == 0 else num / denom


def incoming_validation(
    inbound_events: Iterable[MonitorEvent], estimates: List[DailyEstimate]
) -> List[IncomingValidationReport]:
    """Compare inbound connections at a listening validation peer against
    the announcement-derived daily sets."""
    by_day: Dict[DayKey, Dict[str, int]] = {}
    for event in inbound_events:
        if event.kind != VERSION_RECEIVED:
            continue
        by_day.setdefault(day_of(event.ts_ms), {})[event.remote_addr] = event.services or 0
    out = []
    for est in estimates:
        daymap = by_day.get(est.day, {})
        I = set(daymap)
        S = {a for a, svc in daymap.items() if has_useful_services(svc)}
        H = S & est.A
        P = est.P
        out.append(
            IncomingValidationReport(
                day=est.day,
                I=I,
                S=S,
                H=H,
                rate_all=_rate(len(H), len(S)),
                rate_unreachable=_rate(len(H - P), len(S - P)),
                rate_reachable=_rate(len(H & P), len(S & P)),
            )
        )
    return out


# -- subnet concentration ----------------------------------------------------


@dataclass
class SubnetReport:
    day: DayKey
    prefix_length: int
    buckets: Dict[str, int]

    @property
    def top_share(self) -> Optional[float]:
        total = sum(self.buckets.values())
        if total == 0:
            return None
        return max(self.buckets.values()) / total


def subnet_concentration(A: Set[str], prefix_length: int, day: DayKey) -> SubnetReport:
    """Group a day's announced addresses by IPv4 /prefix (IPv6 by /32)."""
    if prefix_length not in (8, 16, 24):
        raise ValueError("prefix_length must be 8, 16 or 24")
    buckets: Dict[str, int] = {}
    for addr in A:
        ip = ipaddress.ip_address(addr)
        if ip.version == 4:
            net = ipaddress.ip_network(f"{addr}/{prefix_length}", strict=False)
        else:
            net = ipaddress.ip_network(f"{addr}/32", strict=False)
        key = str(net)
        buckets[key] = buckets.get(key, 0) + 1
    return SubnetReport(day=day, prefix_length=prefix_length, buckets=buckets)


# -- CSV output ---------------------------------------------------------------


def _fmt(x: Optional[float]) -> str:
    return "" if x is None else f"{x:.6f}"


def write_daily_csv(path: str, estimates: List[DailyEstimate]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "m", "a", "p", "r", "u", "coverage"])
        for e in estimates:
            w.writerow(
                [e.day.isoformat(), len(e.M), len(e.A), e.p_count, len(e.R), len(e.U), _fmt(e.coverage)]
            )


def write_overlap_csv(path: str, reports: List[OverlapReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "only_1", "both", "only_2", "ratio_1_in_2"])
        for r in reports:
            w.writerow([r.day.isoformat(), r.only_1, r.both, r.only_2, _fmt(r.ratio_1_in_2)])


def write_incoming_csv(path: str, reports: List[IncomingValidationReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "i", "s", "h", "rate_all", "rate_unreachable", "rate_reachable"])
        for r in reports:
            w.writerow(
                [
                    r.day.isoformat(),
                    len(r.I),
                    len(r.S),
                    len(r.H),
                    _fmt(r.rate_all),
                    _fmt(r.rate_unreachable),
                    _fmt(r.rate_reachable),
                ]
            )


def write_subnet_csv(path: str, reports: List[SubnetReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "prefix", "count", "share"])
        for r in reports:
            total = sum(r.buckets.values())
            for prefix in sorted(r.buckets):
                count = r.buckets[prefix]
                w.writerow([r.day.isoformat(), prefix, count, _fmt(count / total)])
