"""Discrete-event simulation of ADDR gossip with modeled monitors.

Single-threaded event loop over a priority queue keyed by (time, seq).
Macro events (connection lifecycle, announcement timers, churn, monitor
schedule) run in Python; each announcement triggers a relay cascade that
runs in the compiled kernel (or its pure-Python twin).

Peers follow the reference behavior: 8 full-relay + 2 block-relay outgoing
connections, self-announcement on connection establishment and at
exponentially distributed intervals (24 h mean), forwarding of small-ADDR
entries with useful services and a fresh timestamp to one or two full-relay
neighbors, getaddr replies capped at 23% of the database / 1000 entries.
Monitors write logs in the exact live format.
"""

from __future__ import annotations

import heapq
import json
import os
import random
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import kernel
from .config import SimConfig
from ..events import MonitorEvent
from ..events import (
    CONNECT_FAILED,
    CONNECT_OPENED,
    DISCONNECTED,
    GETADDR_SENT,
    VERSION_RECEIVED,
)

USEFUL_SERVICES = 0x9  # NODE_NETWORK | NODE_WITNESS
USELESS_SERVICES = 0x1  # NODE_NETWORK only: never relayed

FLAG_FORWARDS = 1
FLAG_MON_BASE = 2  # monitor m uses flag FLAG_MON_BASE << m

DAY_MS = 86_400_000

# Event kinds, processed in (time, seq) order.
EV_ARRIVAL = 0
EV_ESTABLISH = 1
EV_ANNOUNCE = 2
EV_CONN_CLOSE = 3
EV_DEATH = 4
EV_MON_ATTEMPT = 5
EV_MON_ESTABLISH = 6
EV_MON_TICK = 7
EV_REPLY = 8
EV_MON_BOOT = 9
EV_DIAL = 10


class InfeasibleTopology(Exception):
    pass


@dataclass
class _Conn:
    cid: int
    a: int  # initiator slot
    b: int  # target slot
    kind: str  # "full" | "block"
    established: bool = False
    mon_session: int = -1  # session id when the initiator is a monitor


class _PeerInstance:
    __slots__ = ("addr_id", "reachable", "useful", "first_conn_ms", "death_ms")

    def __init__(self, addr_id: int, reachable: bool, useful: bool):
        self.addr_id = addr_id
        self.reachable = reachable
        self.useful = useful
        self.first_conn_ms: Optional[int] = None
        self.death_ms: Optional[int] = None


class _Monitor:
    __slots__ = (
        "index",
        "slot",
        "sessions",
        "session_remote",
        "next_session",
        "book_next_ms",
        "fail_counts",
        "buffer",
        "fh",
        "path",
    )

    def __init__(self, index: int, slot: int, path: str):
        self.index = index
        self.slot = slot
        self.sessions: Dict[int, int] = {}  # peer slot -> session id
        self.session_remote: Dict[int, str] = {}
        self.next_session = 0
        self.book_next_ms: Dict[int, int] = {}  # addr_id -> earliest next attempt
        self.fail_counts: Dict[int, int] = {}
        self.buffer: List[Tuple[int, int, str]] = []
        self.path = path
        self.fh = open(path, "w", encoding="utf-8")


@dataclass
class SimResultPaths:
    out_dir: str
    monitor_logs: List[str]
    inbound_log: Optional[str]
    ground_truth_csv: str
    announce_counts_csv: str
    stats_json: str


class Simulation:
    def __init__(self, cfg: SimConfig, out_dir: str):
        cfg.validate()
        self.cfg = cfg
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.rng = random.Random(cfg.seed)
        self.krng = np.array([kernel.rng_seed(cfg.seed)], dtype=np.uint64)
        self.start_ms = cfg.start_epoch_ms
        self.end_ms = self.start_ms + cfg.duration_ms
        self.monitor_start_ms = self.start_ms + int(cfg.monitor_start_s * 1000)
        self.latency = cfg.latency_ms

        n_peers = cfg.n_reachable + cfg.n_unreachable_useful + cfg.n_unreachable_useless
        n_extra = cfg.monitors + (1 if cfg.validation_peer else 0)
        self.n_slots = n_peers + n_extra

        cap = cfg.max_connections + cfg.monitors + 4
        self.nbr = np.zeros((self.n_slots, cap), dtype=np.int32)
        self.deg = np.zeros(self.n_slots, dtype=np.int32)
        self.flags = np.zeros(self.n_slots, dtype=np.uint8)
        self.visited = np.full(self.n_slots, -1, dtype=np.int64)
        self.stamp = 0
        qcap = 2 * self.n_slots + 8
        self.queue = np.zeros((qcap, 3), dtype=np.int64)
        self.mon_out = np.zeros((qcap, 3), dtype=np.int64)
        self.stats = np.zeros(4, dtype=np.int64)

        self.addr_cap = 1024
        self.db = np.zeros((self.n_slots, self.addr_cap), dtype=np.uint8)
        self.last_seen = np.zeros(self.addr_cap, dtype=np.int64)
        self.addr_str: List[str] = []
        self.addr_services: List[int] = []
        self.addr_useful: List[bool] = []
        self.addr_to_slot: Dict[int, int] = {}

        self.slot_addr = [0] * self.n_slots
        self.slot_alive = [False] * self.n_slots
        self.slot_gen = [0] * self.n_slots
        self.slot_conn_count = [0] * self.n_slots
        self.slot_conns: List[Dict[int, _Conn]] = [dict() for _ in range(self.n_slots)]
        self.slot_instance: List[Optional[_PeerInstance]] = [None] * self.n_slots
        self.instances: List[_PeerInstance] = []

        self.conns: Dict[int, _Conn] = {}
        self.next_cid = 0
        self.heap: List[tuple] = []
        self.seq = 0
        self.log_seq = 0
        self.announce_counts: Dict[Tuple[int, int], int] = {}  # (day, addr_id) -> n

        # slot layout: peers, then monitors, then validation peer
        self.peer_slots = list(range(n_peers))
        self.monitor_slots = list(range(n_peers, n_peers + cfg.monitors))
        self.validation_slot = n_peers + cfg.monitors if cfg.validation_peer else None

        self.monitors: List[_Monitor] = []
        for m, slot in enumerate(self.monitor_slots):
            self.flags[slot] = FLAG_MON_BASE << m
            path = os.path.join(out_dir, f"monitor{m + 1}.log")
            self.monitors.append(_Monitor(m, slot, path))
            self.slot_addr[slot] = self._new_address(reachable=False, useful=False)
            self.slot_alive[slot] = True

        self.inbound_fh = None
        self.inbound_buffer: List[Tuple[int, int, str]] = []
        self.inbound_path = None
        self.inbound_sessions: Dict[int, int] = {}  # cid -> inbound session id
        self.next_inbound_session = 0
        if cfg.validation_peer:
            self.inbound_path = os.path.join(out_dir, "inbound.log")
            self.inbound_fh = open(self.inbound_path, "w", encoding="utf-8")

        self._churn_trace: Optional[List[float]] = None
        self._churn_trace_pos = 0
        if cfg.churn.kind == "trace":
            with open(cfg.churn.trace_path, "r", encoding="utf-8") as fh:
                self._churn_trace = [float(line) for line in fh if line.strip()]
            if not self._churn_trace:
                raise ValueError("empty churn trace")

        self._seed_population()

    # -- setup ---------------------------------------------------------------

    def _new_address(self, reachable: bool, useful: bool) -> int:
        aid = len(self.addr_str)
        if aid >= self.addr_cap:
            self._grow_addresses()
        # Synthetic routable IPv4 space starting at 5.0.0.0
        a = 5 + (aid >> 24)
        self.addr_str.append(f"{a}.{(aid >> 16) & 255}.{(aid >> 8) & 255}.{aid & 255}")
        self.addr_services.append(USEFUL_SERVICES if useful else USELESS_SERVICES)
        self.addr_useful.append(useful)
        return aid

    def _grow_addresses(self) -> None:
        new_cap = self.addr_cap * 2
        db = np.zeros((self.n_slots, new_cap), dtype=np.uint8)
        db[:, : self.addr_cap] = self.db
        self.db = db
        last = np.zeros(new_cap, dtype=np.int64)
        last[: self.addr_cap] = self.last_seen
        self.last_seen = last
        self.addr_cap = new_cap

    def _seed_population(self) -> None:
        cfg = self.cfg
        classes = (
            [(True, True)] * cfg.n_reachable
            + [(False, True)] * cfg.n_unreachable_useful
            + [(False, False)] * cfg.n_unreachable_useless
        )
        self.reachable_slots: List[int] = []
        for slot, (reachable, useful) in zip(self.peer_slots, classes):
            self._push(self.start_ms, EV_ARRIVAL, (slot, reachable, useful))
            if reachable:
                self.reachable_slots.append(slot)
        if self.validation_slot is not None:
            slot = self.validation_slot
            aid = self._new_address(reachable=True, useful=True)
            self.slot_addr[slot] = aid
            self.slot_alive[slot] = True
            self.flags[slot] |= FLAG_FORWARDS
            self.addr_to_slot[aid] = slot
            inst = _PeerInstance(aid, reachable=True, useful=True)
            self.slot_instance[slot] = inst
            self.instances.append(inst)
            self.reachable_slots.append(slot)
        for mon in self.monitors:
            self._push(self.monitor_start_ms, EV_MON_BOOT, (mon.index,))
            self._push(self.monitor_start_ms, EV_MON_TICK, (mon.index,))
        self._reachable_set = set(self.reachable_slots)
        self._mon_slot_set = set(self.monitor_slots)

    # -- primitives ------------------------------------------------------------

    def _push(self, t: int, kind: int, payload: tuple) -> None:
        self.seq += 1
        heapq.heappush(self.heap, (t, self.seq, kind, payload))

    def _exp_ms(self, mean_s: float) -> int:
        return max(1, int(self.rng.expovariate(1.0 / mean_s) * 1000))

    def _pick_target(self, slot: int, taken: set) -> Optional[int]:
        pool = self.reachable_slots
        n = len(pool)
        for _ in range(64):
            cand = pool[self.rng.randrange(n)]
            if cand == slot or cand in taken or not self.slot_alive[cand]:
                continue
            if self.slot_conn_count[cand] >= self.cfg.max_connections:
                continue
            return cand
        for cand in pool:  # dense fallback
            if (
                cand != slot
                and cand not in taken
                and self.slot_alive[cand]
                and self.slot_conn_count[cand] < self.cfg.max_connections
            ):
                return cand
        return None

    def _adj_add(self, a: int, b: int) -> None:
        # Monitors never forward, so their own neighbor rows are never read;
        # skipping them keeps the row width at the peer connection cap.
        for x, y in ((a, b), (b, a)):
            if x in self._mon_slot_set:
                continue
            d = self.deg[x]
            if d >= self.nbr.shape[1]:
                raise InfeasibleTopology(f"adjacency overflow at slot {x}")
            self.nbr[x, d] = y
            self.deg[x] = d + 1

    def _adj_remove(self, a: int, b: int) -> None:
        for x, y in ((a, b), (b, a)):
            if x in self._mon_slot_set:
                continue
            d = int(self.deg[x])
            row = self.nbr[x]
            for i in range(d):
                if row[i] == y:
                    row[i] = row[d - 1]
                    self.deg[x] = d - 1
                    break

    # -- logging -----------------------------------------------------------------

    def _log_event(self, mon: _Monitor, ts_ms: int, session: int, remote_addr: str, kind: str, **fields) -> None:
        event = MonitorEvent(
            ts_ms=ts_ms, session=session, remote_addr=remote_addr, remote_port=8333, kind=kind, **fields
        )
        self.log_seq += 1
        mon.buffer.append((ts_ms, self.log_seq, event.to_json_line()))

    def _log_addr_line(self, mon: _Monitor, ts_ms: int, session: int, remote: str, entries: List[Tuple[int, int, str]], solicited: bool) -> None:
        # Hot path: same JSON shape as MonitorEvent.to_json_line, built directly.
        parts = ",".join(
            f'{{"time":{ts},"services":{svc},"addr":"{addr}","port":8333}}' for ts, svc, addr in entries
        )
        line = (
            f'{{"ts_ms":{ts_ms},"session":{session},"remote_addr":"{remote}","remote_port":8333,'
            f'"kind":"addr_received","entry_count":{len(entries)},'
            f'"solicited_hint":{"true" if solicited else "false"},"entries":[{parts}]}}'
        )
        self.log_seq += 1
        mon.buffer.append((ts_ms, self.log_seq, line))

    def _log_inbound(self, ts_ms: int, session: int, remote_addr: str, kind: str, **fields) -> None:
        event = MonitorEvent(
            ts_ms=ts_ms, session=session, remote_addr=remote_addr, remote_port=8333, kind=kind, **fields
        )
        self.log_seq += 1
        self.inbound_buffer.append((ts_ms, self.log_seq, event.to_json_line()))

    def _flush_buffers(self, up_to_ms: Optional[int]) -> None:
        margin = int(self.cfg.addr_timestamp_cutoff_s * 1000) + 20 * self.latency
        for mon in self.monitors:
            mon.buffer = self._flush_one(mon.buffer, mon.fh, None if up_to_ms is None else up_to_ms - margin)
        if self.inbound_fh is not None:
            self.inbound_buffer = self._flush_one(
                self.inbound_buffer, self.inbound_fh, None if up_to_ms is None else up_to_ms - margin
            )

    @staticmethod
    def _flush_one(buffer, fh, limit_ms):
        if limit_ms is None:
            ready, rest = buffer, []
        else:
            ready = [r for r in buffer if r[0] <= limit_ms]
            rest = [r for r in buffer if r[0] > limit_ms]
        ready.sort(key=lambda r: (r[0], r[1]))
        fh.write("".join(line + "\n" for _, _, line in ready))
        return rest

    # -- event handlers ------------------------------------------------------------

    def _on_arrival(self, t: int, slot: int, reachable: bool, useful: bool) -> None:
        cfg = self.cfg
        self.slot_gen[slot] += 1
        aid = self._new_address(reachable, useful)
        self.slot_addr[slot] = aid
        self.slot_alive[slot] = True
        self.flags[slot] |= FLAG_FORWARDS
        self.db[slot, :] = 0
        self.db[slot, aid] = 1
        self.addr_to_slot[aid] = slot
        inst = _PeerInstance(aid, reachable, useful)
        self.slot_instance[slot] = inst
        self.instances.append(inst)

        if not reachable and cfg.churn.kind != "none":
            length_ms = self._session_length_ms()
            if t + length_ms < self.end_ms:
                self._push(t + length_ms, EV_DEATH, (slot, self.slot_gen[slot]))

        # Outgoing connections are opened with a stagger; the target of each
        # is chosen only when its dial fires, against the live population.
        total = cfg.full_relay_out + cfg.block_relay_out
        for k in range(total):
            kind = "full" if k < cfg.full_relay_out else "block"
            self._push(t + k * cfg.connect_stagger_ms, EV_DIAL, (slot, self.slot_gen[slot], kind))

    def _session_length_ms(self) -> int:
        churn = self.cfg.churn
        if churn.kind == "trace":
            value = self._churn_trace[self._churn_trace_pos % len(self._churn_trace)]
            self._churn_trace_pos += 1
            return max(1, int(value * 1000))
        u = self.rng.random()
        if u < churn.quantile_1s:
            seconds = u / churn.quantile_1s  # uniform below 1 s
        elif u < churn.quantile_60s:
            frac = (u - churn.quantile_1s) / (churn.quantile_60s - churn.quantile_1s)
            seconds = 60.0 ** frac  # log-uniform in [1 s, 60 s]
        else:
            seconds = 60.0 + self.rng.expovariate(1.0 / churn.tail_mean_s)
        return max(1, int(seconds * 1000))

    def _on_dial(self, t: int, slot: int, gen: int, kind: str) -> None:
        if self.slot_gen[slot] != gen or not self.slot_alive[slot]:
            return
        current = {c.b if c.a == slot else c.a for c in self.slot_conns[slot].values()}
        target = self._pick_target(slot, current)
        if target is None:
            # dense small networks can exhaust distinct targets; run with
            # fewer outgoing connections rather than failing
            return
        self._dial(slot, target, kind, t)

    def _dial(self, slot: int, target: int, kind: str, t: int) -> None:
        self.next_cid += 1
        conn = _Conn(self.next_cid, slot, target, kind)
        self.conns[conn.cid] = conn
        self.slot_conns[slot][conn.cid] = conn
        self.slot_conns[target][conn.cid] = conn
        self.slot_conn_count[slot] += 1
        self.slot_conn_count[target] += 1
        self._push(t + 2 * self.latency, EV_ESTABLISH, (conn.cid,))

    def _on_establish(self, t: int, cid: int) -> None:
        conn = self.conns.get(cid)
        if conn is None:
            return
        if not (self.slot_alive[conn.a] and self.slot_alive[conn.b]):
            self._teardown_conn(conn, t, log_disconnect=False)
            return
        conn.established = True
        for s in (conn.a, conn.b):
            inst = self.slot_instance[s]
            if inst is not None and inst.first_conn_ms is None:
                inst.first_conn_ms = t
        if conn.kind != "full":
            return
        self._adj_add(conn.a, conn.b)
        self.db[conn.a, self.slot_addr[conn.b]] = 1
        self.db[conn.b, self.slot_addr[conn.a]] = 1
        if conn.b == self.validation_slot:
            self.next_inbound_session += 1
            sid = self.next_inbound_session
            self.inbound_sessions[cid] = sid
            remote = self.addr_str[self.slot_addr[conn.a]]
            self._log_inbound(t, sid, remote, CONNECT_OPENED)
            self._log_inbound(
                t,
                sid,
                remote,
                VERSION_RECEIVED,
                version=70015,
                services=self.addr_services[self.slot_addr[conn.a]],
                user_agent="/sim:0.1/",
            )
        # Both endpoints announce themselves on the new link, then keep
        # regular exponential timers per endpoint.
        for endpoint in (conn.a, conn.b):
            self._announce(conn, endpoint, t)
            self._push(t + self._exp_ms(self.cfg.self_announce_mean_s), EV_ANNOUNCE, (cid, endpoint))
        life = self.cfg.churn.connection_mean_lifetime_s
        if life:
            self._push(t + self._exp_ms(life), EV_CONN_CLOSE, (cid,))

    def _on_announce_timer(self, t: int, cid: int, endpoint: int) -> None:
        conn = self.conns.get(cid)
        if conn is None or not conn.established or not self.slot_alive[endpoint]:
            return
        self._announce(conn, endpoint, t)
        self._push(t + self._exp_ms(self.cfg.self_announce_mean_s), EV_ANNOUNCE, (cid, endpoint))

    def _announce(self, conn: _Conn, origin: int, t: int) -> None:
        peer_to = conn.b if origin == conn.a else conn.a
        aid = self.slot_addr[origin]
        day = (t - self.start_ms) // DAY_MS
        key = (day, aid)
        self.announce_counts[key] = self.announce_counts.get(key, 0) + 1
        self._run_cascade(origin, peer_to, aid, t)

    def _run_cascade(self, origin: int, first_target: int, aid: int, t: int) -> None:
        self.stamp += 1
        nmon = kernel.run_cascade(
            origin,
            first_target,
            aid,
            t,
            1 if self.addr_useful[aid] else 0,
            self.nbr,
            self.deg,
            self.flags,
            self.db,
            self.last_seen,
            self.visited,
            self.stamp,
            int(self.cfg.addr_timestamp_cutoff_s * 1000),
            self.latency,
            self.krng,
            self.queue,
            self.mon_out,
            self.stats,
            1 if self.cfg.duplicate_suppression else 0,
        )
        if nmon == 0:
            return
        ts_s = t // 1000
        services = self.addr_services[aid]
        addr = self.addr_str[aid]
        entry = [(ts_s, services, addr)]
        for i in range(nmon):
            hit_t = int(self.mon_out[i, 0])
            mon_slot = int(self.mon_out[i, 1])
            sender = int(self.mon_out[i, 2])
            mon = self.monitors[self.monitor_slots.index(mon_slot)]
            session = mon.sessions.get(sender)
            if session is None:
                continue  # session raced with teardown
            remote = self.addr_str[self.slot_addr[sender]]
            self._log_addr_line(mon, hit_t, session, remote, entry, solicited=False)
            self._monitor_ingest(mon, aid, hit_t)

    def _monitor_ingest(self, mon: _Monitor, aid: int, t: int) -> None:
        if aid in mon.book_next_ms:
            return
        mon.book_next_ms[aid] = t
        self._push(t, EV_MON_ATTEMPT, (mon.index, aid))

    def _on_conn_close(self, t: int, cid: int) -> None:
        conn = self.conns.get(cid)
        if conn is None or not conn.established:
            return
        initiator = conn.a
        self._teardown_conn(conn, t, log_disconnect=True)
        if self.slot_alive[initiator] and initiator not in self.monitor_slots:
            current = {
                c.b if c.a == initiator else c.a for c in self.slot_conns[initiator].values()
            }
            target = self._pick_target(initiator, current)
            if target is not None:
                self._dial(initiator, target, "full", t)

    def _teardown_conn(self, conn: _Conn, t: int, log_disconnect: bool) -> None:
        self.conns.pop(conn.cid, None)
        self.slot_conns[conn.a].pop(conn.cid, None)
        self.slot_conns[conn.b].pop(conn.cid, None)
        self.slot_conn_count[conn.a] -= 1
        self.slot_conn_count[conn.b] -= 1
        if conn.established and conn.kind == "full":
            self._adj_remove(conn.a, conn.b)
        sid = self.inbound_sessions.pop(conn.cid, None)
        if sid is not None and log_disconnect:
            remote = self.addr_str[self.slot_addr[conn.a]]
            self._log_inbound(t, sid, remote, DISCONNECTED, reason="closed")

    def _on_death(self, t: int, slot: int, gen: int) -> None:
        if self.slot_gen[slot] != gen or not self.slot_alive[slot]:
            return
        inst = self.slot_instance[slot]
        reachable, useful = inst.reachable, inst.useful
        inst.death_ms = t
        self.slot_alive[slot] = False
        self.addr_to_slot.pop(inst.addr_id, None)
        self.flags[slot] &= 0xFF ^ FLAG_FORWARDS
        for conn in list(self.slot_conns[slot].values()):
            other = conn.b if conn.a == slot else conn.a
            if other in self.monitor_slots:
                m_idx = self.monitor_slots.index(other)
                mon = self.monitors[m_idx]
                sid = mon.sessions.pop(slot, None)
                if sid is not None:
                    self._log_event(
                        mon, t, sid, self.addr_str[inst.addr_id], DISCONNECTED, reason="peer died"
                    )
                    retry = max(t, mon.book_next_ms.get(inst.addr_id, t))
                    self._push(retry, EV_MON_ATTEMPT, (m_idx, inst.addr_id))
            self._teardown_conn(conn, t, log_disconnect=True)
        self.slot_instance[slot] = None
        self._push(t, EV_ARRIVAL, (slot, reachable, useful))

    # -- monitor behavior -------------------------------------------------------

    MAX_ATTEMPT_FAILURES = 3

    def _on_mon_boot(self, t: int, m: int) -> None:
        # Seed the monitor's address book with the live reachable population.
        for slot in self.reachable_slots:
            if self.slot_alive[slot]:
                self._monitor_ingest(self.monitors[m], self.slot_addr[slot], t)

    def _on_mon_attempt(self, t: int, m: int, aid: int) -> None:
        mon = self.monitors[m]
        slot = self.addr_to_slot.get(aid)
        if slot is not None and slot in mon.sessions:
            return
        mon.book_next_ms[aid] = t + int(self.cfg.monitor_reconnect_limit_s * 1000)
        listening = (
            slot is not None
            and self.slot_alive[slot]
            and slot in self._reachable_set
            and self.slot_conn_count[slot] < self.cfg.max_connections
        )
        if listening:
            self._push(t + 2 * self.latency, EV_MON_ESTABLISH, (m, aid, slot))
            return
        self._log_event(
            mon, t + self.latency, self._fail_session(mon), self.addr_str[aid], CONNECT_FAILED, reason="refused"
        )
        fails = mon.fail_counts.get(aid, 0) + 1
        mon.fail_counts[aid] = fails
        if fails < self.MAX_ATTEMPT_FAILURES:
            self._push(mon.book_next_ms[aid], EV_MON_ATTEMPT, (m, aid))

    def _fail_session(self, mon: _Monitor) -> int:
        mon.next_session += 1
        return mon.next_session

    def _on_mon_establish(self, t: int, m: int, aid: int, slot: int) -> None:
        mon = self.monitors[m]
        if self.addr_to_slot.get(aid) != slot or not self.slot_alive[slot] or slot in mon.sessions:
            self._push(mon.book_next_ms[aid], EV_MON_ATTEMPT, (m, aid))
            return
        mon.next_session += 1
        mon.fail_counts.pop(aid, None)
        sid = mon.next_session
        mon.sessions[slot] = sid
        remote = self.addr_str[aid]
        mon.session_remote[sid] = remote
        self._log_event(mon, t - self.latency, sid, remote, CONNECT_OPENED)
        self._log_event(
            mon,
            t,
            sid,
            remote,
            VERSION_RECEIVED,
            version=70015,
            services=self.addr_services[aid],
            user_agent="/sim:0.1/",
        )
        # Per-session connection record; the monitor never forwards or
        # announces, so only the peer endpoint gets announcement timers.
        self.next_cid += 1
        conn = _Conn(self.next_cid, mon.slot, slot, "full", established=True, mon_session=sid)
        self.conns[conn.cid] = conn
        self.slot_conns[mon.slot][conn.cid] = conn
        self.slot_conns[slot][conn.cid] = conn
        self.slot_conn_count[mon.slot] += 1
        self.slot_conn_count[slot] += 1
        self._adj_add(mon.slot, slot)
        self.db[slot, self.slot_addr[mon.slot]] = 1
        # live monitor behavior: one GETADDR immediately after the handshake
        self._log_event(mon, t, sid, remote, GETADDR_SENT)
        self._push(
            t + 2 * self.latency + self._exp_ms(self.cfg.addr_reply_delay_mean_s),
            EV_REPLY,
            (m, slot, sid),
        )
        self._announce(conn, slot, t)
        self._push(t + self._exp_ms(self.cfg.self_announce_mean_s), EV_ANNOUNCE, (conn.cid, slot))

    def _on_mon_tick(self, t: int, m: int) -> None:
        mon = self.monitors[m]
        if mon.sessions:
            slots = list(mon.sessions)
            slot = slots[self.rng.randrange(len(slots))]
            sid = mon.sessions[slot]
            self._log_event(mon, t, sid, mon.session_remote[sid], GETADDR_SENT)
            self._push(
                t + 2 * self.latency + self._exp_ms(self.cfg.addr_reply_delay_mean_s),
                EV_REPLY,
                (m, slot, sid),
            )
        self._push(t + int(self.cfg.monitor_getaddr_interval_s * 1000), EV_MON_TICK, (m,))

    def _on_reply(self, t: int, m: int, slot: int, sid: int) -> None:
        mon = self.monitors[m]
        if mon.sessions.get(slot) != sid or not self.slot_alive[slot]:
            return
        known = np.flatnonzero(self.db[slot, : len(self.addr_str)])
        n = min(int(self.cfg.getaddr_reply_fraction * len(known)), self.cfg.getaddr_reply_cap)
        if n > 0:
            picks = self.rng.sample(range(len(known)), n)
        else:
            picks = []
        entries = []
        for i in picks:
            aid = int(known[i])
            seen_s = int(self.last_seen[aid]) // 1000 if self.last_seen[aid] else t // 1000
            entries.append((seen_s, self.addr_services[aid], self.addr_str[aid]))
        remote = mon.session_remote[sid]
        self._log_addr_line(mon, t, sid, remote, entries, solicited=len(entries) > 10)
        for i in picks:
            self._monitor_ingest(mon, int(known[i]), t)

    # -- main loop ----------------------------------------------------------------

    def run(self) -> SimResultPaths:
        handlers = {
            EV_ARRIVAL: lambda t, p: self._on_arrival(t, *p),
            EV_ESTABLISH: lambda t, p: self._on_establish(t, *p),
            EV_ANNOUNCE: lambda t, p: self._on_announce_timer(t, *p),
            EV_CONN_CLOSE: lambda t, p: self._on_conn_close(t, *p),
            EV_DEATH: lambda t, p: self._on_death(t, *p),
            EV_MON_ATTEMPT: lambda t, p: self._on_mon_attempt(t, *p),
            EV_MON_ESTABLISH: lambda t, p: self._on_mon_establish(t, *p),
            EV_MON_TICK: lambda t, p: self._on_mon_tick(t, *p),
            EV_REPLY: lambda t, p: self._on_reply(t, *p),
            EV_MON_BOOT: lambda t, p: self._on_mon_boot(t, *p),
            EV_DIAL: lambda t, p: self._on_dial(t, *p),
        }
        next_flush = self.start_ms + 3_600_000
        while self.heap:
            t, _, kind, payload = heapq.heappop(self.heap)
            if t >= self.end_ms:
                break
            if t >= next_flush:
                self._flush_buffers(t)
                next_flush = t + 3_600_000
            handlers[kind](t, payload)
        self._flush_buffers(None)
        for mon in self.monitors:
            mon.fh.close()
        if self.inbound_fh is not None:
            self.inbound_fh.close()
        return self._write_outputs()

    # -- outputs ----------------------------------------------------------------

    def _write_outputs(self) -> SimResultPaths:
        import csv
        import datetime as dt

        def day_date(day_index: int) -> str:
            base = dt.datetime.fromtimestamp(self.start_ms / 1000, dt.timezone.utc).date()
            return (base + dt.timedelta(days=day_index)).isoformat()

        gt_path = os.path.join(self.out_dir, "ground_truth.csv")
        with open(gt_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["date", "addr", "reachable", "useful"])
            rows = []
            for inst in self.instances:
                if inst.first_conn_ms is None:
                    continue
                end = inst.death_ms if inst.death_ms is not None else self.end_ms
                first_day = (inst.first_conn_ms - self.start_ms) // DAY_MS
                last_day = min((end - 1 - self.start_ms) // DAY_MS, self.cfg.duration_days - 1)
                for day in range(first_day, last_day + 1):
                    rows.append(
                        (day, self.addr_str[inst.addr_id], int(inst.reachable), int(inst.useful))
                    )
            rows.sort()
            for day, addr, reachable, useful in rows:
                w.writerow([day_date(day), addr, reachable, useful])

        ac_path = os.path.join(self.out_dir, "announce_counts.csv")
        with open(ac_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["date", "addr", "count"])
            for (day, aid), count in sorted(self.announce_counts.items()):
                w.writerow([day_date(day), self.addr_str[aid], count])

        stats_path = os.path.join(self.out_dir, "stats.json")
        with open(stats_path, "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "kernel_backend": kernel.BACKEND,
                    "deliveries": int(self.stats[0]),
                    "forwards": int(self.stats[1]),
                    "cutoff_violations": int(self.stats[2]),
                    "monitor_receptions": int(self.stats[3]),
                    "announcements": int(sum(self.announce_counts.values())),
                    "addresses": len(self.addr_str),
                },
                fh,
                indent=2,
                sort_keys=True,
            )
            fh.write("\n")

        return SimResultPaths(
            out_dir=self.out_dir,
            monitor_logs=[m.path for m in self.monitors],
            inbound_log=self.inbound_path,
            ground_truth_csv=gt_path,
            announce_counts_csv=ac_path,
            stats_json=stats_path,
        )
