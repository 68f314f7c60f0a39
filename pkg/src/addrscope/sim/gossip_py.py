"""Pure-Python gossip cascade kernel.

Reference implementation of the hot loop; the compiled twin in
``_gossip.pyx`` replicates it bit-for-bit (same RNG, same draw order, same
output order), so backend choice never changes simulation results.
"""

from __future__ import annotations

BACKEND = "python"

_M64 = (1 << 64) - 1
_MULT = 2685821657736338717

FLAG_FORWARDS = 1
FLAG_MONITOR = 2 | 4  # either monitor bit

_REJECTION_TRIES = 16


def rng_seed(seed: int) -> int:
    """Initial xorshift64* state; never zero."""
    state = (seed ^ 0x9E3779B97F4A7C15) & _M64
    return state or 0x106689D45497FDB5


def _step(x: int) -> int:
    x ^= x >> 12
    x = (x ^ (x << 25)) & _M64
    x ^= x >> 27
    return x


def run_cascade(
    origin_slot: int,
    first_target: int,
    addr_id: int,
    ts_ms: int,
    forwardable: int,
    nbr,          # int32[ns, cap]
    deg,          # int32[ns]
    flags,        # uint8[ns]
    db,           # uint8[ns, addr_cap]
    last_seen,    # int64[addr_cap]
    visited,      # int64[ns]
    stamp: int,
    cutoff_ms: int,
    latency_ms: int,
    rng,          # uint64[1], updated in place
    queue,        # int64[qcap, 3] scratch
    mon_out,      # int64[qcap, 3] output: time, monitor_slot, sender_slot
    stats,        # int64[4]: deliveries, forwards, cutoff_violations, mon_hits
    suppress: int = 1,
) -> int:
    """Propagate one announced entry; returns rows used in ``mon_out``."""
    state = int(rng[0])
    qcap = queue.shape[0]
    queue[0, 0] = first_target
    queue[0, 1] = origin_slot
    queue[0, 2] = ts_ms + latency_ms
    head, tail, nmon = 0, 1, 0
    deliveries = forwards = violations = 0
    while head < tail:
        slot = int(queue[head, 0])
        sender = int(queue[head, 1])
        t = int(queue[head, 2])
        head += 1
        deliveries += 1
        age = t - ts_ms
        if age > cutoff_ms:
            violations += 1
        db[slot, addr_id] = 1
        if last_seen[addr_id] < t:
            last_seen[addr_id] = t
        f = int(flags[slot])
        if f & FLAG_MONITOR:
            mon_out[nmon, 0] = t
            mon_out[nmon, 1] = slot
            mon_out[nmon, 2] = sender
            nmon += 1
        if not f & FLAG_FORWARDS:
            continue
        if suppress:
            if visited[slot] == stamp:
                continue
            visited[slot] = stamp
        if not forwardable:
            continue
        if age + latency_ms > cutoff_ms:
            continue
        d = int(deg[slot])
        if d == 0:
            continue
        state = _step(state)
        fanout = 1 + ((state * _MULT) & _M64) % 2
        first_choice = -1
        for k in range(fanout):
            chosen = -1
            for _ in range(_REJECTION_TRIES):
                state = _step(state)
                j = ((state * _MULT) & _M64) % d
                cand = int(nbr[slot, j])
                if cand == sender or cand == first_choice:
                    continue
                chosen = cand
                break
            if chosen < 0:
                continue
            if tail >= qcap:
                raise RuntimeError("cascade queue overflow; enable duplicate_suppression")
            queue[tail, 0] = chosen
            queue[tail, 1] = slot
            queue[tail, 2] = t + latency_ms
            tail += 1
            forwards += 1
            if k == 0:
                first_choice = chosen
    stats[0] += deliveries
    stats[1] += forwards
    stats[2] += violations
    stats[3] += nmon
    rng[0] = state
    return nmon
