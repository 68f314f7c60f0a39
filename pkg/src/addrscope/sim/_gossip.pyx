# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled gossip cascade kernel; bit-identical twin of gossip_py."""

import numpy as np

cimport numpy as cnp

BACKEND = "cython"

cdef unsigned long long _MULT = 2685821657736338717ULL

cdef int FLAG_FORWARDS = 1
cdef int _FLAG_MONITOR = 6

cdef int _REJECTION_TRIES = 16


def rng_seed(seed):
    state = (int(seed) ^ 0x9E3779B97F4A7C15) & ((1 << 64) - 1)
    return state or 0x106689D45497FDB5


cdef inline unsigned long long _step(unsigned long long x) nogil:
    x ^= x >> 12
    x ^= x << 25
    x ^= x >> 27
    return x


def run_cascade(
    int origin_slot,
    int first_target,
    int addr_id,
    long long ts_ms,
    int forwardable,
    int[:, ::1] nbr,
    int[::1] deg,
    unsigned char[::1] flags,
    unsigned char[:, ::1] db,
    long long[::1] last_seen,
    long long[::1] visited,
    long long stamp,
    long long cutoff_ms,
    long long latency_ms,
    unsigned long long[::1] rng,
    long long[:, ::1] queue,
    long long[:, ::1] mon_out,
    long long[::1] stats,
    int suppress=1,
):
    cdef unsigned long long state = rng[0]
    cdef long long qcap = queue.shape[0]
    cdef long long head = 0, tail = 1, nmon = 0
    cdef long long deliveries = 0, forwards = 0, violations = 0
    cdef int slot, sender, f, d, fanout, k, tries, cand, chosen, first_choice
    cdef long long t, age, j

    queue[0, 0] = first_target
    queue[0, 1] = origin_slot
    queue[0, 2] = ts_ms + latency_ms

    while head < tail:
        slot = <int> queue[head, 0]
        sender = <int> queue[head, 1]
        t = queue[head, 2]
        head += 1
        deliveries += 1
        age = t - ts_ms
        if age > cutoff_ms:
            violations += 1
        db[slot, addr_id] = 1
        if last_seen[addr_id] < t:
            last_seen[addr_id] = t
        f = flags[slot]
        if f & _FLAG_MONITOR:
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
        d = deg[slot]
        if d == 0:
            continue
        state = _step(state)
        fanout = 1 + <int> ((state * _MULT) % 2)
        first_choice = -1
        for k in range(fanout):
            chosen = -1
            for tries in range(_REJECTION_TRIES):
                state = _step(state)
                j = <long long> ((state * _MULT) % <unsigned long long> d)
                cand = nbr[slot, j]
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
