"""The compiled and pure-Python cascade kernels must be bit-identical."""

import random

import numpy as np
import pytest

from addrscope.sim import KERNEL_BACKEND, gossip_py, kernel

needs_compiled = pytest.mark.skipif(
    KERNEL_BACKEND == "python", reason="compiled kernel not built"
)


def make_state(n, addr_cap, seed):
    rng = random.Random(seed)
    cap = 16
    nbr = np.zeros((n, cap), dtype=np.int32)
    deg = np.zeros(n, dtype=np.int32)
    for a in range(n):
        for _ in range(6):
            b = rng.randrange(n - 1)
            if b >= a:
                b += 1
            if deg[a] < cap and deg[b] < cap:
                nbr[a, deg[a]] = b
                deg[a] += 1
                nbr[b, deg[b]] = a
                deg[b] += 1
    flags = np.ones(n, dtype=np.uint8)
    flags[1] |= 2  # monitor bit on a forwarding slot keeps hits coming
    flags[2] = 2  # pure monitor
    flags[3] = 0  # inert slot: receives but never forwards
    qcap = 2 * n + 8
    return dict(
        nbr=nbr,
        deg=deg,
        flags=flags,
        db=np.zeros((n, addr_cap), dtype=np.uint8),
        last_seen=np.zeros(addr_cap, dtype=np.int64),
        visited=np.full(n, -1, dtype=np.int64),
        queue=np.zeros((qcap, 3), dtype=np.int64),
        mon_out=np.zeros((qcap, 3), dtype=np.int64),
        stats=np.zeros(4, dtype=np.int64),
    )


def run_many(backend, n=60, cascades=300, seed=5, suppress=1, cutoff_ms=600_000):
    state = make_state(n, cascades + 1, seed)
    rng = np.array([backend.rng_seed(seed)], dtype=np.uint64)
    pick = random.Random(seed)
    hits = []
    for i in range(cascades):
        origin = pick.randrange(n)
        if not state["deg"][origin]:
            continue
        first = int(state["nbr"][origin, pick.randrange(int(state["deg"][origin]))])
        nmon = backend.run_cascade(
            origin, first, i, 1000 * i, i % 3 != 0,
            state["nbr"], state["deg"], state["flags"], state["db"],
            state["last_seen"], state["visited"], i + 1,
            cutoff_ms, 100, rng, state["queue"], state["mon_out"], state["stats"],
            suppress,
        )
        hits.append(state["mon_out"][:nmon].copy())
    return state, rng, hits


@needs_compiled
@pytest.mark.parametrize("suppress", [1, 0])
def test_backends_bit_identical(suppress):
    # without suppression the process is supercritical, so a short cutoff
    # keeps those cascades finite
    cutoff = 600_000 if suppress else 500
    cascades = 300 if suppress else 100
    py_state, py_rng, py_hits = run_many(gossip_py, cascades=cascades, suppress=suppress, cutoff_ms=cutoff)
    cy_state, cy_rng, cy_hits = run_many(kernel, cascades=cascades, suppress=suppress, cutoff_ms=cutoff)
    assert py_rng[0] == cy_rng[0], "RNG streams diverged"
    assert (py_state["db"] == cy_state["db"]).all()
    assert (py_state["last_seen"] == cy_state["last_seen"]).all()
    assert (py_state["stats"] == cy_state["stats"]).all()
    assert len(py_hits) == len(cy_hits)
    for a, b in zip(py_hits, cy_hits):
        assert (a == b).all()


def test_rng_seed_never_zero():
    for seed in range(-3, 100):
        assert gossip_py.rng_seed(seed) != 0
    if KERNEL_BACKEND != "python":
        for seed in range(-3, 100):
            assert kernel.rng_seed(seed) == gossip_py.rng_seed(seed)


def test_monitor_records_receive_time_and_sender():
    state = make_state(10, 4, seed=1)
    # wire slot 2 (pure monitor) directly to origin 0's first target
    rng = np.array([gossip_py.rng_seed(1)], dtype=np.uint64)
    nmon = gossip_py.run_cascade(
        0, 2, 0, 5_000, 1,
        state["nbr"], state["deg"], state["flags"], state["db"],
        state["last_seen"], state["visited"], 1,
        600_000, 100, rng, state["queue"], state["mon_out"], state["stats"], 1,
    )
    assert nmon >= 1
    t, mon_slot, sender = state["mon_out"][0]
    assert t == 5_100  # one hop of latency
    assert mon_slot == 2
    assert sender == 0


def test_ten_minute_cutoff_enforced():
    """Entries must stop being forwarded before exceeding the cutoff, so a
    long chain records zero violations."""
    n = 12_000  # deep line topology: 100ms per hop, cutoff at 600s
    nbr = np.zeros((n, 2), dtype=np.int32)
    deg = np.zeros(n, dtype=np.int32)
    for i in range(n - 1):
        nbr[i, deg[i]] = i + 1
        deg[i] += 1
        nbr[i + 1, deg[i + 1]] = i
        deg[i + 1] += 1
    flags = np.ones(n, dtype=np.uint8)
    qcap = 2 * n + 8
    db = np.zeros((n, 1), dtype=np.uint8)
    state = dict(
        last_seen=np.zeros(1, dtype=np.int64),
        visited=np.full(n, -1, dtype=np.int64),
        queue=np.zeros((qcap, 3), dtype=np.int64),
        mon_out=np.zeros((qcap, 3), dtype=np.int64),
        stats=np.zeros(4, dtype=np.int64),
    )
    rng = np.array([gossip_py.rng_seed(3)], dtype=np.uint64)
    gossip_py.run_cascade(
        0, 1, 0, 0, 1, nbr, deg, flags, db, state["last_seen"], state["visited"], 1,
        600_000, 100, rng, state["queue"], state["mon_out"], state["stats"], 1,
    )
    assert state["stats"][2] == 0  # no delivery past the cutoff
    assert db[:6001].sum() >= 1
    assert db[6001:].sum() == 0  # nothing travels more than cutoff/latency hops


def test_suppression_limits_forwards():
    """With per-entry duplicate suppression each slot forwards an entry at
    most once, bounding forwards by twice the slot count."""
    state = make_state(50, 2, seed=9)
    rng = np.array([gossip_py.rng_seed(9)], dtype=np.uint64)
    gossip_py.run_cascade(
        0, int(state["nbr"][0, 0]), 0, 0, 1,
        state["nbr"], state["deg"], state["flags"], state["db"],
        state["last_seen"], state["visited"], 1,
        600_000, 100, rng, state["queue"], state["mon_out"], state["stats"], 1,
    )
    assert state["stats"][1] <= 2 * 50
    assert state["db"][:, 0].sum() > 1  # actually spread


def test_non_forwardable_entry_stops_at_first_target():
    state = make_state(50, 2, seed=9)
    rng = np.array([gossip_py.rng_seed(9)], dtype=np.uint64)
    first = int(state["nbr"][0, 0])
    gossip_py.run_cascade(
        0, first, 0, 0, 0,  # forwardable=0: service-poor announcement
        state["nbr"], state["deg"], state["flags"], state["db"],
        state["last_seen"], state["visited"], 1,
        600_000, 100, rng, state["queue"], state["mon_out"], state["stats"], 1,
    )
    assert state["stats"][0] == 1  # delivered to the direct peer only
    assert state["db"][:, 0].sum() == 1
    assert state["db"][first, 0] == 1
