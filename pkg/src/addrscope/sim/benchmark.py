"""Compare compiled and pure-Python relay-cascade kernels.

Runs identical cascades on a fixed random topology through both backends,
checks the outputs are bit-identical, and reports wall-clock throughput.

Run as: python -m addrscope.sim.benchmark [--peers N] [--cascades N]
"""

from __future__ import annotations

import argparse
import random
import time

import numpy as np

from . import KERNEL_BACKEND, gossip_py, kernel


def build_topology(n: int, out_degree: int, seed: int):
    rng = random.Random(seed)
    cap = 4 * out_degree
    nbr = np.zeros((n, cap), dtype=np.int32)
    deg = np.zeros(n, dtype=np.int32)
    for a in range(n):
        for _ in range(out_degree):
            b = rng.randrange(n - 1)
            if b >= a:
                b += 1
            if deg[a] < cap and deg[b] < cap:
                nbr[a, deg[a]] = b
                deg[a] += 1
                nbr[b, deg[b]] = a
                deg[b] += 1
    return nbr, deg


def run_backend(backend, n: int, cascades: int, seed: int):
    nbr, deg = build_topology(n, 8, seed)
    flags = np.ones(n, dtype=np.uint8)
    flags[0] = 2  # one monitor
    db = np.zeros((n, cascades + 1), dtype=np.uint8)
    last_seen = np.zeros(cascades + 1, dtype=np.int64)
    visited = np.full(n, -1, dtype=np.int64)
    qcap = 2 * n + 8
    queue = np.zeros((qcap, 3), dtype=np.int64)
    mon_out = np.zeros((qcap, 3), dtype=np.int64)
    stats = np.zeros(4, dtype=np.int64)
    rng = np.array([backend.rng_seed(seed)], dtype=np.uint64)
    pick = random.Random(seed)

    t0 = time.perf_counter()
    for i in range(cascades):
        origin = pick.randrange(1, n)
        first = int(nbr[origin, pick.randrange(int(deg[origin]))])
        backend.run_cascade(
            origin, first, i, i * 1000, 1,
            nbr, deg, flags, db, last_seen, visited, i + 1,
            600_000, 100, rng, queue, mon_out, stats, 1,
        )
    elapsed = time.perf_counter() - t0
    return elapsed, stats.copy(), db.sum(), int(rng[0])


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--peers", type=int, default=800)
    parser.add_argument("--cascades", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args(argv)

    results = {}
    backends = [("python", gossip_py)]
    if kernel.BACKEND == "cython":
        backends.append(("cython", kernel))
    else:
        print(f"compiled kernel unavailable (active backend: {KERNEL_BACKEND})")

    for name, backend in backends:
        elapsed, stats, db_sum, rng_end = run_backend(backend, args.peers, args.cascades, args.seed)
        results[name] = (stats, db_sum, rng_end)
        rate = stats[0] / elapsed
        print(
            f"{name:>8}: {elapsed:8.3f}s  {int(stats[0]):>10} deliveries "
            f"({rate:,.0f}/s), {int(stats[3])} monitor hits"
        )

    if len(results) == 2:
        py, cy = results["python"], results["cython"]
        identical = (py[0] == cy[0]).all() and py[1] == cy[1] and py[2] == cy[2]
        print(f"backends bit-identical: {identical}")
        return 0 if identical else 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
