"""Time the compiled and pure-Python event loops on the same replicate.

Usage: python3 benchmarks/bench_kernel.py [--T 5] [--repeat 3]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from mslfv import backend
from mslfv.simulate import SimConfig, run, stream


def time_backend(name: str, T: float, repeat: int):
    cfg = SimConfig(T_end=T)
    best, result = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        result = run(cfg, rng=stream(0, 0), backend_name=name, log_events=True)
        best = min(best, time.perf_counter() - t0)
    return best, result


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--T", type=float, default=5.0, help="simulated time per replicate")
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)

    rows = {}
    for name in sorted(backend.BACKENDS):
        secs, res = time_backend(name, args.T, args.repeat)
        rows[name] = (secs, res)
        n_ev = len(res.events)
        print(f"{name:8s} {secs:9.4f} s  {n_ev:9d} candidate events  {n_ev / secs:12.0f} events/s")
    if {"cython", "python"} <= rows.keys():
        (tc, rc), (tp, rp) = rows["cython"], rows["python"]
        same = np.array_equal(rc.field.n, rp.field.n) and np.array_equal(rc.field.mass, rp.field.mass)
        print(f"speed-up {tp / tc:.1f}x; identical final fields: {same}")


if __name__ == "__main__":
    main()
