"""Compare the compiled and pure-python Metropolis kernels.

    python benchmarks/bench_kernels.py [--model checkerboard] [--er 12] [--sweeps 200]

Both paths start from the same configuration and generator state, so the
script also checks that they end in the same configuration.
"""
import argparse
import time
from pathlib import Path

import numpy as np

from cepd import kernels
from cepd.cli import load_model
from cepd.lattice import build_supercell, random_config
from cepd.mc import Walker, make_rng

DATA = Path(__file__).resolve().parent.parent / "tests" / "data"


def timed_run(ce, sc, sweeps, accelerated, seed):
    cfg = random_config(sc, 0.0, make_rng(seed))
    w = Walker(ce, cfg, 4.0, 0.3, seed=seed, accelerated=accelerated)
    w.sweep(1)  # compile / warm up outside the timing
    t0 = time.perf_counter()
    w.sweep(sweeps)
    dt = time.perf_counter() - t0
    return w, dt


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--model", default="separation", choices=["separation", "checkerboard"])
    p.add_argument("--er", type=float, default=12.0)
    p.add_argument("--sweeps", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    ce, _ = load_model(DATA / args.model)
    sc = build_supercell(ce.lattice, args.er)
    flips = args.sweeps * sc.n_sites
    print(f"model={args.model} supercell={sc.repeats} sites={sc.n_sites} sweeps={args.sweeps}")

    results = {}
    paths = [False] + ([True] if kernels._accel.NUMBA_AVAILABLE else [])
    for acc in paths:
        w, dt = timed_run(ce, sc, args.sweeps, acc, args.seed)
        results[acc] = w
        name = "numba " if acc else "python"
        print(f"{name}: {dt:8.3f} s  {flips / dt:12.0f} attempts/s")
    if len(results) == 2:
        same = np.array_equal(results[True].config.sigma, results[False].config.sigma)
        print(f"identical final configurations: {same}")


if __name__ == "__main__":
    main()
