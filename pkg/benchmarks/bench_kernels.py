"""Throughput of the two simulator backends.

    python benchmarks/bench_kernels.py [--horizon N] [--paths K] [--repeat R]

Prints steps per second for the numba and numpy backends on the same
ensemble and checks that both produce identical end states.
"""

import argparse
import time

import numpy as np

from lrrw import ModelParams
from lrrw._kernels import HAVE_NUMBA
from lrrw.engine import SimConfig, run_ensemble


def best_of(config, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        ens = run_ensemble(config)
        times.append(time.perf_counter() - t0)
    return min(times), ens


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--horizon", type=int, default=20_000)
    ap.add_argument("--paths", type=int, default=2_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    params = ModelParams(0.6, 0.2, 0.2, 0.5)
    steps = args.horizon * args.paths
    backends = ["numpy"] + (["numba"] if HAVE_NUMBA else [])
    results = {}
    for backend in backends:
        cfg = SimConfig(params, args.horizon, args.paths, master_seed=1, backend=backend)
        if backend == "numba":
            # compile outside the timed region
            run_ensemble(SimConfig(params, 10, 2, backend=backend))
        elapsed, ens = best_of(cfg, args.repeat)
        results[backend] = ens
        print(f"{backend:>6}: {elapsed:8.3f} s  {steps / elapsed:12.3e} steps/s")

    if len(results) == 2:
        a, b = results["numpy"], results["numba"]
        same = np.array_equal(a.s, b.s) and np.array_equal(a.z, b.z)
        print(f"identical end states: {same}")
    else:
        print("numba unavailable; numpy only")


if __name__ == "__main__":
    main()
