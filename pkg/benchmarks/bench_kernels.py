"""Time the numba and pure-numpy kernels on the fidelity-gradient hot path.

Usage::

    python3 benchmarks/bench_kernels.py --b 1 2 4 8 --repeat 5
"""
import argparse
import time

import numpy as np

from sordor import spin
from sordor._accel import get_kernels
from sordor.ensemble import scaling_from_bandwidth
from sordor.grape import problem


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--b", type=float, nargs="+", default=[1.0, 2.0, 4.0, 8.0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--bandwidth", type=float, default=40e3)
    args = parser.parse_args(argv)

    numba_k, numpy_k = get_kernels("numba"), get_kernels("numpy")
    rng = np.random.default_rng(0)
    print(f"{'b':>5} {'N':>5} {'K':>4} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8} {'max |dg|':>10}")
    for b in args.b:
        s = scaling_from_bandwidth(b, np.pi, args.bandwidth)
        ens, tgt = problem(b, 0.3, np.pi, args.bandwidth)
        phases = rng.uniform(0, 2 * np.pi, s.slices)
        call = (phases, s.amplitude, s.dt, ens.offsets, spin.LX, spin.LY, spin.LZ, tgt.rotations)
        numba_k.member_gradients(*call)  # compile outside the timing
        t_nb = best_time(lambda: numba_k.member_gradients(*call), args.repeat)
        t_np = best_time(lambda: numpy_k.member_gradients(*call), args.repeat)
        diff = np.max(np.abs(numba_k.member_gradients(*call)[1] - numpy_k.member_gradients(*call)[1]))
        print(f"{b:5.1f} {s.slices:5d} {ens.member_count:4d} {1e3 * t_nb:10.1f} {1e3 * t_np:10.1f} "
              f"{t_np / t_nb:8.2f} {diff:10.1e}")


if __name__ == "__main__":
    main()
