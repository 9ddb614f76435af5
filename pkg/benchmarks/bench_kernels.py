"""Timing comparison: compiled kernels vs the NumPy fallback.

Run from the repository root:

    python3 benchmarks/bench_kernels.py [--repeat 7]

Reports best-of-N wall times for the two hot operations at a few sizes,
using the compiled extension when available next to the pure-NumPy
implementations that `FLUIDPORT_NO_EXT=1` would select.
"""

import argparse
import time

import numpy as np

from fluidport import kernels


def _timeit(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _rand_c(rng, shape):
    return (rng.normal(size=shape) + 1j * rng.normal(size=shape)).astype(np.complex128)


def bench_synth(rng, repeat):
    print("synth_tables  out[s,n,m] = sum_p w[s,p] row[p,n] col[p,m]")
    for s, p, n, m in [(16, 10, 20, 10), (64, 37, 50, 100), (256, 37, 50, 100)]:
        w = _rand_c(rng, (s, p))
        row = _rand_c(rng, (p, n))
        col = _rand_c(rng, (p, m))
        t_np = _timeit(lambda: kernels.synth_tables_numpy(w, row, col), repeat)
        line = f"  S={s:4d} P={p:3d} grid {n}x{m}: numpy {t_np * 1e3:8.2f} ms"
        if kernels._ext is not None:
            t_ext = _timeit(lambda: kernels._ext.synth_tables(w, row, col), repeat)
            line += f"   cython {t_ext * 1e3:8.2f} ms   speedup {t_np / t_ext:5.2f}x"
        print(line)


def bench_selection(rng, repeat):
    print("selection_distance  D[n,m] = sum_i |S[i,n,m] - H[i,n,m]|")
    for k, n, m in [(4, 20, 10), (8, 50, 100), (64, 50, 100)]:
        s = _rand_c(rng, (k, n, m))
        h = _rand_c(rng, (k, n, m))
        t_np = _timeit(lambda: kernels.selection_distance_numpy(s, h), repeat)
        line = f"  K={k:3d} grid {n}x{m}: numpy {t_np * 1e3:8.2f} ms"
        if kernels._ext is not None:
            t_ext = _timeit(lambda: kernels._ext.selection_distance(s, h), repeat)
            line += f"   cython {t_ext * 1e3:8.2f} ms   speedup {t_np / t_ext:5.2f}x"
        print(line)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=7, help="best-of-N timing")
    args = parser.parse_args()
    print(f"active backend: {kernels.BACKEND}")
    if kernels._ext is None:
        print("compiled extension unavailable; timing the NumPy path only")
    rng = np.random.default_rng(7)
    bench_synth(rng, args.repeat)
    bench_selection(rng, args.repeat)


if __name__ == "__main__":
    main()
