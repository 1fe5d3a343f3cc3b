"""Compare the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--rows 1000] [--level 12]
"""

import argparse
import time

import numpy as np

from cascadelab import _pykernels, generators
from cascadelab._rng import replicate_streams

try:
    from cascadelab import _ckernels
except ImportError:
    _ckernels = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--rows", type=int, default=1000)
    ap.add_argument("--level", type=int, default=12)
    args = ap.parse_args()

    backends = [("python", _pykernels)]
    if _ckernels is not None:
        backends.append(("cython", _ckernels))
    else:
        print("compiled kernels unavailable; timing the numpy fallback only")

    keys = replicate_streams(12345, np.arange(args.rows))
    cases = {
        "deterministic": generators.deterministic(2),
        "discrete": generators.discrete_iid(2, [0.5, 1.5], [0.5, 0.5]),
        "lognormal": generators.lognormal(2, 0.1),
        "dirichlet": generators.dirichlet(3, [1.0, 2.0, 0.5]),
    }
    print(f"{'kernel':<28}{'python [s]':>12}{'cython [s]':>12}{'speedup':>10}")
    for name, gen in cases.items():
        code, params = generators.kernel_args(gen)
        n = args.level if gen.c == 2 else int(args.level * np.log(2) / np.log(gen.c))
        row = {}
        for label, k in backends:
            row[label] = best_of(lambda: k.cascade_rows(keys, n, code, gen.c, params), args.repeat)
        _report(f"cascade_rows {name} n={n}", row)

    cells = replicate_streams(777, np.arange(args.rows * 100))
    for name in ("discrete", "lognormal", "dirichlet"):
        gen = cases[name]
        code, params = generators.kernel_args(gen)
        row = {label: best_of(lambda: k.sample_family(cells, code, gen.c, params), args.repeat)
               for label, k in backends}
        _report(f"sample_family {name} N={cells.size}", row)


def _report(name, row):
    py = row["python"]
    cy = row.get("cython")
    if cy is None:
        print(f"{name:<28}{py:>12.4f}{'-':>12}{'-':>10}")
    else:
        print(f"{name:<28}{py:>12.4f}{cy:>12.4f}{py / cy:>9.1f}x")


if __name__ == "__main__":
    main()
