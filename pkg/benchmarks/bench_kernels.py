"""Time the compiled band table against the NumPy fallback.

    python benchmarks/bench_kernels.py [--sizes 64,128,192] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from latmaxwell import kernels, model


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="64,128,192")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    d = model.normalized_derived(model.MaterialParams((1, 2, 3), (1, 1, 1)))
    impls = {"numpy": kernels.band_table_numpy}
    if kernels.BACKEND == "cython":
        impls["cython"] = kernels.band_table_cython
    print(f"backend selected at import: {kernels.BACKEND}")
    print(f"{'n':>5} " + " ".join(f"{k + ' [ms]':>14}" for k in impls) + f" {'speedup':>9}")
    for n in (int(v) for v in args.sizes.split(",")):
        z = np.sin(np.linspace(-np.pi, np.pi, n)) ** 2
        best = {}
        for name, fn in impls.items():
            t = timeit.repeat(lambda: fn(d.alpha, d.beta, z, z, z), number=1, repeat=args.repeat)
            best[name] = 1e3 * min(t)
        ratio = best["numpy"] / best["cython"] if "cython" in best else float("nan")
        print(f"{n:>5} " + " ".join(f"{v:>14.2f}" for v in best.values()) + f" {ratio:>9.2f}")


if __name__ == "__main__":
    main()
