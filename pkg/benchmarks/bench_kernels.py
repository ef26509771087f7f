#!/usr/bin/env python3
"""Time every hot kernel under its numba and numpy implementations.

    python benchmarks/bench_kernels.py [--repeat 20] [--json out.json]

Also checks that both paths agree before timing them.
"""

import argparse
import json
import sys
import time

import numpy as np

from dualrot import _kernels as K
from dualrot.geometry import source_coords

WARMUP = 2


def _time(fn, args, repeat):
    for _ in range(WARMUP):
        fn(*args)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    x = np.pad(rng.standard_normal((4, 32, 64, 64)), ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = K.im2col_numpy(x, 3, 1, 64, 64)
    si, sj = source_coords((64, 64), 37.0)
    si, sj = np.clip(si, 0, 63), np.clip(sj, 0, 63)
    img = rng.random((3, 64, 64))
    mask = rng.random((64, 64)) > 0.05
    k1d = np.exp(-0.5 * ((np.arange(11) - 5) / 1.5) ** 2)
    k1d /= k1d.sum()
    return {
        "im2col": (x, 3, 1, 64, 64),
        "col2im": (cols, x.shape, 3, 1, 64, 64),
        "bilinear": (img, si, sj),
        "all4": (mask, si, sj),
        "sep_filter_valid": (img[0], k1d),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--json", help="write results here as well")
    args = ap.parse_args()

    if not K.HAVE_NUMBA:
        print("numba unavailable (or DUALROT_NO_NUMBA set); nothing to compare", file=sys.stderr)
        return 1

    results = []
    print(f"{'kernel':<18}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, call_args in cases(np.random.default_rng(0)).items():
        f_np = getattr(K, f"{name}_numpy")
        f_nb = getattr(K, f"{name}_numba")
        diff = float(np.max(np.abs(np.asarray(f_np(*call_args), float) - np.asarray(f_nb(*call_args), float))))
        if diff > 1e-9:
            print(f"{name}: backends disagree (max abs diff {diff:.3g})", file=sys.stderr)
            return 1
        t_np = _time(f_np, call_args, args.repeat)
        t_nb = _time(f_nb, call_args, args.repeat)
        results.append({"kernel": name, "numpy_s": t_np, "numba_s": t_nb, "max_abs_diff": diff})
        print(f"{name:<18}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}{t_np / t_nb:>9.2f}x")

    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(results, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
