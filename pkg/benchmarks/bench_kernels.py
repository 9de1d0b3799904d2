"""Time the numba and numpy variants of each kernel on the same inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]

The first numba call (compilation) is excluded. Outputs are compared before
timing so a fast-but-wrong kernel shows up as a failure, not a speedup.
"""

import argparse
import time

import numpy as np

from ufrec import kernels
from ufrec._accel import HAVE_NUMBA


def make_inputs(scale, seed=0):
    rng = np.random.default_rng(seed)
    n = int(200_000 * scale)
    dst = np.zeros((5_000, 64))
    idx = rng.integers(0, 5_000, size=n // 10)
    src = rng.standard_normal((n // 10, 64))

    users = rng.integers(0, int(6_000 * scale) + 1, size=n)
    items = (rng.zipf(1.3, size=n) - 1) % (int(3_000 * scale) + 1)

    n_users = int(2_000 * scale) + 1
    lens = rng.integers(5, 40, size=n_users)
    indptr = np.concatenate([[0], np.cumsum(lens)])
    co_items = rng.integers(1, 3_000, size=indptr[-1])
    co_times = rng.integers(0, 10**8, size=indptr[-1]).astype(np.float64)

    pos = rng.standard_normal(int(20_000 * scale) + 1)
    cand = rng.standard_normal((len(pos), 101))
    valid = rng.random(cand.shape) > 0.05

    return {
        "scatter_add_rows": (lambda: dst.copy(), idx, src),
        "kcore_keep": (users, items, users.max() + 1, items.max() + 1, 5, 5),
        "cooccurrence_pairs": (indptr, co_items, co_times),
        "rank_of_positive": (pos, cand, valid),
    }


def _call(fn, args):
    args = tuple(a() if callable(a) else a for a in args)
    return fn(*args)


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        prepared = tuple(a() if callable(a) else a for a in args)
        t = time.perf_counter()
        fn(*prepared)
        times.append(time.perf_counter() - t)
    return min(times)


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-12, atol=1e-12)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scale", type=float, default=1.0)
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        print("numba is not installed; only the numpy path can run")
    inputs = make_inputs(args.scale)
    print(f"{'kernel':<20} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    ok = True
    for name, call_args in inputs.items():
        np_fn = getattr(kernels, f"{name}_numpy")
        nb_fn = getattr(kernels, f"{name}_numba")
        ref = _call(np_fn, call_args)
        got = _call(nb_fn, call_args)  # also compiles
        if not same(ref, got):
            print(f"{name:<20} MISMATCH between variants")
            ok = False
            continue
        t_np = best_of(np_fn, call_args, args.repeat)
        t_nb = best_of(nb_fn, call_args, args.repeat)
        print(f"{name:<20} {1e3 * t_np:10.2f} {1e3 * t_nb:10.2f} {t_np / t_nb:7.1f}x")
    return 0 if ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
