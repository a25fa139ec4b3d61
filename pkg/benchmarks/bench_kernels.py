"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--size 1000000]

JIT compilation happens once in a warmup call and is not counted.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from semobs import kernels


def cases(size: int, rng: np.random.Generator):
    times = np.sort(rng.uniform(0, size / 10, size))
    targets = rng.uniform(0, size / 10, size)
    z = (rng.random(size) < 0.6).astype(np.int8)
    zs = (rng.random((size // 100, 100)) < 0.6).astype(np.int8)
    gt = rng.integers(0, 2, size).astype(np.int8)
    dec = rng.integers(0, kernels.N_DECISION_CODES, size).astype(np.int8)
    return {
        "nearest_indices": (times, targets),
        "run_lengths": (z,),
        "first_triggers": (zs, 3),
        "confusion_counts": (gt, dec),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=1_000_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if not kernels.HAVE_NUMBA:
        print("numba is not installed; nothing to compare")
        return 1
    kernels.warmup()
    inputs = cases(args.size, np.random.default_rng(args.seed))

    print(f"size={args.size} repeat={args.repeat} (best of, ms)")
    print(f"{'kernel':<18} {'numpy':>10} {'numba':>10} {'speedup':>8}")
    for name, call_args in inputs.items():
        fast, slow = kernels.NUMBA_KERNELS[name], kernels.NUMPY_KERNELS[name]
        # same answer first, otherwise the timing is meaningless
        np.testing.assert_array_equal(fast(*call_args), slow(*call_args))
        t_np = min(timeit.repeat(lambda: slow(*call_args), number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(lambda: fast(*call_args), number=1, repeat=args.repeat))
        print(f"{name:<18} {t_np * 1e3:>10.2f} {t_nb * 1e3:>10.2f} {t_np / t_nb:>7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
