"""Time the correlation-based shift search against exhaustive enumeration.

    python scripts/bench_best_shift.py --pairs 50 --dims 24 48 --radius 8

Both searches must return the same (offset, overlap); any disagreement
is printed and makes the script exit with status 1.
"""

import argparse
import sys
import time

import numpy as np

from anatoforge.maskops import BinaryMask, ShiftWindow, best_shift, best_shift_exhaustive
from anatoforge.volume_io import VolumeGeometry


def blob(rng, dims):
    bits = np.zeros(dims, dtype=bool)
    for _ in range(int(rng.integers(1, 4))):
        lo = [int(rng.integers(0, d // 2)) for d in dims]
        hi = [l + int(rng.integers(2, d // 2 + 1)) for l, d in zip(lo, dims)]
        bits[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]] = True
    return bits


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--pairs", type=int, default=50)
    ap.add_argument("--dims", type=int, nargs="+", default=[24, 48])
    ap.add_argument("--radius", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    window = ShiftWindow(radius=(args.radius,) * 3)
    bad = 0
    for n in args.dims:
        geom = VolumeGeometry((n, n, n), (1.0, 1.0, 1.0))
        pairs = [(BinaryMask(geom, blob(rng, (n, n, n))), BinaryMask(geom, blob(rng, (n, n, n)))) for _ in range(args.pairs)]
        t0 = time.perf_counter()
        fast = [best_shift(a, b, window) for a, b in pairs]
        t_fast = time.perf_counter() - t0
        t0 = time.perf_counter()
        slow = [best_shift_exhaustive(a, b, window) for a, b in pairs]
        t_slow = time.perf_counter() - t0
        mism = sum(f != s for f, s in zip(fast, slow))
        bad += mism
        print(
            f"{n:>4}^3  window ±{args.radius}: correlation {t_fast / args.pairs * 1000:8.2f} ms/pair, "
            f"exhaustive {t_slow / args.pairs * 1000:8.2f} ms/pair, mismatches {mism}"
        )
    sys.exit(1 if bad else 0)


if __name__ == "__main__":
    main()
