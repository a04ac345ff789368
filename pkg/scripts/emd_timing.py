"""Time exact and approximate EMD across cloud sizes and report the gap.

    python scripts/emd_timing.py --sizes 64 256 512 2048
"""

import argparse
import time

import numpy as np

from symmpoint.metrics import EXACT_EMD_CAP, emd_approx, emd_exact


def timed(fn, *a, **kw):
    t0 = time.perf_counter()
    out = fn(*a, **kw)
    return out, time.perf_counter() - t0


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", type=int, nargs="+", default=[64, 256, 512, 2048])
    ap.add_argument("--epsilon", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    print(f"{'n':>6} {'exact':>10} {'t_exact':>8} {'approx':>10} {'t_approx':>8} {'gap':>9}")
    for n in args.sizes:
        P = rng.random((n, 3))
        Q = rng.random((n, 3))
        approx, ta = timed(emd_approx, P, Q, args.epsilon)
        if n <= EXACT_EMD_CAP:
            (exact, _), te = timed(emd_exact, P, Q)
            print(f"{n:6d} {exact:10.6f} {te:8.3f} {approx:10.6f} {ta:8.3f} {approx - exact:9.2e}")
        else:
            print(f"{n:6d} {'-':>10} {'-':>8} {approx:10.6f} {ta:8.3f} {'-':>9}")


if __name__ == "__main__":
    main()
