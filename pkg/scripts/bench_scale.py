"""Time the infinite-depth distance plus its gradient for growing state counts.

usage: python3 scripts/bench_scale.py [--sizes 10 20 50] [--delta 0.1] [--eps-frac 0.05]
"""

from __future__ import annotations

import argparse
import time

from otmkit.grad import full_gradient
from otmkit.instances import make_rng, random_pair
from otmkit.otm import DiscountParams, dwl_infinity


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", type=int, nargs="+", default=[10, 20, 30, 50])
    ap.add_argument("--delta", type=float, default=0.1)
    ap.add_argument("--eps-frac", type=float, default=0.05, help="epsilon as a fraction of mean cost")
    ap.add_argument("--seed", type=int, default=1111)
    args = ap.parse_args()
    print("n\tsweeps\tvalue\tdistance_s\tgradient_s")
    for n in args.sizes:
        X, Y, C = random_pair(make_rng(args.seed), n, n)
        params = DiscountParams(delta=args.delta, epsilon=args.eps_frac * float(C.mean()))
        t0 = time.perf_counter()
        res = dwl_infinity(X, Y, C, params)
        t1 = time.perf_counter()
        full_gradient(X, Y, C, params, result=res)
        t2 = time.perf_counter()
        print(f"{n}\t{res.iterations}\t{res.value:.8f}\t{t1 - t0:.2f}\t{t2 - t1:.2f}")


if __name__ == "__main__":
    main()
