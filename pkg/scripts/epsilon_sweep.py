"""Gap between entropic and exact finite-depth distances as epsilon shrinks.

usage: python3 scripts/epsilon_sweep.py [--n 4] [--m 5] [--delta 0.5] [--depth 3]
"""

from __future__ import annotations

import argparse

from otmkit.instances import make_rng, random_pair
from otmkit.otm import DiscountParams, dwl_depth_k


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=4)
    ap.add_argument("--m", type=int, default=5)
    ap.add_argument("--delta", type=float, default=0.5)
    ap.add_argument("--depth", type=int, default=3)
    ap.add_argument("--seed", type=int, default=404)
    args = ap.parse_args()
    X, Y, C = random_pair(make_rng(args.seed), args.n, args.m)
    exact = dwl_depth_k(X, Y, C, DiscountParams(delta=args.delta, depth=args.depth)).value
    print(f"exact\t{exact:.10f}")
    print("eps/mean(C)\tvalue\tgap")
    for frac in (1.0, 3e-1, 1e-1, 3e-2, 1e-2, 3e-3, 1e-3):
        p = DiscountParams(delta=args.delta, depth=args.depth, epsilon=frac * float(C.mean()),
                           sinkhorn_max_iter=10**6)
        v = dwl_depth_k(X, Y, C, p).value
        print(f"{frac:g}\t{v:.10f}\t{abs(v - exact):.3e}")


if __name__ == "__main__":
    main()
