"""Replay the fixed-point iterates of one instance against the geometric error bound.

usage: python3 scripts/rate_bound_replay.py [--n 5] [--m 4] [--delta 0.2]
"""

from __future__ import annotations

import argparse

import numpy as np

from otmkit.instances import make_rng, random_pair
from otmkit.otm import DiscountParams, dwl_infinity


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=5)
    ap.add_argument("--m", type=int, default=4)
    ap.add_argument("--delta", type=float, default=0.2)
    ap.add_argument("--seed", type=int, default=202)
    args = ap.parse_args()
    X, Y, C = random_pair(make_rng(args.seed), args.n, args.m)
    scale = float(np.abs(C).max())
    tol = 1e-9 * scale
    run = dwl_infinity(X, Y, C, DiscountParams(delta=args.delta, tol=tol, init="C", record_iterates=True))
    limit = dwl_infinity(X, Y, C, DiscountParams(delta=args.delta, tol=tol / 10)).cost_final
    print("sweep\terror\tbound\tratio")
    for k, M in enumerate(run.iterates):
        err = float(np.abs(M - limit).max())
        bound = 2 * (1 - args.delta) ** k / args.delta * scale
        print(f"{k}\t{err:.3e}\t{bound:.3e}\t{err / bound:.3f}")


if __name__ == "__main__":
    main()
