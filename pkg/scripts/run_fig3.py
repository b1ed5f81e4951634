#!/usr/bin/env python3
"""Rectification error of noisy eigenvector matrices against the number of Björck steps."""

import argparse
import csv
import sys

from quantprec import analysis as an
from quantprec import precond as pc


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=256)
    ap.add_argument("--cond", type=float, default=1e4)
    ap.add_argument("--bits", type=int, default=4)
    ap.add_argument("--mapping", default="linear2")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    qc = pc.QuantConfig(bits=args.bits, mapping=args.mapping, min_quant_size=0)
    state, _ = an.noisy_eigenfactor(args.n, qc, cond=args.cond, seed=args.seed)
    s_list = (-0.25, -0.5, -1.0, -2.0)
    t2_list = range(5)
    grid = an.fig3_sweep(state, qc, s_list, t2_list)
    out = csv.writer(sys.stdout)
    out.writerow(["s", "t2", "error"])
    for i, s in enumerate(s_list):
        for j, t in enumerate(t2_list):
            out.writerow([s, t, f"{grid[i, j]:.6e}"])


if __name__ == "__main__":
    main()
