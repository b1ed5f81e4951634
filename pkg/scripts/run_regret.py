#!/usr/bin/env python3
"""Regret of perturbed Shampoo on online quadratics against the theoretical bound."""

import argparse
import csv
import sys

from quantprec.harness.training import regret_check


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--T", type=int, default=200)
    ap.add_argument("--dim", type=int, default=8)
    ap.add_argument("--seeds", type=int, default=3)
    args = ap.parse_args()

    out = csv.writer(sys.stdout)
    out.writerow(["quantizer", "rank", "seed", "regret", "bound", "eta", "D", "rho", "mu", "fixed_point"])
    for quantizer in ("identity", "matrix", "eigen"):
        for rank in (1, 2):
            for seed in range(args.seeds):
                r = regret_check(T=args.T, m=args.dim, n=args.dim, quantizer=quantizer, rank=rank, seed=seed)
                out.writerow([quantizer, rank, seed, f"{r.regret:.6g}", f"{r.bound:.6g}", f"{r.eta:.6g}",
                              f"{r.D:.6g}", f"{r.rho:.6g}", f"{r.mu:.6g}", int(r.fixed_point)])


if __name__ == "__main__":
    main()
