#!/usr/bin/env python3
"""Effect of contracting the spectrum on the error of quantizing A versus its eigenvectors."""

import argparse
import csv
import sys

from quantprec import analysis as an
from quantprec import precond as pc


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--order", type=int, default=512)
    ap.add_argument("--cond", type=float, default=1e4)
    ap.add_argument("--bits", type=int, default=4)
    ap.add_argument("--mapping", default="linear2")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--exclude-diag", action="store_true")
    args = ap.parse_args()

    qc = pc.QuantConfig(bits=args.bits, mapping=args.mapping)
    A = an.make_synthetic_pd(args.order - 4, 4, args.cond, seed=args.seed)
    taus = (1.0, 0.5, 0.2, 0.1, 0.05, 0.02, 0.01, 0.001)
    out = csv.writer(sys.stdout)
    out.writerow(["tau", "nre_A", "nre_U_or"])
    for tau, a, u in an.contraction_sweep(A, taus, qc, exclude_diag=args.exclude_diag):
        out.writerow([tau, f"{a:.5f}", f"{u:.5f}"])


if __name__ == "__main__":
    main()
