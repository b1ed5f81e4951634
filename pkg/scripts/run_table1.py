#!/usr/bin/env python3
"""Quantization schemes on synthetic two-valued PD matrices, averaged over seeds."""

import argparse
import csv
import sys

import numpy as np

from quantprec import analysis as an
from quantprec import precond as pc


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--order", type=int, default=512)
    ap.add_argument("--small", type=int, default=4, help="number of small eigenvalues")
    ap.add_argument("--cond", type=float, default=1e4)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--bits", type=int, default=4)
    ap.add_argument("--block-size", type=int, default=64)
    ap.add_argument("--exclude-diag", action="store_true")
    args = ap.parse_args()

    out = csv.writer(sys.stdout)
    out.writerow(["mapping", "scheme", "nre_mean", "nre_std", "ae_deg_mean"])
    mats = [an.make_synthetic_pd(args.order - args.small, args.small, args.cond, seed=i) for i in range(args.seeds)]
    for mapping in ("dt", "linear2"):
        qc = pc.QuantConfig(bits=args.bits, mapping=mapping, block_size=args.block_size)
        for scheme in an.Scheme:
            reps = [an.table1_experiment(A, scheme, qc, exclude_diag=args.exclude_diag) for A in mats]
            nre = np.array([r.nre for r in reps])
            ae = np.array([r.ae_degrees for r in reps])
            out.writerow([mapping, scheme.value, f"{nre.mean():.4f}", f"{nre.std():.4f}", f"{ae.mean():.3f}"])


if __name__ == "__main__":
    main()
