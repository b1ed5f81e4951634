#!/usr/bin/env python3
"""SGDM alone versus SGDM with 32-bit and 4-bit Shampoo on synthetic logistic regression."""

import argparse
import csv
import sys

from quantprec.harness.problems import Logistic, desk_logistic
from quantprec.harness.training import run_training
from quantprec.optimizer import FirstOrderConfig, ShampooConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--lr", type=float, default=0.1)
    ap.add_argument("--T1", type=int, default=10)
    ap.add_argument("--T2", type=int, default=50)
    ap.add_argument("--variant", default="shampoo")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--feature-cond", type=float, default=None, help="override the feature conditioning")
    ap.add_argument("--batch-size", type=int, default=128)
    args = ap.parse_args()

    problem = desk_logistic(args.seed, args.batch_size)
    if args.feature_cond is not None:
        problem = Logistic(seed=args.seed, signal=3.0, feature_cond=args.feature_cond, batch_size=args.batch_size)
    fo = FirstOrderConfig("sgdm", lr=args.lr)
    runs = {"sgdm": run_training(problem, None, fo, args.steps)}
    for prec in ("32", "4"):
        cfg = ShampooConfig(precision=prec, variant=args.variant, T1=args.T1, T2=args.T2)
        runs[f"shampoo{prec}"] = run_training(problem, cfg, fo, args.steps)

    out = csv.writer(sys.stdout)
    out.writerow(["step"] + list(runs))
    for i in range(args.steps):
        out.writerow([i + 1] + [f"{r.losses[i]:.6f}" for r in runs.values()])
    level = runs["sgdm"].final_loss
    for name, r in runs.items():
        print(f"# {name}: final {r.final_loss:.5f}, reaches sgdm level at step {r.steps_to_reach(level)}, "
              f"wall {r.wall_time:.1f}s", file=sys.stderr)


if __name__ == "__main__":
    main()
