"""Train on a red-biased corpus and check whether red is overestimated on balanced wells."""

import argparse
import logging

from wellcast.experiments import run_imbalance


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--runs", type=int, default=10)
    ap.add_argument("--wells", type=int, default=24)
    ap.add_argument("--iterations", type=int, default=800)
    ap.add_argument("--balance", type=float, default=0.9)
    ap.add_argument("--first-seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    result = run_imbalance(args.runs, args.wells, args.iterations, args.balance, first_seed=args.first_seed)
    print("seed  red_pred  red_gt  green_pred  green_gt  red_share_pred  red_share_gt")
    for r in result.runs:
        print(f"{r.seed:4d}  {r.predicted_red:8.1f}  {r.groundtruth_red:6.1f}  "
              f"{r.predicted_green:10.1f}  {r.groundtruth_green:8.1f}  "
              f"{r.predicted_red_share:14.3f}  {r.groundtruth_red_share:12.3f}")
    print(f"red overestimated in {result.overestimated_fraction:.0%} of runs")


if __name__ == "__main__":
    main()
