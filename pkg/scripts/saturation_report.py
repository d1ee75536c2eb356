"""When do simulated wells reach 90% of carrying capacity?"""

import argparse
from collections import Counter
from dataclasses import replace

from wellcast.experiments import saturation_report
from wellcast.simulate import SimConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=50)
    ap.add_argument("--growth", type=float, default=SimConfig().growth_rate)
    ap.add_argument("--frames", type=int, default=SimConfig().frames)
    args = ap.parse_args()

    report = saturation_report(args.seeds, replace(SimConfig(), growth_rate=args.growth, frames=args.frames))
    counts = Counter(f for f in report["frames"] if f is not None)
    for frame in sorted(counts):
        print(f"frame {frame + 1:3d}  {'#' * counts[frame]}")
    print(f"{report['reached']}/{report['seeds']} saturated, median frame {report['median'] + 1:g}")


if __name__ == "__main__":
    main()
