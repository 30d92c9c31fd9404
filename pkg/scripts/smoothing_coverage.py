"""Repeated certification of a halfspace classifier whose smoothed probability is known.

Counts how often the certified l2 radius exceeds the true Neyman-Pearson
radius; with exact Clopper-Pearson bounds that rate should stay below alpha.

    python3 scripts/smoothing_coverage.py --trials 1000 --p 0.9
"""

import argparse

import numpy as np

from certkit.core import Network
from certkit.smoothing import SmoothingDistribution, certify, normal_ppf


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=1000)
    ap.add_argument("--p", type=float, default=0.9, help="true smoothed probability of the top class")
    ap.add_argument("--sigma", type=float, default=1.0)
    ap.add_argument("--n0", type=int, default=1000)
    ap.add_argument("--n", type=int, default=10_000)
    ap.add_argument("--alpha", type=float, default=0.001)
    args = ap.parse_args()

    q = normal_ppf(args.p)
    truth = args.sigma * q
    w = np.array([1.0, 0.0])
    net = Network.from_weights([np.vstack([w, -w])], [[0.0, 0.0]])
    x0 = np.array([q * args.sigma, 0.0])
    dist = SmoothingDistribution.gaussian(args.sigma)
    radii = np.array([certify(net, x0, dist, args.n0, args.n, args.alpha, seed=s).radius_l2
                      for s in range(args.trials)])
    over = int(np.sum(radii > truth))
    print(f"true radius {truth:.5f}; mean certified {radii.mean():.5f}; "
          f"over-certified {over}/{args.trials} ({100 * over / args.trials:.2f}%, alpha = {100 * args.alpha:.2f}%)")


if __name__ == "__main__":
    main()
