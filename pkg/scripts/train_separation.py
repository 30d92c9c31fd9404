"""Standard vs IBP training on the XOR gap dataset, scored by IBP certified accuracy.

    python3 scripts/train_separation.py --seeds 5 --eps 0.05
"""

import argparse
import time

import numpy as np

from certkit.core import VerificationProblem
from certkit.interval import ibp_verify
from certkit.training import TrainConfig, init_network, make_gap_dataset, train_ibp, train_standard


def ibp_certified(net, data, eps):
    return float(np.mean([ibp_verify(VerificationProblem(s.x, s.y, eps), net).robust for s in data]))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--eps", type=float, default=0.05)
    ap.add_argument("--gap", type=float, default=0.2)
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--hidden", default="64,64,64")
    args = ap.parse_args()

    sizes = [2, *map(int, args.hidden.split(",")), 2]
    t0 = time.perf_counter()
    rows = []
    for seed in range(args.seeds):
        train_set = make_gap_dataset(400, args.gap, seed)
        test_set = make_gap_dataset(200, args.gap, 100 + seed)
        cfg = TrainConfig(epochs=args.epochs, seed=seed, eps_target=args.eps)
        std = train_standard(init_network(sizes, seed), train_set, cfg)
        ibp = train_ibp(init_network(sizes, seed), train_set, cfg)
        rows.append((ibp_certified(std, test_set, args.eps), ibp_certified(ibp, test_set, args.eps)))
        print(f"seed {seed}: standard {100 * rows[-1][0]:5.1f}%  ibp {100 * rows[-1][1]:5.1f}%")
    std_mean, ibp_mean = np.mean(rows, axis=0)
    print(f"mean:   standard {100 * std_mean:5.1f}%  ibp {100 * ibp_mean:5.1f}%  "
          f"gap {100 * (ibp_mean - std_mean):+.1f} pp  ({time.perf_counter() - t0:.1f}s)")


if __name__ == "__main__":
    main()
