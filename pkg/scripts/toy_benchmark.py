"""Train three toy models, then benchmark every deterministic verifier on them.

Writes models, the dataset, a benchmark config and the report into --out
and prints the table (verifiers as rows, models as columns).

    python3 scripts/toy_benchmark.py --out runs/toy
"""

import argparse
import json
from pathlib import Path

from certkit.bench import BenchmarkConfig, run_benchmark
from certkit.core import save_dataset, save_network
from certkit.smoothing import SmoothingDistribution
from certkit.training import TrainConfig, init_network, make_gap_dataset, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/toy")
    ap.add_argument("--eps", type=float, default=0.05)
    ap.add_argument("--samples", type=int, default=20)
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(make_gap_dataset(200, seed=1000 + args.seed), out / "test.csv")
    train_set = make_gap_dataset(400, seed=args.seed)
    sizes = [2, 16, 16, 2]
    base = TrainConfig(epochs=args.epochs, seed=args.seed, eps_target=args.eps,
                       noise=SmoothingDistribution.gaussian(0.1))
    models = []
    for mode in ("standard", "ibp", "noise"):
        net = train(init_network(sizes, args.seed), train_set, base, mode)
        save_network(net, out / f"{mode}.json")
        models.append(f"{mode}.json")

    cfg = {
        "verifiers": ["ibp", "crown", "lpfull", {"name": "bab", "options": {"bounding": "polyhedra"}}],
        "models": models,
        "dataset": "test.csv",
        "sample_count": args.samples,
        "eps": args.eps,
        "per_instance_timeout_s": 5,
        "radius_timeout_s": 20,
        "radius_precision": 1e-2,
        "seed": args.seed,
        "jobs": args.jobs,
    }
    (out / "bench.json").write_text(json.dumps(cfg, indent=2))
    report = run_benchmark(BenchmarkConfig.from_json(out / "bench.json"), out)
    print(report.to_table())
    bad = report.sandwich_violations()
    print(f"sandwich violations: {len(bad)}; report written to {out / 'report.csv'}")


if __name__ == "__main__":
    main()
