"""Command-line entry point: ``certkit {train,verify,certify,attack,bench,report}``.

Every command is deterministic given ``--seed``; without it the seed comes
from ``CERTKIT_SEED`` and otherwise defaults to 0. Exit status is 0 on
success (whatever the verdicts), 1 on usage errors and 2 on I/O or file
format errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import bench
from .attack import AttackConfig, pgd
from .core import (
    DatasetError,
    ModelFormatError,
    Norm,
    Status,
    load_dataset,
    load_network,
    predict,
    save_network,
)
from .smoothing import SmoothingDistribution, certify
from .training import TrainConfig, TrainMode, init_network, train

EXIT_USAGE = 1
EXIT_IO = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def record(**kv) -> str:
    return " ".join(f"{k}={_fmt(v)}" for k, v in kv.items())


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("CERTKIT_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"CERTKIT_SEED must be an integer, got {env!r}") from None


def _load_inputs(args):
    for flag in ("model", "data"):
        p = getattr(args, flag)
        if not Path(p).exists():
            raise FileNotFoundError(f"--{flag}: file not found: {p}")
    net = load_network(args.model)
    data = load_dataset(args.data, net.num_classes)
    return net, data


def _pmap(fn, items, jobs: int):
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


# ------------------------------------------------------------------ train


def cmd_train(args) -> int:
    if not Path(args.data).exists():
        raise FileNotFoundError(f"--data: file not found: {args.data}")
    seed = _seed(args)
    data = load_dataset(args.data)
    n_in = len(data[0].x)
    n_cls = max(s.y for s in data) + 1 if args.classes is None else args.classes
    hidden = [int(h) for h in args.hidden.split(",") if h]
    net = init_network([n_in, *hidden, n_cls], seed)
    noise = None
    if args.mode == "noise":
        if args.sigma is None:
            raise UsageError("--mode noise requires --sigma")
        noise = SmoothingDistribution.gaussian(args.sigma) if args.sigma > 0 else None
    if args.mode == "ibp" and args.eps is None:
        raise UsageError("--mode ibp requires --eps")
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
                      seed=seed, eps_target=args.eps or 0.0, warmup_fraction=args.warmup,
                      kappa=args.kappa, noise=noise)
    net = train(net, data, cfg, TrainMode(args.mode))
    save_network(net, args.out)
    acc = float(np.mean([predict(net, s.x) == s.y for s in data]))
    print(record(mode=args.mode, samples=len(data), epochs=args.epochs, seed=seed,
                 train_accuracy=acc, out=args.out))
    return 0


# ------------------------------------------------------------------ verify


def _verify_one(task):
    spec, net, i, sample, eps, norm, timeout = task
    r = bench.verify_instance(spec, net, sample, eps, norm, timeout)
    return record(index=i, label=sample.y, verifier=spec.name, eps=eps, norm=norm.value,
                  status=r.status.value)


def cmd_verify(args) -> int:
    seed = _seed(args)
    net, data = _load_inputs(args)
    norm = Norm.parse(args.norm)
    opts: dict = {}
    if args.verifier == "crown":
        opts["relax"] = args.relax
    elif args.verifier == "bab":
        opts.update(bounding=args.bounding, relax=args.relax, seed=seed)
    elif args.verifier == "ibp":
        opts["clip"] = args.clip
    spec = bench.VerifierSpec(args.verifier, opts)
    timeout = args.timeout if args.timeout and args.timeout > 0 else None
    lines = _pmap(_verify_one, [(spec, net, i, s, args.eps, norm, timeout) for i, s in enumerate(data)],
                  args.jobs)
    for line in lines:
        print(line)
    counts = {s.value: sum(f"status={s.value}" in l.split() for l in lines) for s in Status}
    robust = counts["robust"]
    print(record(summary="verify", verifier=args.verifier, samples=len(data), robust=robust,
                 not_robust=counts["not_robust"], unknown=counts["unknown"],
                 timeout=counts["timeout"], certified_accuracy=robust / len(data) if data else 0.0))
    return 0


# ------------------------------------------------------------------ certify


def _certify_one(task):
    net, i, sample, dist, n0, n, alpha, seed = task
    c = certify(net, sample.x, dist, n0, n, alpha, seed)
    if c.abstained:
        status = Status.ABSTAIN
    else:
        status = Status.ROBUST if c.predicted == sample.y else Status.NOT_ROBUST
    return record(index=i, label=sample.y, predicted="abstain" if c.abstained else c.predicted,
                  status=status.value, pA_lower=c.pA_lower, radius_l2=c.radius_l2,
                  radius_l1=c.radius_l1, radius_linf=c.radius_linf)


def cmd_certify(args) -> int:
    seed = _seed(args)
    given = [a for a in ("sigma", "lam", "halfwidth") if getattr(args, a) is not None]
    if len(given) != 1:
        raise UsageError("give exactly one of --sigma, --lambda, --halfwidth")
    if args.halfwidth is not None:
        raise UsageError("--halfwidth: no certified radius is available for uniform noise")
    net, data = _load_inputs(args)
    dist = (SmoothingDistribution.gaussian(args.sigma) if args.sigma is not None
            else SmoothingDistribution.laplace(args.lam))
    tasks = [(net, i, s, dist, args.n0, args.n, args.alpha, [seed, i]) for i, s in enumerate(data)]
    lines = _pmap(_certify_one, tasks, args.jobs)
    for line in lines:
        print(line)
    robust = sum("status=robust" in l.split() for l in lines)
    abstain = sum("status=abstain" in l.split() for l in lines)
    print(record(summary="certify", samples=len(data), robust=robust, abstain=abstain,
                 n0=args.n0, n=args.n, alpha=args.alpha, seed=seed))
    return 0


# ------------------------------------------------------------------ attack


def _attack_one(task):
    net, i, sample, eps, cfg = task
    if predict(net, sample.x) != sample.y:
        return record(index=i, label=sample.y, status=Status.NOT_ROBUST.value, found="clean")
    res = pgd(net, sample.x, sample.y, eps, cfg)
    if res.found:
        return record(index=i, label=sample.y, status=Status.NOT_ROBUST.value, found=1,
                      adv_label=predict(net, res.adv),
                      adv="[" + ",".join(repr(float(v)) for v in res.adv) + "]")
    return record(index=i, label=sample.y, status=Status.UNKNOWN.value, found=0)


def cmd_attack(args) -> int:
    seed = _seed(args)
    net, data = _load_inputs(args)
    tasks = []
    for i, s in enumerate(data):
        cfg = AttackConfig(steps=args.steps, step_size=args.step_size, restarts=args.restarts,
                           random_start=not args.no_random_start, norm=args.norm,
                           seed=seed * 1_000_003 + i, clip=args.clip)
        tasks.append((net, i, s, args.eps, cfg))
    lines = _pmap(_attack_one, tasks, args.jobs)
    for line in lines:
        print(line)
    survived = sum("status=unknown" in l.split() for l in lines)
    print(record(summary="attack", samples=len(data), survived=survived,
                 pgd_accuracy=survived / len(data) if data else 0.0))
    return 0


# ------------------------------------------------------------------ bench / report


def cmd_bench(args) -> int:
    if not Path(args.config).exists():
        raise FileNotFoundError(f"--config: file not found: {args.config}")
    try:
        cfg = bench.BenchmarkConfig.from_json(args.config)
    except (json.JSONDecodeError, TypeError, KeyError) as exc:
        raise ModelFormatError(f"{args.config}: invalid benchmark config ({exc})") from None
    if args.seed is not None or os.environ.get("CERTKIT_SEED") is not None:
        cfg.seed = _seed(args)
    if args.no_timing:
        cfg.record_timing = False
    if args.jobs:
        cfg.jobs = args.jobs
    out = Path(args.out) if args.out else Path(args.config).parent
    report = bench.run_benchmark(cfg, out)
    print(report.to_table())
    print(record(summary="bench", csv=out / "report.csv", rows=len(report.rows),
                 sandwich_violations=len(report.sandwich_violations())))
    return 0


def cmd_report(args) -> int:
    if not Path(args.csv).exists():
        raise FileNotFoundError(f"--csv: file not found: {args.csv}")
    try:
        rows = bench.read_report_csv(args.csv)
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from None
    print(bench.render_table(rows, show_time=not args.no_timing))
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="certkit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, data=True):
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--jobs", type=int, default=1)
        if data:
            sp.add_argument("--model", required=True)
            sp.add_argument("--data", required=True)

    t = sub.add_parser("train", help="train a model and write it as JSON")
    t.add_argument("--mode", choices=[m.value for m in TrainMode], default="standard")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--hidden", default="32,32", help="comma-separated hidden widths")
    t.add_argument("--classes", type=int, default=None)
    t.add_argument("--eps", type=float, default=None)
    t.add_argument("--kappa", type=float, default=0.5)
    t.add_argument("--sigma", type=float, default=None)
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--lr", type=float, default=0.1)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--warmup", type=float, default=0.5)
    t.add_argument("--seed", type=int, default=None)

    v = sub.add_parser("verify", help="run a deterministic verifier on every sample")
    common(v)
    v.add_argument("--verifier", required=True, choices=["ibp", "crown", "lpfull", "bab", "lipschitz"])
    v.add_argument("--eps", type=float, required=True)
    v.add_argument("--norm", choices=[n.value for n in Norm], default="linf")
    v.add_argument("--relax", choices=["parallel", "adaptive"], default="adaptive")
    v.add_argument("--bounding", choices=["interval", "crown", "lpfull"], default="crown")
    v.add_argument("--timeout", type=float, default=60.0)
    v.add_argument("--clip", action="store_true")

    c = sub.add_parser("certify", help="randomized-smoothing certificates")
    common(c)
    c.add_argument("--sigma", type=float, default=None)
    c.add_argument("--lambda", dest="lam", type=float, default=None)
    c.add_argument("--halfwidth", type=float, default=None)
    c.add_argument("--n0", type=int, default=1000)
    c.add_argument("--n", type=int, default=100_000)
    c.add_argument("--alpha", type=float, default=0.001)

    a = sub.add_parser("attack", help="PGD attack on every sample")
    common(a)
    a.add_argument("--eps", type=float, required=True)
    a.add_argument("--norm", choices=["linf", "l2"], default="linf")
    a.add_argument("--steps", type=int, default=100)
    a.add_argument("--step-size", type=float, default=None)
    a.add_argument("--restarts", type=int, default=1)
    a.add_argument("--no-random-start", action="store_true")
    a.add_argument("--clip", action="store_true")

    b = sub.add_parser("bench", help="run a benchmark config and write report.csv")
    b.add_argument("--config", required=True)
    b.add_argument("--out", default=None)
    b.add_argument("--seed", type=int, default=None)
    b.add_argument("--jobs", type=int, default=None)
    b.add_argument("--no-timing", action="store_true",
                   help="leave mean_time_s empty so reports are byte-reproducible")

    r = sub.add_parser("report", help="render a report CSV as an aligned table")
    r.add_argument("--csv", required=True)
    r.add_argument("--no-timing", action="store_true")
    return p


COMMANDS = {
    "train": cmd_train,
    "verify": cmd_verify,
    "certify": cmd_certify,
    "attack": cmd_attack,
    "bench": cmd_bench,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"certkit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ModelFormatError, DatasetError) as exc:
        print(f"certkit {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"certkit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
