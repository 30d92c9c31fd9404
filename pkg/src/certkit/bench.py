"""Benchmark protocol: certified accuracy, average certified radius, PGD and clean rows."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .attack import AttackConfig, pgd
from .complete import BabConfig, bab_verify
from .core import (
    Deadline,
    LabeledSample,
    Network,
    Norm,
    Status,
    VerificationProblem,
    Verdict,
    VerifierTimeout,
    load_dataset,
    load_network,
    predict,
)
from .interval import ibp_verify
from .linear import crown_verify
from .lipschitz import lipschitz_verify
from .lp import lp_full_verify
from .smoothing import SmoothingDistribution, certify

CSV_COLUMNS = ["model", "verifier", "eps", "norm", "certified_accuracy", "avg_radius",
               "mean_time_s", "timeouts"]
RADIUS_CAP = 0.5


# ------------------------------------------------------------ verifier registry


def _bab(problem, net, deadline, bounding="polyhedra", relax="adaptive", seed=0, **_):
    cfg = BabConfig(timeout_s=deadline.remaining() if deadline.seconds else None,
                    bounding=bounding, relax=relax, seed=seed)
    v = bab_verify(problem, net, cfg)
    return Verdict(v.status, v.margins, v.counterexample,
                   {"verifier": "bab", "branches": v.branches_explored})


def _crown(problem, net, deadline, relax="adaptive", bound_source="polyhedra", **_):
    return crown_verify(problem, net, relax=relax, bound_source=bound_source, deadline=deadline)


def _smooth(problem, net, deadline, sigma=None, lam=None, n0=1000, n=100_000, alpha=0.001,
            seed=0, **_):
    if (sigma is None) == (lam is None):
        raise ValueError("smooth verifier needs exactly one of sigma or lam")
    dist = SmoothingDistribution.gaussian(sigma) if sigma is not None else SmoothingDistribution.laplace(lam)
    cert = certify(net, problem.x0, dist, n0, n, alpha, seed)
    if cert.abstained:
        return Verdict(Status.ABSTAIN, info={"verifier": "smooth", "pA_lower": cert.pA_lower})
    ok = cert.predicted == problem.y0 and problem.eps < cert.radius(problem.norm)
    return Verdict(Status.ROBUST if ok else Status.UNKNOWN,
                   info={"verifier": "smooth", "pA_lower": cert.pA_lower,
                         "radius": cert.radius(problem.norm), "predicted": cert.predicted})


VERIFIERS: dict[str, Callable] = {
    "ibp": lambda p, net, deadline, clip=False, **_: ibp_verify(p, net, clip=clip, deadline=deadline),
    "crown": _crown,
    "lpfull": lambda p, net, deadline, **_: lp_full_verify(p, net, deadline=deadline),
    "bab": _bab,
    "lipschitz": lambda p, net, deadline, **_: lipschitz_verify(p, net),
    "smooth": _smooth,
}


@dataclass(frozen=True)
class VerifierSpec:
    name: str
    options: dict = field(default_factory=dict)
    label: str | None = None

    def __post_init__(self):
        if self.name not in VERIFIERS:
            raise ValueError(f"unknown verifier {self.name!r}; choose from {sorted(VERIFIERS)}")

    @property
    def display(self) -> str:
        return self.label or self.name

    @classmethod
    def parse(cls, item) -> "VerifierSpec":
        if isinstance(item, VerifierSpec):
            return item
        if isinstance(item, str):
            return cls(item)
        item = dict(item)
        return cls(item.pop("name"), item.pop("options", {}), item.pop("label", None))


def run_verifier(spec: VerifierSpec, problem: VerificationProblem, net: Network,
                 timeout: float | None = None) -> tuple[Verdict, float]:
    """Run one verifier under the cooperative deadline; returns (verdict, seconds).

    A verdict reached after the budget ran out is reported as a timeout.
    """
    deadline = Deadline(timeout)
    t0 = time.perf_counter()
    try:
        verdict = VERIFIERS[spec.name](problem, net, deadline, **spec.options)
    except VerifierTimeout:
        verdict = Verdict(Status.TIMEOUT)
    elapsed = time.perf_counter() - t0
    if timeout is not None and elapsed > timeout and verdict.status is not Status.TIMEOUT:
        verdict = Verdict(Status.TIMEOUT, info={"late": verdict.status.value})
    return verdict, elapsed


# ------------------------------------------------------------ protocol pieces


@dataclass
class InstanceResult:
    status: Status
    seconds: float
    radius: float = 0.0


def verify_instance(spec: VerifierSpec, net: Network, sample: LabeledSample, eps: float,
                    norm, timeout: float | None) -> InstanceResult:
    if predict(net, sample.x) != sample.y:
        return InstanceResult(Status.NOT_ROBUST, 0.0)
    v, dt = run_verifier(spec, VerificationProblem(sample.x, sample.y, eps, norm), net, timeout)
    return InstanceResult(v.status, dt)


def certified_accuracy(spec, net: Network, samples: Sequence[LabeledSample], eps: float,
                       norm=Norm.LINF, timeout: float | None = 60.0) -> float:
    """Fraction of samples verified robust; misclassified, unknown and timed-out count as not verified."""
    spec = VerifierSpec.parse(spec)
    if not samples:
        return 0.0
    hits = sum(verify_instance(spec, net, s, eps, norm, timeout).status is Status.ROBUST for s in samples)
    return hits / len(samples)


def certified_radius(spec, net: Network, sample: LabeledSample, norm=Norm.LINF,
                     precision: float = 1e-3, timeout: float | None = 120.0,
                     cap: float = RADIUS_CAP) -> InstanceResult:
    """Binary search for the largest verified radius in ``[0, cap]``.

    The whole search shares one time budget; the best radius verified before
    it runs out is kept.
    """
    spec = VerifierSpec.parse(spec)
    if predict(net, sample.x) != sample.y:
        return InstanceResult(Status.NOT_ROBUST, 0.0, 0.0)
    budget = Deadline(timeout)
    t0 = time.perf_counter()
    lo, hi = 0.0, cap
    status = Status.ROBUST
    while hi - lo >= precision:
        if budget.expired():
            status = Status.TIMEOUT
            break
        mid = 0.5 * (lo + hi)
        problem = VerificationProblem(sample.x, sample.y, mid, norm)
        v, _ = run_verifier(spec, problem, net, budget.remaining() if timeout else None)
        if v.status is Status.TIMEOUT:
            status = Status.TIMEOUT
            break
        if v.robust:
            lo = mid
        else:
            hi = mid
    return InstanceResult(status, time.perf_counter() - t0, lo)


def avg_certified_radius(spec, net: Network, samples: Sequence[LabeledSample], norm=Norm.LINF,
                         precision: float = 1e-3, timeout: float | None = 120.0) -> float:
    if not samples:
        return 0.0
    return float(np.mean([certified_radius(spec, net, s, norm, precision, timeout).radius
                          for s in samples]))


def pgd_accuracy(net: Network, samples: Sequence[LabeledSample], eps: float, norm=Norm.LINF,
                 cfg: AttackConfig | None = None, seed: int = 0) -> float:
    """Fraction of samples correctly classified and not broken by PGD (an upper bound on robust accuracy)."""
    if not samples:
        return 0.0
    ok = 0
    for i, s in enumerate(samples):
        if predict(net, s.x) != s.y:
            continue
        c = cfg or AttackConfig(norm=norm)
        c = AttackConfig(c.steps, c.step_size, c.restarts, c.random_start, norm, seed + i, c.clip)
        ok += not pgd(net, s.x, s.y, eps, c).found
    return ok / len(samples)


def clean_accuracy(net: Network, samples: Sequence[LabeledSample]) -> float:
    if not samples:
        return 0.0
    return float(np.mean([predict(net, s.x) == s.y for s in samples]))


# ------------------------------------------------------------ full benchmark


@dataclass
class BenchmarkConfig:
    verifiers: list
    models: list
    dataset: str
    sample_count: int = 100
    eps: float = 2.0 / 255
    norm: Norm = Norm.LINF
    per_instance_timeout_s: float = 60.0
    radius_timeout_s: float = 120.0
    radius_precision: float = 1e-3
    compute_radius: bool = True
    seed: int = 0
    pgd_steps: int = 100
    pgd_restarts: int = 1
    record_timing: bool = True
    jobs: int = 1

    def __post_init__(self):
        self.verifiers = [VerifierSpec.parse(v) for v in self.verifiers]
        self.norm = Norm.parse(self.norm)
        if self.sample_count < 1:
            raise ValueError("sample_count must be positive")
        if self.per_instance_timeout_s <= 0 or self.radius_timeout_s <= 0:
            raise ValueError("timeouts must be positive")

    @classmethod
    def from_json(cls, path) -> "BenchmarkConfig":
        path = Path(path)
        data = json.loads(path.read_text())
        base = path.parent
        # relative paths in the config resolve against the config's directory
        data["models"] = [str(base / m) for m in data["models"]]
        data["dataset"] = str(base / data["dataset"])
        return cls(**data)


@dataclass
class ReportRow:
    model: str
    verifier: str
    eps: float
    norm: str
    certified_accuracy: float
    avg_radius: float | None = None
    mean_time_s: float | None = None
    timeouts: int = 0


@dataclass
class BenchmarkReport:
    rows: list
    sample_indices: list
    record_timing: bool = True

    def cell(self, model: str, verifier: str) -> ReportRow:
        for r in self.rows:
            if r.model == model and r.verifier == verifier:
                return r
        raise KeyError((model, verifier))

    @property
    def models(self) -> list[str]:
        return list(dict.fromkeys(r.model for r in self.rows))

    @property
    def verifiers(self) -> list[str]:
        return list(dict.fromkeys(r.verifier for r in self.rows))

    def sandwich_violations(self, slack: float = 0.0) -> list[str]:
        """Rows whose certified accuracy exceeds the PGD row, or PGD above clean."""
        bad = []
        for m in self.models:
            clean, attacked = self.cell(m, "clean").certified_accuracy, self.cell(m, "pgd").certified_accuracy
            if attacked > clean + slack:
                bad.append(f"{m}: pgd {attacked} > clean {clean}")
            for r in self.rows:
                if r.model == m and r.verifier not in ("clean", "pgd") and r.certified_accuracy > attacked + slack:
                    bad.append(f"{m}/{r.verifier}: certified {r.certified_accuracy} > pgd {attacked}")
        return bad

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([
                r.model, r.verifier, f"{r.eps:.6g}", r.norm, f"{r.certified_accuracy:.6f}",
                "" if r.avg_radius is None else f"{r.avg_radius:.6f}",
                "" if (r.mean_time_s is None or not self.record_timing) else f"{r.mean_time_s:.6f}",
                r.timeouts,
            ])
        return buf.getvalue()

    def to_table(self) -> str:
        return render_table(self.rows, self.record_timing)

    def write(self, out_dir) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path, txt_path = out / "report.csv", out / "report.txt"
        csv_path.write_text(self.to_csv())
        txt_path.write_text(self.to_table() + "\n")
        return csv_path, txt_path


def render_table(rows: Sequence[ReportRow], show_time: bool = True) -> str:
    """Verifiers as rows, models as columns; cells show certified accuracy (and radius)."""
    models = list(dict.fromkeys(r.model for r in rows))
    names = list(dict.fromkeys(r.verifier for r in rows))
    lookup = {(r.model, r.verifier): r for r in rows}

    def fmt(r: ReportRow | None) -> str:
        if r is None:
            return "-"
        s = f"{100 * r.certified_accuracy:.1f}%"
        if r.avg_radius is not None:
            s += f" r={r.avg_radius:.4f}"
        if show_time and r.mean_time_s is not None:
            s += f" t={r.mean_time_s:.3f}s"
        return s

    header = ["verifier"] + models
    body = [[v] + [fmt(lookup.get((m, v))) for m in models] for v in names]
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in [header] + body]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def read_report_csv(path) -> list[ReportRow]:
    rows = []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        for rec in reader:
            rows.append(ReportRow(
                rec["model"], rec["verifier"], float(rec["eps"]), rec["norm"],
                float(rec["certified_accuracy"]),
                float(rec["avg_radius"]) if rec["avg_radius"] else None,
                float(rec["mean_time_s"]) if rec["mean_time_s"] else None,
                int(rec["timeouts"]),
            ))
    return rows


def subsample(n: int, k: int, seed: int) -> list[int]:
    if k > n:
        raise ValueError(f"sample_count {k} exceeds dataset size {n}")
    rng = np.random.default_rng(seed)
    return sorted(int(i) for i in rng.choice(n, size=k, replace=False))


def _cell_task(args):
    spec, net, samples, cfg = args
    accs, times, timeouts, radii = [], [], 0, []
    for s in samples:
        r = verify_instance(spec, net, s, cfg.eps, cfg.norm, cfg.per_instance_timeout_s)
        accs.append(r.status is Status.ROBUST)
        times.append(r.seconds)
        timeouts += r.status is Status.TIMEOUT
        if cfg.compute_radius:
            radii.append(certified_radius(spec, net, s, cfg.norm, cfg.radius_precision,
                                          cfg.radius_timeout_s).radius)
    return (float(np.mean(accs)), float(np.mean(radii)) if radii else None,
            float(np.mean(times)), timeouts)


def run_benchmark(cfg: BenchmarkConfig, out_dir=None) -> BenchmarkReport:
    """Evaluate every (model, verifier) cell on one fixed subsample, plus clean and PGD rows."""
    nets = {}
    for path in cfg.models:
        try:
            nets[path] = load_network(path)
        except (OSError, ValueError) as exc:
            raise type(exc)(f"{path}: {exc}") from exc
    try:
        data = load_dataset(cfg.dataset)
    except (OSError, ValueError) as exc:
        raise type(exc)(f"{cfg.dataset}: {exc}") from exc
    idx = subsample(len(data), cfg.sample_count, cfg.seed)
    samples = [data[i] for i in idx]
    norm = cfg.norm.value

    tasks, keys = [], []
    for path, net in nets.items():
        for spec in cfg.verifiers:
            tasks.append((spec, net, samples, cfg))
            keys.append((path, spec.display))
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs) as pool:
            results = list(pool.map(_cell_task, tasks))
    else:
        results = [_cell_task(t) for t in tasks]
    cells = dict(zip(keys, results))

    rows = []
    attack = AttackConfig(steps=cfg.pgd_steps, restarts=cfg.pgd_restarts, norm=cfg.norm
                          if cfg.norm is not Norm.L1 else Norm.LINF, seed=cfg.seed)
    for path, net in nets.items():
        name = Path(path).stem
        rows.append(ReportRow(name, "clean", cfg.eps, norm, clean_accuracy(net, samples)))
        if cfg.norm is Norm.L1:
            pgd_acc = math.nan
        else:
            pgd_acc = pgd_accuracy(net, samples, cfg.eps, cfg.norm, attack, cfg.seed)
        rows.append(ReportRow(name, "pgd", cfg.eps, norm, pgd_acc))
        for spec in cfg.verifiers:
            acc, rad, t, to = cells[(path, spec.display)]
            rows.append(ReportRow(name, spec.display, cfg.eps, norm, acc, rad, t, to))
    report = BenchmarkReport(rows, idx, cfg.record_timing)
    if out_dir is not None:
        report.write(out_dir)
    return report
