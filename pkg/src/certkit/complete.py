"""Complete verification: branch-and-bound on ReLU phases, plus a brute-force oracle."""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field

import numpy as np

from .attack import AttackConfig, pgd
from .core import (
    TAU,
    Deadline,
    Network,
    Norm,
    Status,
    VerificationProblem,
    VerifierTimeout,
    check_problem,
    predict,
)
from .interval import ibp_propagate, last_hidden_box, margin_lower_bounds
from .linear import BoundSource, RelaxMode, _objective_bounds, preactivation_bounds
from .lp import LinearProgram, LPStalled, LPStatus, simplex_solve, solve_margin_lps

ACTIVE, INACTIVE = 1, -1


class Bounding(str, enum.Enum):
    INTERVAL = "interval"
    POLYHEDRA = "polyhedra"
    LPFULL = "lpfull"

    @classmethod
    def parse(cls, value) -> "Bounding":
        # "crown" is accepted as the CLI spelling of polyhedra bounding
        return cls.POLYHEDRA if value == "crown" else cls(value)


@dataclass(frozen=True)
class BabConfig:
    timeout_s: float | None = 60.0
    bounding: Bounding = Bounding.POLYHEDRA
    branch_rule: str = "largest_gap"
    relax: RelaxMode = RelaxMode.ADAPTIVE
    pgd_steps: int = 20
    tau: float = TAU
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "bounding", Bounding.parse(self.bounding))
        if self.branch_rule not in BRANCH_RULES:
            raise ValueError(f"unknown branch rule {self.branch_rule!r}")


@dataclass
class CompleteVerdict:
    status: Status  # ROBUST, NOT_ROBUST, TIMEOUT, or UNKNOWN (margin inside the tau band)
    counterexample: np.ndarray | None = None
    branches_explored: int = 0
    wall_time: float = 0.0
    margins: dict = field(default_factory=dict)

    @property
    def robust(self) -> bool:
        return self.status is Status.ROBUST


def _largest_gap(pre, splits):
    best, pick = -1.0, None
    for k, b in enumerate(pre):
        gap = np.where(b.unstable, b.upper - b.lower, -1.0)
        for (kk, j) in splits:
            if kk == k:
                gap[j] = -1.0
        j = int(np.argmax(gap))
        if gap[j] > best:
            best, pick = gap[j], (k, j)
    return pick if best > 0 else None


def _first_unstable(pre, splits):
    for k, b in enumerate(pre):
        for j in np.flatnonzero(b.unstable):
            if (k, int(j)) not in splits:
                return (k, int(j))
    return None


BRANCH_RULES = {"largest_gap": _largest_gap, "first": _first_unstable}


def _branch_bounds(problem, net, splits, cfg: BabConfig, deadline):
    if cfg.bounding is Bounding.INTERVAL:
        lo, hi = problem.box()
        return ibp_propagate(net, lo, hi, splits=splits, deadline=deadline).pre
    return preactivation_bounds(problem, net, BoundSource.POLYHEDRA, cfg.relax, splits, deadline)


def _class_lower_bound(problem, net, pre, y, cfg: BabConfig, deadline):
    """(lower bound on f_y0 - f_y over the branch, candidate point or None)."""
    if cfg.bounding is Bounding.INTERVAL:
        lo, hi = problem.box()
        plo, phi = last_hidden_box(net, pre, lo, hi)
        return margin_lower_bounds(net.affine_layers[-1], problem.y0, plo, phi)[y], None
    if cfg.bounding is Bounding.POLYHEDRA:
        c = np.zeros((1, net.num_classes))
        c[0, problem.y0], c[0, y] = 1.0, -1.0
        return float(_objective_bounds(net, problem, c, np.zeros(1), cfg.relax, pre, deadline)[0]), None
    res = solve_margin_lps(problem, net, pre, deadline, classes=[y])[y]
    if res.status is LPStatus.INFEASIBLE:
        return np.inf, None
    return res.value, res.x


def _counterexample(problem, net, y, start, cfg: BabConfig):
    lo, hi = problem.box()
    if start is not None:
        x = np.clip(start, lo, hi)
        if predict(net, x) != problem.y0:
            return x
    if problem.eps == 0:
        return None
    res = pgd(net, problem.x0, problem.y0, problem.eps,
              AttackConfig(steps=cfg.pgd_steps, step_size=2.5 * problem.eps / cfg.pgd_steps,
                           random_start=False, seed=cfg.seed),
              start=start, target=y)
    if res.found:
        x = np.clip(res.adv, lo, hi)
        if predict(net, x) != problem.y0:
            return x
    return None


def bab_verify(problem: VerificationProblem, net: Network, cfg: BabConfig = BabConfig()) -> CompleteVerdict:
    """Depth-first branch-and-bound over ReLU phase splits, one search per competitor class."""
    check_problem(problem, net)
    if problem.norm is not Norm.LINF:
        raise ValueError("branch-and-bound is implemented for linf balls only")
    t0 = time.monotonic()
    deadline = Deadline(cfg.timeout_s)
    choose = BRANCH_RULES[cfg.branch_rule]
    branches = 0
    indeterminate = False
    margins: dict = {}

    def done(status, cex=None):
        return CompleteVerdict(status, cex, branches, time.monotonic() - t0, margins)

    # the clean point itself
    if predict(net, problem.x0) != problem.y0:
        return done(Status.NOT_ROBUST, problem.x0.copy())

    try:
        for y in range(net.num_classes):
            if y == problem.y0:
                continue
            stack = [{}]
            class_min = np.inf
            while stack:
                deadline.check()
                splits = stack.pop()
                branches += 1
                pre = _branch_bounds(problem, net, splits, cfg, deadline)
                if any(np.any(b.lower > b.upper) for b in pre):
                    continue
                lb, point = _class_lower_bound(problem, net, pre, y, cfg, deadline)
                if lb > cfg.tau:
                    class_min = min(class_min, lb)
                    continue
                cex = _counterexample(problem, net, y, point, cfg)
                if cex is not None:
                    return done(Status.NOT_ROBUST, cex)
                neuron = choose(pre, splits)
                if neuron is None:
                    # every neuron has a fixed phase: the LP is exact on this branch
                    deadline.check()
                    res = solve_margin_lps(problem, net, pre, deadline, classes=[y])[y]
                    if res.status is LPStatus.INFEASIBLE:
                        continue
                    if res.value > cfg.tau:
                        class_min = min(class_min, res.value)
                        continue
                    cex = _counterexample(problem, net, y, res.x, cfg)
                    if cex is not None:
                        return done(Status.NOT_ROBUST, cex)
                    indeterminate = True
                    class_min = min(class_min, res.value)
                    continue
                stack.append({**splits, neuron: ACTIVE})
                stack.append({**splits, neuron: INACTIVE})
            margins[y] = class_min
    except VerifierTimeout:
        return done(Status.TIMEOUT)
    except LPStalled:
        return done(Status.UNKNOWN)
    return done(Status.UNKNOWN if indeterminate else Status.ROBUST)


# ------------------------------------------------------------------ oracle


@dataclass
class BruteForceResult:
    margins: dict  # competitor class -> exact minimum of f_y0 - f_y'
    argmins: dict
    patterns: int

    @property
    def min_margin(self) -> float:
        return min(self.margins.values())


def brute_force_margin(problem: VerificationProblem, net: Network,
                       max_unstable: int = 16) -> BruteForceResult:
    """Exact ``min f_y0 - f_y'`` over the linf ball by enumerating activation patterns.

    Neurons whose sign is fixed over the input box (by interval bounds) are
    not branched on. Partial patterns are pruned as soon as their region is
    empty, so only realisable patterns reach the final LPs.
    """
    check_problem(problem, net)
    if problem.norm is not Norm.LINF:
        raise ValueError("brute force supports linf balls only")
    lo, hi = problem.box()
    pre = ibp_propagate(net, lo, hi).pre
    n_unstable = int(sum(b.unstable.sum() for b in pre))
    if n_unstable > max_unstable:
        raise ValueError(f"{n_unstable} unstable neurons exceeds the enumeration limit {max_unstable}")
    affines = net.affine_layers
    n = net.input_dim
    others = [y for y in range(net.num_classes) if y != problem.y0]
    best = {y: np.inf for y in others}
    argmin: dict = {y: None for y in others}
    leaves = 0

    def feasible(rows, rhs):
        if not rows:
            return True
        res = simplex_solve(LinearProgram(np.zeros(n), np.array(rows), np.array(rhs), lo, hi))
        return res.status is LPStatus.OPTIMAL

    def leaf(A, c, rows, rhs):
        nonlocal leaves
        leaves += 1
        for y in others:
            obj = A[problem.y0] - A[y]
            const = c[problem.y0] - c[y]
            res = simplex_solve(LinearProgram(obj, np.array(rows).reshape(-1, n),
                                              np.array(rhs), lo, hi))
            if res.status is LPStatus.OPTIMAL and res.value + const < best[y]:
                best[y] = res.value + const
                argmin[y] = res.x

    def walk(k, j, A, c, mask, rows, rhs):
        # A x + c is the output of affine layer k (the logits for the last one);
        # mask holds the phases decided so far for layer k
        if k == len(affines) - 1:
            leaf(A, c, rows, rhs)
            return
        if j == A.shape[0]:
            Az = A * mask[:, None]
            cz = c * mask
            nxt = affines[k + 1]
            walk(k + 1, 0, nxt.weights @ Az, nxt.weights @ cz + nxt.bias,
                 np.zeros(nxt.out_dim), rows, rhs)
            return
        l, u = pre[k].lower[j], pre[k].upper[j]
        if l >= 0 or u <= 0:
            m = mask.copy()
            m[j] = 1.0 if l >= 0 else 0.0
            walk(k, j + 1, A, c, m, rows, rhs)
            return
        for phase in (0.0, 1.0):
            # inactive: A_j x + c_j <= 0 ; active: -(A_j x + c_j) <= 0
            s = 1.0 if phase == 0.0 else -1.0
            r2, h2 = rows + [s * A[j]], rhs + [-s * c[j]]
            if feasible(r2, h2):
                m = mask.copy()
                m[j] = phase
                walk(k, j + 1, A, c, m, r2, h2)

    first = affines[0]
    walk(0, 0, first.weights.copy(), first.bias.copy(), np.zeros(first.out_dim), [], [])
    return BruteForceResult(best, argmin, leaves)
