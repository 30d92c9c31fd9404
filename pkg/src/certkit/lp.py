"""Dense two-phase simplex solver and the LP-full (triangle relaxation) verifier."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .core import (
    NO_DEADLINE,
    TAU,
    Deadline,
    Network,
    Norm,
    Status,
    VerificationProblem,
    Verdict,
    check_problem,
    margin_verdict,
)
from .interval import LayerBounds

DEFAULT_TOL = 1e-9
MAX_ITERATIONS = 50_000


class LPStalled(RuntimeError):
    """The pivot budget ran out before the simplex method terminated."""


class LPStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass
class LinearProgram:
    """minimize ``c . x`` subject to ``A x <= b`` and ``lo <= x <= hi``."""

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    lo: np.ndarray = None
    hi: np.ndarray = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=np.float64)
        n = self.c.shape[0]
        self.A = np.asarray(self.A, dtype=np.float64).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if self.A.shape[0] != self.b.shape[0]:
            raise ValueError(f"A has {self.A.shape[0]} rows but b has {self.b.shape[0]} entries")
        self.lo = np.full(n, -np.inf) if self.lo is None else np.asarray(self.lo, dtype=np.float64)
        self.hi = np.full(n, np.inf) if self.hi is None else np.asarray(self.hi, dtype=np.float64)
        if self.lo.shape != (n,) or self.hi.shape != (n,):
            raise ValueError("variable bounds must match the objective dimension")
        if not np.all(np.isfinite(self.c)):
            raise ValueError("objective coefficients must be finite")

    @property
    def num_vars(self) -> int:
        return self.c.shape[0]

    def violation(self, x) -> float:
        x = np.asarray(x)
        rows = np.max(self.A @ x - self.b, initial=0.0)
        return float(max(rows, np.max(self.lo - x, initial=0.0), np.max(x - self.hi, initial=0.0)))


@dataclass
class LPResult:
    status: LPStatus
    x: np.ndarray | None = None
    value: float | None = None
    iterations: int = 0


def _pivot(T: np.ndarray, basis: list, r: int, col: int) -> None:
    T[r] /= T[r, col]
    factors = T[:, col].copy()
    factors[r] = 0.0
    T -= np.outer(factors, T[r])
    basis[r] = col


def _run_simplex(T, basis, ncols, tol, budget):
    """Bland's-rule simplex on tableau `T` whose last row is the reduced-cost row.

    Only the first `ncols` columns may enter. Returns (unbounded, iterations).
    """
    m = T.shape[0] - 1
    it = 0
    while True:
        cost = T[-1, :ncols]
        candidates = np.flatnonzero(cost < -tol)
        if candidates.size == 0:
            return False, it
        if it >= budget:
            raise LPStalled(f"simplex exceeded {budget} pivots")
        col = int(candidates[0])
        column = T[:m, col]
        pos = column > tol
        if not pos.any():
            return True, it
        ratios = np.full(m, np.inf)
        ratios[pos] = T[:m, -1][pos] / column[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + tol * max(1.0, abs(best)))
        r = int(min(ties, key=lambda i: basis[i]))
        _pivot(T, basis, r, col)
        it += 1


def simplex_solve(lp: LinearProgram, tol: float = DEFAULT_TOL,
                  max_iter: int = MAX_ITERATIONS) -> LPResult:
    """Solve `lp` with the two-phase dense tableau method and Bland's pivot rule.

    Raises `LPStalled` if `max_iter` pivots do not suffice.
    """
    n = lp.num_vars
    lo, hi = lp.lo, lp.hi
    # substitute x = T y + d with y >= 0
    cols, d = [], np.zeros(n)
    extra_rows, extra_rhs = [], []
    for j in range(n):
        if np.isfinite(lo[j]):
            d[j] = lo[j]
            cols.append((j, 1.0))
            if np.isfinite(hi[j]):
                if hi[j] < lo[j]:
                    return LPResult(LPStatus.INFEASIBLE)
                extra_rows.append(len(cols) - 1)
                extra_rhs.append(hi[j] - lo[j])
        elif np.isfinite(hi[j]):
            d[j] = hi[j]
            cols.append((j, -1.0))
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))
    ny = len(cols)
    Tm = np.zeros((n, ny))
    for k, (j, s) in enumerate(cols):
        Tm[j, k] = s
    G = lp.A @ Tm
    h = lp.b - lp.A @ d
    if extra_rows:
        E = np.zeros((len(extra_rows), ny))
        E[np.arange(len(extra_rows)), extra_rows] = 1.0
        G = np.vstack([G, E])
        h = np.concatenate([h, extra_rhs])
    cost = lp.c @ Tm

    m = G.shape[0]
    neg = h < 0
    sign = np.where(neg, -1.0, 1.0)
    n_art = int(neg.sum())
    width = ny + m + n_art
    T = np.zeros((m + 1, width + 1))
    T[:m, :ny] = G * sign[:, None]
    T[:m, ny:ny + m] = np.diag(sign)
    T[:m, -1] = h * sign
    basis = []
    a = ny + m
    for i in range(m):
        if neg[i]:
            T[i, a] = 1.0
            basis.append(a)
            a += 1
        else:
            basis.append(ny + i)

    iterations = 0
    if n_art:
        T[-1, ny + m:width] = 1.0
        for i in range(m):
            if neg[i]:
                T[-1] -= T[i]
        _, it = _run_simplex(T, basis, width, tol, max_iter)
        iterations += it
        if -T[-1, -1] > tol * max(1.0, np.abs(h).max()):
            return LPResult(LPStatus.INFEASIBLE, iterations=iterations)
        # drive artificial variables out of the basis, dropping redundant rows
        keep = []
        for i in range(m):
            if basis[i] >= ny + m:
                row = T[i, : ny + m]
                nz = np.flatnonzero(np.abs(row) > tol)
                if nz.size:
                    _pivot(T, basis, i, int(nz[0]))
                    keep.append(i)
            else:
                keep.append(i)
        T = np.vstack([T[keep], T[-1:]])
        basis = [basis[i] for i in keep]
        T = np.delete(T, np.s_[ny + m:width], axis=1)
        m = len(keep)

    T[-1] = 0.0
    T[-1, :ny] = cost
    for i, bvar in enumerate(basis):
        if T[-1, bvar] != 0.0:
            T[-1] -= T[-1, bvar] * T[i]
    unbounded, it = _run_simplex(T, basis, ny + m, tol, max_iter - iterations)
    iterations += it
    if unbounded:
        return LPResult(LPStatus.UNBOUNDED, iterations=iterations)
    y = np.zeros(T.shape[1] - 1)
    for i, bvar in enumerate(basis):
        y[bvar] = T[i, -1]
    x = Tm @ y[:ny] + d
    return LPResult(LPStatus.OPTIMAL, x, float(lp.c @ x), iterations)


# ------------------------------------------------------------ LP-full encoding


@dataclass
class NetworkLP:
    """Constraint set for the triangle relaxation of a network over an linf box.

    Variables are the input followed by the post-activation of every hidden
    neuron; pre-activations are substituted out.
    """

    A: np.ndarray
    b: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    input_dim: int
    # (first variable index, width) of each hidden layer
    offsets: list = field(default_factory=list)
    empty: bool = False

    def objective_for(self, net: Network, c: np.ndarray):
        """Coefficient vector and constant for ``c . f(x)``."""
        last = net.affine_layers[-1]
        coef = np.zeros(self.A.shape[1])
        start, width = self.offsets[-1] if self.offsets else (0, self.input_dim)
        coef[start:start + width] = c @ last.weights
        return coef, float(c @ last.bias)


def build_network_lp(problem: VerificationProblem, net: Network,
                     preact: list[LayerBounds]) -> NetworkLP:
    if problem.norm is not Norm.LINF:
        raise ValueError("LP-full encodes linf balls only")
    n = net.input_dim
    affines = net.affine_layers
    widths = [a.out_dim for a in affines[:-1]]
    nv = n + sum(widths)
    lo, hi = np.empty(nv), np.empty(nv)
    lo[:n], hi[:n] = problem.box()
    rows, rhs = [], []
    offsets = []
    prev = (0, n)
    start = n
    empty = False
    for k, a in enumerate(affines[:-1]):
        m = a.out_dim
        bl, bu = preact[k].lower, preact[k].upper
        if np.any(bl > bu):
            empty = True
        for j in range(m):
            # pre-activation e = W_j . prev + b_j
            e = np.zeros(nv)
            e[prev[0]:prev[0] + prev[1]] = a.weights[j]
            bj = a.bias[j]
            l, u = bl[j], bu[j]
            zi = start + j
            # l <= e <= u
            rows.append(e.copy()); rhs.append(u - bj)
            rows.append(-e); rhs.append(bj - l)
            if l >= 0:
                lo[zi], hi[zi] = max(l, 0.0), max(u, 0.0)
                r = e.copy(); r[zi] -= 1.0
                rows.append(r); rhs.append(-bj)
                rows.append(-r); rhs.append(bj)
            elif u <= 0:
                lo[zi] = hi[zi] = 0.0
            else:
                s = u / (u - l)
                lo[zi], hi[zi] = 0.0, u
                r = e.copy(); r[zi] -= 1.0          # e - z <= 0
                rows.append(r); rhs.append(-bj)
                r = -s * e; r[zi] += 1.0            # z - s e <= s (b_j - l)
                rows.append(r); rhs.append(s * (bj - l))
        offsets.append((start, m))
        prev = (start, m)
        start += m
    A = np.array(rows) if rows else np.zeros((0, nv))
    return NetworkLP(A, np.array(rhs), lo, hi, n, offsets, empty)


def solve_margin_lps(problem: VerificationProblem, net: Network, preact: list[LayerBounds],
                     deadline: Deadline = NO_DEADLINE, tol: float = DEFAULT_TOL, classes=None):
    """Minimise ``f_y0 - f_y'`` over the relaxation for every competitor class.

    Returns ``{y': LPResult}`` where an optimal result's value already
    includes the objective constant.
    """
    enc = build_network_lp(problem, net, preact)
    out = {}
    if classes is None:
        classes = [y for y in range(net.num_classes) if y != problem.y0]
    for y in classes:
        deadline.check()
        if enc.empty:
            out[y] = LPResult(LPStatus.INFEASIBLE)
            continue
        c = np.zeros(net.num_classes)
        c[problem.y0], c[y] = 1.0, -1.0
        coef, const = enc.objective_for(net, c)
        res = simplex_solve(LinearProgram(coef, enc.A, enc.b, enc.lo, enc.hi), tol)
        if res.status is LPStatus.OPTIMAL:
            res.value += const
            res.x = res.x[: net.input_dim]
        out[y] = res
    return out


def lp_full_verify(problem: VerificationProblem, net: Network,
                   preact: list[LayerBounds] | None = None, tau: float = TAU,
                   deadline: Deadline = NO_DEADLINE) -> Verdict:
    """Certify by solving the triangle-relaxation LP for each competitor class."""
    from .linear import preactivation_bounds

    check_problem(problem, net)
    if preact is None:
        preact = preactivation_bounds(problem, net, deadline=deadline)
    try:
        results = solve_margin_lps(problem, net, preact, deadline)
    except LPStalled as exc:
        return Verdict(Status.UNKNOWN, info={"verifier": "lpfull", "diagnostic": str(exc)})
    margins, diag = {}, {}
    for y, res in results.items():
        if res.status is LPStatus.OPTIMAL:
            margins[y] = res.value
        else:
            # the region always contains x0, so anything else is numerical trouble
            margins[y] = -np.inf
            diag[y] = res.status.value
    v = margin_verdict(margins, tau, verifier="lpfull")
    if diag:
        v.info["diagnostic"] = diag
    return v
