"""Polyhedra abstraction: linear ReLU relaxations propagated backward (CROWN/DeepPoly style)."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Union

import numpy as np

from .core import (
    NO_DEADLINE,
    TAU,
    Deadline,
    Network,
    VerificationProblem,
    Verdict,
    check_problem,
    margin_verdict,
)
from .interval import LayerBounds, apply_splits, ibp_propagate


class RelaxMode(str, enum.Enum):
    PARALLEL = "parallel"
    ADAPTIVE = "adaptive"


RelaxSpec = Union[RelaxMode, str, float]


class BoundSource(str, enum.Enum):
    INTERVAL = "interval"
    POLYHEDRA = "polyhedra"


@dataclass(frozen=True)
class ReluRelaxation:
    lower_slope: float
    lower_intercept: float
    upper_slope: float
    upper_intercept: float


@dataclass(frozen=True, eq=False)
class LinearFunctionBounds:
    """``L x + b_L <= z(x) <= U x + b_U`` over the input region."""

    L: np.ndarray
    b_L: np.ndarray
    U: np.ndarray
    b_U: np.ndarray


def _parse_relax(mode: RelaxSpec):
    if isinstance(mode, (int, float)) and not isinstance(mode, bool):
        lam = float(mode)
        if not 0.0 <= lam <= 1.0:
            raise ValueError(f"fixed lower slope must lie in [0, 1], got {lam}")
        return lam
    return RelaxMode(mode)


def relax_layer(lower, upper, mode: RelaxSpec = RelaxMode.ADAPTIVE):
    """Vectorised ReLU relaxation; returns (lower_slope, lower_int, upper_slope, upper_int)."""
    l = np.asarray(lower, dtype=np.float64)
    u = np.asarray(upper, dtype=np.float64)
    if np.any(l > u):
        raise ValueError("relaxation requires lower <= upper")
    mode = _parse_relax(mode)
    active = l >= 0
    unstable = (l < 0) & (u > 0)
    width = np.where(unstable, u - l, 1.0)
    s = np.where(unstable, u / width, 0.0)

    us = np.where(active, 1.0, s)
    ui = np.where(unstable, -s * l, 0.0)
    if isinstance(mode, float):
        lam = np.full_like(l, mode)
    elif mode is RelaxMode.PARALLEL:
        lam = s
    else:
        lam = np.where(u >= -l, 1.0, 0.0)
    ls = np.where(active, 1.0, np.where(unstable, lam, 0.0))
    li = np.zeros_like(l)
    return ls, li, us, ui


def relu_relax(l: float, u: float, mode: RelaxSpec = RelaxMode.ADAPTIVE) -> ReluRelaxation:
    if l > u:
        raise ValueError(f"relaxation requires l <= u, got l={l}, u={u}")
    ls, li, us, ui = relax_layer([l], [u], mode)
    return ReluRelaxation(float(ls[0]), float(li[0]), float(us[0]), float(ui[0]))


def _backward(affines, pre, C, c0, relax: RelaxSpec, best_of_depth: bool):
    """Push the objectives ``C @ out + c0`` back to an affine function of the input.

    `affines` ends with the layer whose output is the objective's variable;
    `pre` holds pre-activation bounds of every earlier hidden layer. Returns
    the input-space coefficients, offsets and, when `best_of_depth` is set,
    the best lower bound obtained by concretising against the intermediate
    boxes along the way (-inf otherwise).
    """
    A = np.asarray(C, dtype=np.float64)
    a0 = np.asarray(c0, dtype=np.float64).copy()
    best = np.full(A.shape[0], -np.inf)
    last = affines[-1]
    a0 = a0 + A @ last.bias
    A = A @ last.weights
    for k in range(len(affines) - 2, -1, -1):
        b = pre[k]
        if best_of_depth:
            lo, hi = np.maximum(b.lower, 0.0), np.maximum(b.upper, 0.0)
            best = np.maximum(best, np.maximum(A, 0) @ lo + np.minimum(A, 0) @ hi + a0)
        ls, li, us, ui = relax_layer(b.lower, b.upper, relax)
        pos = A >= 0
        slope = np.where(pos, ls, us)
        inter = np.where(pos, li, ui)
        a0 = a0 + np.sum(A * inter, axis=1)
        A = A * slope
        if best_of_depth:
            best = np.maximum(best, np.maximum(A, 0) @ b.lower + np.minimum(A, 0) @ b.upper + a0)
        a0 = a0 + A @ affines[k].bias
        A = A @ affines[k].weights
    return A, a0, best


def _concretize(A, a0, problem: VerificationProblem):
    """Lower bound of ``A x + a0`` over the ball (and its enclosing box)."""
    q = problem.norm.dual_ord
    ball = A @ problem.x0 + a0 - problem.eps * np.linalg.norm(A, ord=q, axis=1)
    lo, hi = problem.box()
    box = np.maximum(A, 0) @ lo + np.minimum(A, 0) @ hi + a0
    return np.maximum(ball, box)


def preactivation_bounds(problem: VerificationProblem, net: Network,
                         method: BoundSource | str = BoundSource.POLYHEDRA,
                         relax: RelaxSpec = RelaxMode.ADAPTIVE, splits=None,
                         deadline: Deadline = NO_DEADLINE) -> list[LayerBounds]:
    """Bounds on every hidden pre-activation over the problem's region.

    Branch `splits` (see `interval.apply_splits`) tighten each layer as soon
    as it is computed, so later layers see the restricted domain.
    """
    check_problem(problem, net)
    method = BoundSource(method)
    lo, hi = problem.box()
    if method is BoundSource.INTERVAL:
        return ibp_propagate(net, lo, hi, splits=splits, deadline=deadline).pre
    affines = net.affine_layers
    pre: list[LayerBounds] = []
    for k in range(len(affines) - 1):
        deadline.check()
        if pre and np.any(pre[-1].lower > pre[-1].upper):
            # empty branch: later bounds are meaningless, propagate emptiness
            m = affines[k].out_dim
            pre.append(LayerBounds(np.full(m, np.inf), np.full(m, -np.inf)))
            continue
        m = affines[k].out_dim
        eye = np.eye(m)
        C = np.vstack([eye, -eye])
        A, a0, best = _backward(affines[: k + 1], pre, C, np.zeros(2 * m), relax, True)
        vals = np.maximum(_concretize(A, a0, problem), best)
        l, u = vals[:m], -vals[m:]
        # on a degenerate region l and u may cross by rounding; emptiness only comes from splits
        b = LayerBounds(np.minimum(l, u), np.maximum(l, u))
        pre.append(apply_splits(b, k, splits))
    return pre


def linear_function_bounds(problem: VerificationProblem, net: Network, layer: int | None = None,
                           relax: RelaxSpec = RelaxMode.ADAPTIVE,
                           preact: list[LayerBounds] | None = None) -> LinearFunctionBounds:
    """Affine-in-input lower/upper bounds on a hidden pre-activation layer or the logits."""
    affines = net.affine_layers
    if layer is None:
        layer = len(affines) - 1
    if preact is None:
        preact = preactivation_bounds(problem, net, relax=relax)
    m = affines[layer].out_dim
    eye = np.eye(m)
    A, a0, _ = _backward(affines[: layer + 1], preact, np.vstack([eye, -eye]),
                         np.zeros(2 * m), relax, False)
    return LinearFunctionBounds(A[:m], a0[:m], -A[m:], -a0[m:])


def backward_lower_bound(net: Network, problem: VerificationProblem, c, c0: float = 0.0,
                         relax: RelaxSpec = RelaxMode.ADAPTIVE,
                         preact: list[LayerBounds] | None = None) -> float:
    """Lower bound of ``min_{x in ball} c . f(x) + c0``."""
    c = np.asarray(c, dtype=np.float64)[None, :]
    return float(_objective_bounds(net, problem, c, np.array([c0]), relax, preact)[0])


def _objective_bounds(net, problem, C, c0, relax, preact, deadline=NO_DEADLINE):
    if preact is None:
        preact = preactivation_bounds(problem, net, relax=relax, deadline=deadline)
    deadline.check()
    A, a0, best = _backward(net.affine_layers, preact, C, c0, relax, True)
    return np.maximum(_concretize(A, a0, problem), best)


def margin_objectives(num_classes: int, y0: int):
    others = [y for y in range(num_classes) if y != y0]
    C = np.zeros((len(others), num_classes))
    C[:, y0] = 1.0
    C[np.arange(len(others)), others] = -1.0
    return others, C


def crown_verify(problem: VerificationProblem, net: Network,
                 relax: RelaxSpec = RelaxMode.ADAPTIVE,
                 bound_source: BoundSource | str = BoundSource.POLYHEDRA,
                 preact: list[LayerBounds] | None = None, tau: float = TAU,
                 deadline: Deadline = NO_DEADLINE) -> Verdict:
    check_problem(problem, net)
    if preact is None:
        preact = preactivation_bounds(problem, net, bound_source, relax, deadline=deadline)
    others, C = margin_objectives(net.num_classes, problem.y0)
    vals = _objective_bounds(net, problem, C, np.zeros(len(others)), relax, preact, deadline)
    return margin_verdict(dict(zip(others, map(float, vals))), tau, verifier="crown")

