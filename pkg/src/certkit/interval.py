"""Interval bound propagation (IBP)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    NO_DEADLINE,
    TAU,
    Affine,
    Deadline,
    DimensionError,
    Network,
    VerificationProblem,
    Verdict,
    check_problem,
    margin_verdict,
)


@dataclass(frozen=True, eq=False)
class LayerBounds:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64)
        hi = np.asarray(self.upper, dtype=np.float64)
        if lo.shape != hi.shape:
            raise DimensionError("lower and upper bounds differ in shape")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def relu(self) -> "LayerBounds":
        return LayerBounds(np.maximum(self.lower, 0.0), np.maximum(self.upper, 0.0))

    def contains(self, z, slack: float = 0.0) -> bool:
        z = np.asarray(z)
        return bool(np.all(z >= self.lower - slack) and np.all(z <= self.upper + slack))

    @property
    def unstable(self) -> np.ndarray:
        return (self.lower < 0) & (self.upper > 0)


@dataclass
class IntervalResult:
    pre: list  # LayerBounds of every hidden pre-activation
    output: LayerBounds


def affine_box(W: np.ndarray, b: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    Wp, Wn = np.maximum(W, 0.0), np.minimum(W, 0.0)
    return Wp @ lo + Wn @ hi + b, Wp @ hi + Wn @ lo + b


def apply_splits(bounds: LayerBounds, layer: int, splits) -> LayerBounds:
    """Tighten pre-activation bounds of `layer` with branch decisions.

    `splits` maps ``(layer, neuron)`` to ``+1`` (forced active) or ``-1``
    (forced inactive). The result may be empty (lower > upper).
    """
    if not splits:
        return bounds
    lo, hi = bounds.lower.copy(), bounds.upper.copy()
    for (k, j), s in splits.items():
        if k != layer:
            continue
        if s > 0:
            lo[j] = max(lo[j], 0.0)
        else:
            hi[j] = min(hi[j], 0.0)
    return LayerBounds(lo, hi)


def ibp_propagate(net: Network, input_lower, input_upper, splits=None,
                  deadline: Deadline = NO_DEADLINE) -> IntervalResult:
    lo = np.asarray(input_lower, dtype=np.float64)
    hi = np.asarray(input_upper, dtype=np.float64)
    if lo.shape != (net.input_dim,) or hi.shape != (net.input_dim,):
        raise DimensionError(f"input box must have dimension {net.input_dim}")
    if np.any(lo > hi):
        raise ValueError("input_lower must not exceed input_upper")
    affines = net.affine_layers
    pre = []
    for k, a in enumerate(affines[:-1]):
        deadline.check()
        b = apply_splits(LayerBounds(*affine_box(a.weights, a.bias, lo, hi)), k, splits)
        pre.append(b)
        lo, hi = np.maximum(b.lower, 0.0), np.maximum(b.upper, 0.0)
    last = affines[-1]
    return IntervalResult(pre, LayerBounds(*affine_box(last.weights, last.bias, lo, hi)))


def last_hidden_box(net: Network, pre: list, input_lower, input_upper):
    """Box on the input of the final affine layer."""
    if not pre:
        return np.asarray(input_lower, float), np.asarray(input_upper, float)
    return np.maximum(pre[-1].lower, 0.0), np.maximum(pre[-1].upper, 0.0)


def margin_lower_bounds(last: Affine, y0: int, lo: np.ndarray, hi: np.ndarray) -> dict:
    """Lower bounds of ``f_y0 - f_y'`` given a box on the last layer's input.

    Uses the row difference ``W_y0 - W_y'`` so correlations between the two
    logits are kept.
    """
    out = {}
    for y in range(last.out_dim):
        if y == y0:
            continue
        dw = last.weights[y0] - last.weights[y]
        db = last.bias[y0] - last.bias[y]
        out[y] = float(np.maximum(dw, 0) @ lo + np.minimum(dw, 0) @ hi + db)
    return out


def ibp_verify(problem: VerificationProblem, net: Network, clip: bool = False,
               tau: float = TAU, deadline: Deadline = NO_DEADLINE) -> Verdict:
    """Certify with interval arithmetic on the box enclosing the ball.

    The box is exact for linf and a sound over-approximation for l2/l1.
    """
    check_problem(problem, net)
    lo, hi = problem.box(clip=clip)
    res = ibp_propagate(net, lo, hi, deadline=deadline)
    plo, phi = last_hidden_box(net, res.pre, lo, hi)
    margins = margin_lower_bounds(net.affine_layers[-1], problem.y0, plo, phi)
    return margin_verdict(margins, tau, verifier="ibp")
