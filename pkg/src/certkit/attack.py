"""Projected gradient descent attack (linf / l2)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Network, Norm, backward_input, forward


@dataclass(frozen=True)
class AttackConfig:
    steps: int = 100
    step_size: float | None = None  # None -> eps / 50
    restarts: int = 1
    random_start: bool = True
    norm: Norm = Norm.LINF
    seed: int = 0
    clip: bool = False

    def __post_init__(self):
        object.__setattr__(self, "norm", Norm.parse(self.norm))
        if self.norm is Norm.L1:
            raise ValueError("PGD supports linf and l2 only")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError("step_size must be positive")


@dataclass
class AttackResult:
    found: bool
    adv: np.ndarray | None = None
    restart: int | None = None
    step: int | None = None


def _project(X, x0, eps, norm: Norm, clip: bool):
    if norm is Norm.LINF:
        X = np.clip(X, x0 - eps, x0 + eps)
    else:
        d = X - x0
        n = np.linalg.norm(d, axis=1, keepdims=True)
        scale = np.where(n > eps, eps / np.where(n > 0, n, 1.0), 1.0)
        X = x0 + d * scale
    if clip:
        X = np.clip(X, 0.0, 1.0)
    return X


def _random_starts(rng, x0, eps, norm: Norm, k: int):
    n = x0.shape[0]
    if norm is Norm.LINF:
        return x0 + rng.uniform(-eps, eps, size=(k, n))
    d = rng.normal(size=(k, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = eps * rng.uniform(size=(k, 1)) ** (1.0 / n)
    return x0 + d * r


def _loss_grad_logits(logits, y0: int, target: int | None):
    """d(loss)/d(logits) for the loss the attacker ascends."""
    if target is not None:
        g = np.zeros_like(logits)
        g[:, target] = 1.0
        g[:, y0] = -1.0
        return g
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    # 1 - p_y0 summed from the other classes so it does not cancel to zero
    rest = p.sum(axis=1) - p[:, y0]
    g = p.copy()
    g[:, y0] = -rest
    return g


def _misclassified(net, X, y0: int):
    logits = forward(net, X)
    return np.argmax(logits, axis=1) != y0


def pgd(net: Network, x0, y0: int, eps: float, cfg: AttackConfig = AttackConfig(),
        start=None, target: int | None = None) -> AttackResult:
    """Search the `eps`-ball around `x0` for an input not classified as `y0`.

    Ascends cross-entropy by default, or the logit gap ``f_target - f_y0`` when
    `target` is set. Restarts run in lockstep; the reported example is the
    first hit of the lowest-numbered restart that succeeded, exactly as if
    the restarts had run one after another. `start`, if given, replaces the
    initial point of restart 0.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x0 = np.asarray(x0, dtype=np.float64)
    norm = cfg.norm
    step = cfg.step_size if cfg.step_size is not None else eps / 50.0
    rng = np.random.default_rng(cfg.seed)
    k = cfg.restarts
    if cfg.random_start:
        X = _random_starts(rng, x0, eps, norm, k)
    else:
        X = np.tile(x0, (k, 1))
    if start is not None:
        X[0] = start
    X = _project(X, x0, eps, norm, cfg.clip)

    hit_step = np.full(k, -1)
    hit_x = np.zeros_like(X)

    def record(t):
        mis = _misclassified(net, X, y0) & (hit_step < 0)
        hit_step[mis] = t
        hit_x[mis] = X[mis]

    record(0)
    for t in range(1, cfg.steps + 1):
        if np.all(hit_step >= 0):
            break
        g = backward_input(net, X, _loss_grad_logits(forward(net, X), y0, target))
        if norm is Norm.LINF:
            d = np.sign(g)
        else:
            gn = np.linalg.norm(g, axis=1, keepdims=True)
            d = g / np.where(gn > 0, gn, 1.0)
        X = _project(X + step * d, x0, eps, norm, cfg.clip)
        record(t)

    found = np.flatnonzero(hit_step >= 0)
    if found.size == 0:
        return AttackResult(False)
    r = int(found[0])
    return AttackResult(True, hit_x[r].copy(), r, int(hit_step[r]))
