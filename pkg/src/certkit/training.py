"""Desk-scale trainers: standard, IBP-robust and noise-augmented SGD.

Gradients are computed by hand-written reverse mode in float64; there is no
autodiff dependency.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .core import LabeledSample, Network
from .smoothing import SmoothingDistribution


class TrainMode(str, enum.Enum):
    STANDARD = "standard"
    IBP = "ibp"
    NOISE = "noise"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 0.1
    seed: int = 0
    eps_target: float = 0.0
    warmup_fraction: float = 0.5
    kappa: float = 0.5
    noise: SmoothingDistribution | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("epochs, batch_size and learning_rate must be positive")
        if self.eps_target < 0:
            raise ValueError("eps_target must be non-negative")
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError("kappa must lie in [0, 1]")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ValueError("warmup_fraction must lie in [0, 1]")


def init_network(sizes: Sequence[int], seed: int = 0) -> Network:
    """Uniform fan-in initialisation, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))`` for weights and biases."""
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        ws.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        bs.append(rng.uniform(-bound, bound, size=fan_out))
    return Network.from_weights(ws, bs)


def _params(net: Network):
    return [a.weights.copy() for a in net.affine_layers], [a.bias.copy() for a in net.affine_layers]


def _logsumexp(Z):
    m = Z.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(Z - m).sum(axis=1, keepdims=True)))[:, 0]


def _softmax(Z):
    e = np.exp(Z - Z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(Ws, bs, X, Y):
    """Mean cross-entropy and its gradients w.r.t. every weight and bias."""
    acts = [X]
    h = X
    for k, (W, b) in enumerate(zip(Ws, bs)):
        h = h @ W.T + b
        if k < len(Ws) - 1:
            acts.append(h)
            h = np.maximum(h, 0.0)
    B = X.shape[0]
    idx = np.arange(B)
    loss = float(np.mean(_logsumexp(h) - h[idx, Y]))
    g = _softmax(h)
    g[idx, Y] -= 1.0
    g /= B
    dWs, dbs = [None] * len(Ws), [None] * len(Ws)
    for k in range(len(Ws) - 1, -1, -1):
        inp = acts[0] if k == 0 else np.maximum(acts[k], 0.0)
        dWs[k] = g.T @ inp
        dbs[k] = g.sum(axis=0)
        if k:
            g = (g @ Ws[k]) * (acts[k] > 0)
    return loss, dWs, dbs


def ibp_cross_entropy(Ws, bs, X, Y, eps: float):
    """Cross-entropy of the interval worst-case logits, with gradients.

    Worst-case logit j is minus the lower bound of ``f_y - f_j``, bounded by
    the last-layer row difference applied to the penultimate box.
    Sign/ReLU selections are held fixed when differentiating.
    """
    B = X.shape[0]
    mu, r = X, np.full_like(X, eps)
    cache = []
    L = len(Ws)
    for k in range(L - 1):
        W, b = Ws[k], bs[k]
        mu_h, r_h = mu @ W.T + b, r @ np.abs(W).T
        lo, hi = mu_h - r_h, mu_h + r_h
        cache.append((mu, r, lo > 0, hi > 0))
        lo, hi = np.maximum(lo, 0.0), np.maximum(hi, 0.0)
        mu, r = (hi + lo) / 2, (hi - lo) / 2
    W, b = Ws[-1], bs[-1]
    D = W[Y][:, None, :] - W[None, :, :]          # B x C x h
    absD = np.abs(D)
    m = np.einsum("bch,bh->bc", D, mu) + (b[Y][:, None] - b[None, :]) - np.einsum("bch,bh->bc", absD, r)
    Z = -m
    loss = float(np.mean(_logsumexp(Z)))
    G = -_softmax(Z) / B                           # dloss/dm
    dD = G[:, :, None] * (mu[:, None, :] - np.sign(D) * r[:, None, :])
    dW = np.zeros_like(W)
    np.add.at(dW, Y, dD.sum(axis=1))
    dW -= dD.sum(axis=0)
    db = np.zeros_like(b)
    np.add.at(db, Y, G.sum(axis=1))
    db -= G.sum(axis=0)
    dmu = np.einsum("bc,bch->bh", G, D)
    dr = -np.einsum("bc,bch->bh", G, absD)

    dWs, dbs = [None] * L, [None] * L
    dWs[-1], dbs[-1] = dW, db
    for k in range(L - 2, -1, -1):
        mu_in, r_in, lo_pos, hi_pos = cache[k]
        dlo = (dmu - dr) / 2 * lo_pos
        dhi = (dmu + dr) / 2 * hi_pos
        dmu_h, dr_h = dlo + dhi, dhi - dlo
        Wk = Ws[k]
        dWs[k] = dmu_h.T @ mu_in + np.sign(Wk) * (dr_h.T @ r_in)
        dbs[k] = dmu_h.sum(axis=0)
        dmu, dr = dmu_h @ Wk, dr_h @ np.abs(Wk)
    return loss, dWs, dbs


def ibp_robust_loss(net: Network, X, Y, eps: float, kappa: float = 0.5):
    """``kappa * clean CE + (1 - kappa) * IBP worst-case CE`` and its parameter gradients.

    Returns ``(loss, weight_grads, bias_grads)`` with one entry per affine layer.
    """
    if eps < 0:
        raise ValueError("eps must be non-negative")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_1d(np.asarray(Y, dtype=np.int64))
    Ws, bs = _params(net)
    return _mixed_loss(Ws, bs, X, Y, eps, kappa)


def _mixed_loss(Ws, bs, X, Y, eps, kappa):
    lc, dWc, dbc = cross_entropy(Ws, bs, X, Y)
    if eps == 0:
        # zero-width box: the worst case is the clean point
        return lc, dWc, dbc
    lr, dWr, dbr = ibp_cross_entropy(Ws, bs, X, Y, eps)
    mix = lambda a, b: kappa * a + (1 - kappa) * b  # noqa: E731
    return mix(lc, lr), [mix(a, b) for a, b in zip(dWc, dWr)], [mix(a, b) for a, b in zip(dbc, dbr)]


def _arrays(data):
    if isinstance(data, tuple):
        return np.asarray(data[0], dtype=np.float64), np.asarray(data[1], dtype=np.int64)
    return np.array([s.x for s in data]), np.array([s.y for s in data], dtype=np.int64)


def _train(net: Network, data, cfg: TrainConfig, mode: TrainMode, history: list | None = None) -> Network:
    X, Y = _arrays(data)
    Ws, bs = _params(net)
    shuffle_seq, noise_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    noise_rng = np.random.default_rng(noise_seq)
    n = X.shape[0]
    steps_per_epoch = -(-n // cfg.batch_size)
    warm = cfg.warmup_fraction * cfg.epochs * steps_per_epoch
    step = 0
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = X[idx], Y[idx]
            if mode is TrainMode.IBP:
                frac = 1.0 if warm <= 0 else min(1.0, step / warm)
                loss, dWs, dbs = _mixed_loss(Ws, bs, xb, yb, frac * cfg.eps_target, cfg.kappa)
            else:
                if mode is TrainMode.NOISE and cfg.noise is not None:
                    xb = xb + cfg.noise.sample(noise_rng, xb.shape)
                loss, dWs, dbs = cross_entropy(Ws, bs, xb, yb)
            for k in range(len(Ws)):
                Ws[k] -= cfg.learning_rate * dWs[k]
                bs[k] -= cfg.learning_rate * dbs[k]
            total += loss * len(idx)
            step += 1
        if history is not None:
            history.append(total / n)
    return Network.from_weights(Ws, bs)


def train_standard(net: Network, data, cfg: TrainConfig, history: list | None = None) -> Network:
    """Mini-batch SGD on cross-entropy. `data` is a list of samples or an ``(X, Y)`` pair."""
    return _train(net, data, cfg, TrainMode.STANDARD, history)


def train_ibp(net: Network, data, cfg: TrainConfig, history: list | None = None) -> Network:
    """SGD on the mixed clean/IBP loss with a linear eps warm-up."""
    return _train(net, data, cfg, TrainMode.IBP, history)


def train_noise(net: Network, data, cfg: TrainConfig, history: list | None = None) -> Network:
    """SGD on inputs perturbed by fresh noise from ``cfg.noise`` every time they are drawn.

    With ``cfg.noise`` unset this is exactly `train_standard`.
    """
    return _train(net, data, cfg, TrainMode.NOISE, history)


def train(net: Network, data, cfg: TrainConfig, mode: TrainMode | str) -> Network:
    return _train(net, data, cfg, TrainMode(mode))


def make_gap_dataset(n: int, gap: float = 0.2, seed: int = 0, band: float = 0.3) -> list[LabeledSample]:
    """XOR quadrants in [0,1]^2 with an empty cross-shaped gap around the midlines.

    Every point lies at linf distance at least ``gap / 2`` (and at most
    ``gap / 2 + band``) from both lines ``x0 = 0.5`` and ``x1 = 0.5``; the
    label is 1 on the off-diagonal quadrants. Any ball of radius below
    ``gap / 2`` around a point therefore stays inside its quadrant.
    """
    rng = np.random.default_rng(seed)
    out: list[LabeledSample] = []
    while len(out) < n:
        x = rng.uniform(0.0, 1.0, size=2)
        d = np.abs(x - 0.5)
        if d.min() < gap / 2 or d.max() > gap / 2 + band:
            continue
        out.append(LabeledSample(x, int((x[0] > 0.5) ^ (x[1] > 0.5))))
    return out


def make_separable_dataset(n: int, gap: float = 0.1, seed: int = 0) -> list[LabeledSample]:
    """Two classes on either side of ``x0 = 0.5`` with a band of width `gap` between them."""
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, size=n)
    off = gap / 2 + rng.uniform(0.0, 0.5 - gap / 2, size=n)
    x0 = np.where(y == 1, 0.5 + off, 0.5 - off)
    x1 = rng.uniform(0.0, 1.0, size=n)
    return [LabeledSample(np.array([a, b]), int(c)) for a, b, c in zip(x0, x1, y)]


def make_rings_dataset(n: int, inner: float = 0.15, ring=(0.3, 0.45), seed: int = 0) -> list[LabeledSample]:
    """Class 0 in a disk of radius `inner` around (0.5, 0.5), class 1 in the annulus `ring`."""
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, size=n)
    r = np.where(y == 0, rng.uniform(0.0, inner, size=n), rng.uniform(ring[0], ring[1], size=n))
    t = rng.uniform(0.0, 2 * np.pi, size=n)
    X = 0.5 + r[:, None] * np.stack([np.cos(t), np.sin(t)], axis=1)
    return [LabeledSample(x, int(c)) for x, c in zip(X, y)]


def with_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    return replace(cfg, seed=seed)
