"""Randomised instance generators and independent oracles shared by the tests."""

import itertools

import numpy as np

from certkit.core import Network, VerificationProblem, predict, random_network
from certkit.interval import ibp_propagate


def one_d_net():
    """h = relu(x); logits [2h - 0.25, 0.25]. Margin of class 0 is 2 relu(x) - 0.5."""
    return Network.from_weights([[[1.0]], [[2.0], [0.0]]], [[0.0], [-0.25, 0.25]])


def linear_net(w, b=0.0):
    """Single affine layer with logits [w.x + b, 0]."""
    w = np.asarray(w, dtype=float)
    return Network.from_weights([np.vstack([w, np.zeros_like(w)])], [[b, 0.0]])


def unstable_count(problem, net):
    lo, hi = problem.box()
    return int(sum(b.unstable.sum() for b in ibp_propagate(net, lo, hi).pre))


def random_instances(count, seed, max_unstable=12, input_dims=(2, 3), widths=(3, 4, 5, 6),
                     classes=(2, 3), eps_range=(0.01, 0.3), scale=2.0):
    """Yield ``(net, problem)`` pairs: 2 hidden layers, clean-correct x0, bounded unstable count."""
    rng = np.random.default_rng(seed)
    made = 0
    while made < count:
        n = int(rng.choice(input_dims))
        sizes = [n, int(rng.choice(widths)), int(rng.choice(widths)), int(rng.choice(classes))]
        net = random_network(sizes, rng, scale)
        x0 = rng.uniform(0, 1, n)
        eps = float(rng.uniform(*eps_range))
        problem = VerificationProblem(x0, predict(net, x0), eps)
        if unstable_count(problem, net) > max_unstable:
            continue
        made += 1
        yield net, problem


def straight_line_logits(net, x):
    """Forward pass written out with explicit loops, independent of numpy matmul."""
    z = [float(v) for v in x]
    for layer in net.layers:
        if hasattr(layer, "weights"):
            W, b = layer.weights, layer.bias
            z = [sum(W[i][j] * z[j] for j in range(len(z))) + b[i] for i in range(len(b))]
        else:
            z = [v if v > 0 else 0.0 for v in z]
    return np.array(z)


def sample_ball(problem, k, rng):
    """k points uniformly from the linf box / l2 ball around x0 (box corners included)."""
    n = problem.x0.shape[0]
    if problem.norm.value == "linf":
        pts = problem.x0 + rng.uniform(-problem.eps, problem.eps, size=(k, n))
        corners = np.array(list(itertools.product([-1.0, 1.0], repeat=n)))[: k // 10]
        pts[: len(corners)] = problem.x0 + problem.eps * corners
        return pts
    d = rng.normal(size=(k, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    if problem.norm.value == "l2":
        r = problem.eps * rng.uniform(size=(k, 1)) ** (1 / n)
        return problem.x0 + d * r
    # l1: scaled points on the simplex with random signs
    e = rng.exponential(size=(k, n))
    e /= e.sum(axis=1, keepdims=True)
    return problem.x0 + problem.eps * e * rng.choice([-1.0, 1.0], size=(k, n)) * rng.uniform(size=(k, 1))


def grid_margin(net, problem, per_axis=401):
    """Minimum margin over a dense grid of the linf box (1-D/2-D inputs)."""
    n = problem.x0.shape[0]
    axes = [np.linspace(problem.x0[i] - problem.eps, problem.x0[i] + problem.eps, per_axis) for i in range(n)]
    pts = np.array(list(itertools.product(*axes)))
    logits = net_forward(net, pts)
    y0 = problem.y0
    others = np.delete(logits, y0, axis=1)
    return float(np.min(logits[:, y0][:, None] - others))


def net_forward(net, X):
    from certkit.core import forward
    return forward(net, X)


def normal_ppf_bisect(p, iters=200):
    """Phi^{-1}(p) by bisection on math.erf."""
    import math

    lo, hi = -40.0, 40.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if 0.5 * math.erfc(-mid / math.sqrt(2)) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def loss_fd_gradient(net, X, Y, eps, kappa, h=1e-6):
    """Central finite differences of ibp_robust_loss w.r.t. every weight and bias."""
    from certkit.core import Network
    from certkit.training import ibp_robust_loss

    Ws = [W.copy() for W in net.weights]
    bs = [b.copy() for b in net.biases]

    def loss():
        return ibp_robust_loss(Network.from_weights(Ws, bs), X, Y, eps, kappa)[0]

    out = []
    for P in Ws + bs:
        G = np.zeros_like(P)
        for i in np.ndindex(P.shape):
            old = P[i]
            P[i] = old + h
            up = loss()
            P[i] = old - h
            down = loss()
            P[i] = old
            G[i] = (up - down) / (2 * h)
        out.append(G)
    return out


def gradient_relative_error(net, X, Y, eps, kappa):
    from certkit.training import ibp_robust_loss

    _, dWs, dbs = ibp_robust_loss(net, X, Y, eps, kappa)
    an = np.concatenate([g.ravel() for g in dWs + dbs])
    fd = np.concatenate([g.ravel() for g in loss_fd_gradient(net, X, Y, eps, kappa)])
    return float(np.linalg.norm(an - fd) / max(np.linalg.norm(fd), 1e-12))


def balanced_network(sizes, rng, scale=2.0):
    """Random network whose 2-class decision boundary cuts through the unit cube."""
    from certkit.core import forward

    net = random_network(sizes, rng, scale)
    F = forward(net, rng.uniform(size=(2000, sizes[0])))
    bs = [b.copy() for b in net.biases]
    bs[-1][0] -= float(np.median(F[:, 0] - F[:, 1]))
    return Network.from_weights(net.weights, bs)
