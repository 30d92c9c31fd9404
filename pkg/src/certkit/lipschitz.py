"""Global l2 Lipschitz certification from layer spectral norms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import TAU, Network, Norm, Status, VerificationProblem, Verdict, check_problem, forward


@dataclass
class LipschitzCertificate:
    global_L: float
    per_pair_L: np.ndarray  # [y0, y'] -> Lipschitz bound of f_y0 - f_y'
    certified_radius: float


def spectral_norm(W, iters: int = 200, tol: float = 1e-10, seed: int = 0) -> float:
    """Largest singular value of `W` by power iteration on ``W^T W``."""
    W = np.asarray(W, dtype=np.float64)
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if not np.any(W):
        return 0.0
    v = np.random.default_rng(seed).normal(size=W.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(iters):
        w = W.T @ (W @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # start vector in the null space; restart from a basis direction
            v = np.eye(W.shape[1])[int(np.argmax(np.linalg.norm(W, axis=0)))]
            continue
        v = w / nw
        new = float(np.linalg.norm(W @ v))
        if abs(new - sigma) <= tol * new:
            sigma = new
            break
        sigma = new
    return sigma


def lipschitz_certificate(net: Network, x0, y0: int, iters: int = 200, tol: float = 1e-10) -> LipschitzCertificate:
    weights = net.weights
    hidden = float(np.prod([spectral_norm(W, iters, tol) for W in weights[:-1]]))
    global_L = hidden * spectral_norm(weights[-1], iters, tol)
    Wl = weights[-1]
    diffs = Wl[:, None, :] - Wl[None, :, :]
    per_pair = np.linalg.norm(diffs, axis=2) * hidden
    logits = forward(net, x0)
    radius = np.inf
    for y in range(net.num_classes):
        if y == y0:
            continue
        gap = logits[y0] - logits[y]
        L = per_pair[y0, y]
        if gap <= 0:
            r = 0.0
        elif L == 0:
            r = np.inf
        else:
            r = gap / L
        radius = min(radius, r)
    return LipschitzCertificate(global_L, per_pair, float(max(radius, 0.0)))


def lipschitz_verify(problem: VerificationProblem, net: Network, tau: float = TAU, **_) -> Verdict:
    """Certify an l2 ball using the margin-over-Lipschitz-bound radius."""
    check_problem(problem, net)
    if problem.norm is not Norm.L2:
        raise ValueError("Lipschitz verification certifies l2 balls only")
    cert = lipschitz_certificate(net, problem.x0, problem.y0)
    ok = problem.eps < cert.certified_radius - tau
    logits = forward(net, problem.x0)
    margins = {
        y: float(logits[problem.y0] - logits[y] - problem.eps * cert.per_pair_L[problem.y0, y])
        for y in range(net.num_classes) if y != problem.y0
    }
    return Verdict(Status.ROBUST if ok else Status.UNKNOWN, margins,
                   info={"verifier": "lipschitz", "radius": cert.certified_radius})
