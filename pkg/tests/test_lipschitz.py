import numpy as np
import pytest

from certkit.core import Network, Status, VerificationProblem, forward, predict, random_network
from certkit.lipschitz import lipschitz_certificate, lipschitz_verify, spectral_norm


def test_identity():
    assert spectral_norm(np.eye(3)) == pytest.approx(1.0, abs=1e-12)


def test_diagonal():
    assert spectral_norm(np.diag([3.0, 1.0])) == pytest.approx(3.0, abs=1e-12)


def test_zero_matrix():
    assert spectral_norm(np.zeros((2, 3))) == 0.0


@pytest.mark.parametrize("seed", range(10))
def test_matches_svd(seed):
    W = np.random.default_rng(seed).normal(size=(5, 4))
    assert spectral_norm(W) == pytest.approx(np.linalg.svd(W, compute_uv=False)[0], abs=1e-8)


def test_deterministic():
    W = np.random.default_rng(0).normal(size=(6, 6))
    assert spectral_norm(W) == spectral_norm(W)


def test_single_layer_radius_is_exact():
    W = np.array([[1.0, 2.0], [-1.0, 0.5], [0.0, 0.0]])
    b = np.array([0.5, 0.0, 0.1])
    net = Network.from_weights([W], [b])
    x0 = np.array([0.5, 0.5])
    f = forward(net, x0)
    expected = min((f[0] - f[y]) / np.linalg.norm(W[0] - W[y]) for y in (1, 2))
    assert lipschitz_certificate(net, x0, 0).certified_radius == pytest.approx(expected, rel=1e-12)


def test_zero_margin_gives_zero_radius():
    net = Network.from_weights([np.zeros((2, 2))], [[1.0, 1.0]])
    cert = lipschitz_certificate(net, [0.5, 0.5], 0)
    assert cert.certified_radius == 0.0
    assert lipschitz_verify(VerificationProblem([0.5, 0.5], 0, 0.0, "l2"), net).status is not Status.ROBUST


@pytest.mark.parametrize("seed", range(3))
def test_pair_constants_hold_on_random_pairs(seed):
    rng = np.random.default_rng(seed)
    net = random_network([3, 10, 10, 4], rng, 2.0)
    cert = lipschitz_certificate(net, rng.uniform(size=3), 0)
    X1, X2 = rng.uniform(size=(10_000, 3)), rng.uniform(size=(10_000, 3))
    F1, F2 = forward(net, X1), forward(net, X2)
    dist = np.linalg.norm(X1 - X2, axis=1)
    for a in range(4):
        for c in range(4):
            g = np.abs((F1[:, a] - F1[:, c]) - (F2[:, a] - F2[:, c]))
            assert np.all(g <= cert.per_pair_L[a, c] * dist + 1e-12)
    assert np.all(np.abs(F1 - F2).max(axis=1) <= cert.global_L * dist + 1e-12)


@pytest.mark.parametrize("s", [1.5, 3.0])
def test_scaling_a_layer_scales_the_constant(s):
    rng = np.random.default_rng(4)
    net = random_network([3, 6, 2], rng)
    Ws, bs = net.weights, net.biases
    scaled = Network.from_weights([Ws[0] * s, Ws[1]], [bs[0] * s, bs[1]])
    a = lipschitz_certificate(net, [0.5] * 3, 0).global_L
    b = lipschitz_certificate(scaled, [0.5] * 3, 0).global_L
    assert b == pytest.approx(s * a, rel=1e-10)


@pytest.mark.parametrize("seed", range(4))
def test_radius_below_empirical_l2_radius(seed):
    rng = np.random.default_rng(50 + seed)
    net = random_network([2, 8, 8, 2], rng, 2.0)
    x0 = rng.uniform(size=2)
    y0 = predict(net, x0)
    r = lipschitz_certificate(net, x0, y0).certified_radius
    g = np.linspace(-3, 3, 601)
    pts = x0 + np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
    wrong = np.argmax(forward(net, pts), axis=1) != y0
    if wrong.any():
        assert r <= np.min(np.linalg.norm(pts[wrong] - x0, axis=1))


def test_verify_requires_l2():
    net = random_network([2, 3, 2], np.random.default_rng(0))
    with pytest.raises(ValueError):
        lipschitz_verify(VerificationProblem([0.5, 0.5], 0, 0.1), net)


def test_verify_threshold():
    net = Network.from_weights([[[1.0, 0.0], [0.0, 0.0]]], [[0.0, 0.0]])
    x0 = [0.5, 0.5]  # radius 0.5
    assert lipschitz_verify(VerificationProblem(x0, 0, 0.49, "l2"), net).robust
    assert not lipschitz_verify(VerificationProblem(x0, 0, 0.5, "l2"), net).robust
