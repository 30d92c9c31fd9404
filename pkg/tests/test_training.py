import numpy as np
import pytest

from certkit.core import VerificationProblem, random_network
from certkit.interval import ibp_verify
from certkit.smoothing import SmoothingDistribution, sample_counts
from certkit.training import (
    TrainConfig,
    cross_entropy,
    ibp_robust_loss,
    init_network,
    make_gap_dataset,
    make_rings_dataset,
    make_separable_dataset,
    train,
    train_ibp,
    train_noise,
    train_standard,
)
from suite import gradient_relative_error


def _batch(seed, n=6, dim=3, classes=3):
    rng = np.random.default_rng(seed)
    return rng.uniform(size=(n, dim)), rng.integers(0, classes, size=n)


def test_eps_zero_equals_clean_cross_entropy():
    net = random_network([3, 6, 5, 3], np.random.default_rng(0))
    X, Y = _batch(0)
    clean = cross_entropy(net.weights, net.biases, X, Y)[0]
    for kappa in (0.0, 0.5, 1.0):
        assert abs(ibp_robust_loss(net, X, Y, 0.0, kappa)[0] - clean) <= 1e-12


def test_clean_ce_matches_direct_formula():
    net = random_network([3, 4, 3], np.random.default_rng(1))
    X, Y = _batch(1)
    from certkit.core import forward

    Z = forward(net, X)
    direct = np.mean(np.log(np.exp(Z).sum(axis=1)) - Z[np.arange(len(Y)), Y])
    assert cross_entropy(net.weights, net.biases, X, Y)[0] == pytest.approx(direct, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("kappa", [0.0, 0.5])
def test_loss_gradient_matches_finite_differences(seed, kappa):
    net = random_network([3, 5, 4, 3], np.random.default_rng(seed))
    X, Y = _batch(seed, n=1)
    assert gradient_relative_error(net, X, Y, 0.05, kappa) < 1e-4


def test_loss_non_decreasing_in_eps():
    net = random_network([2, 8, 8, 2], np.random.default_rng(2))
    X, Y = _batch(2, n=20, dim=2, classes=2)
    losses = [ibp_robust_loss(net, X, Y, e, 0.0)[0] for e in np.linspace(0, 0.3, 20)]
    assert all(b >= a - 1e-12 for a, b in zip(losses, losses[1:]))


def test_negative_eps_rejected():
    net = random_network([2, 3, 2], np.random.default_rng(0))
    with pytest.raises(ValueError):
        ibp_robust_loss(net, [[0.5, 0.5]], [0], -0.1)


@pytest.mark.parametrize("bad", [dict(epochs=0), dict(learning_rate=0.0), dict(kappa=1.5), dict(eps_target=-1.0)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


def _accuracy(net, data):
    from certkit.core import predict

    return np.mean([predict(net, s.x) == s.y for s in data])


def test_separable_toy_reaches_99_percent():
    data = make_separable_dataset(200, seed=0)
    net = train_standard(init_network([2, 16, 2], 0), data, TrainConfig(epochs=50))
    assert _accuracy(net, data) >= 0.99


def test_loss_decreases_over_first_epochs():
    data = make_separable_dataset(200, seed=1)
    hist = []
    train_standard(init_network([2, 16, 2], 1), data, TrainConfig(epochs=5), history=hist)
    assert all(b < a for a, b in zip(hist, hist[1:]))


@pytest.mark.parametrize("mode", ["standard", "ibp", "noise"])
def test_deterministic_under_seed(mode):
    data = make_separable_dataset(64, seed=2)
    cfg = TrainConfig(epochs=3, seed=5, eps_target=0.05, noise=SmoothingDistribution.gaussian(0.25))
    a = train(init_network([2, 8, 2], 0), data, cfg, mode)
    b = train(init_network([2, 8, 2], 0), data, cfg, mode)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.weights + a.biases, b.weights + b.biases))


def test_ibp_with_zero_target_is_standard():
    data = make_separable_dataset(64, seed=3)
    cfg = TrainConfig(epochs=4, seed=1)
    a = train_ibp(init_network([2, 8, 2], 0), data, cfg)
    b = train_standard(init_network([2, 8, 2], 0), data, cfg)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.weights + a.biases, b.weights + b.biases))


def test_noise_without_distribution_is_standard():
    data = make_separable_dataset(64, seed=3)
    cfg = TrainConfig(epochs=4, seed=1)
    a = train_noise(init_network([2, 8, 2], 0), data, cfg)
    b = train_standard(init_network([2, 8, 2], 0), data, cfg)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.weights + a.biases, b.weights + b.biases))


def test_noise_changes_weights_but_not_shuffle_order():
    # with noise, the trajectory differs, but the shuffle stream is shared
    data = make_separable_dataset(64, seed=3)
    cfg = TrainConfig(epochs=2, seed=1, noise=SmoothingDistribution.gaussian(0.25))
    a = train_noise(init_network([2, 8, 2], 0), data, cfg)
    b = train_standard(init_network([2, 8, 2], 0), data, cfg)
    assert not np.array_equal(a.weights[0], b.weights[0])


def test_gap_dataset_respects_gap():
    data = make_gap_dataset(500, gap=0.2, seed=0)
    X = np.array([s.x for s in data])
    assert np.all(np.abs(X - 0.5).min(axis=1) >= 0.1)
    assert {s.y for s in data} == {0, 1}


def _ibp_cert_acc(net, data, eps):
    return np.mean([ibp_verify(VerificationProblem(s.x, s.y, eps), net).robust for s in data])


@pytest.fixture(scope="module")
def gap_pair():
    train_set, test_set = make_gap_dataset(400, seed=0), make_gap_dataset(200, seed=100)
    cfg = TrainConfig(epochs=100, seed=0, eps_target=0.05)
    sizes = [2, 64, 64, 64, 2]
    std = train_standard(init_network(sizes, 0), train_set, cfg)
    ibp = train_ibp(init_network(sizes, 0), train_set, cfg)
    return _ibp_cert_acc(std, test_set, 0.05), _ibp_cert_acc(ibp, test_set, 0.05)


def test_ibp_training_certifies_at_quarter_gap(gap_pair):
    assert gap_pair[1] >= 0.9


def test_ibp_training_beats_standard(gap_pair):
    assert gap_pair[1] - gap_pair[0] >= 0.3


@pytest.mark.xfail(strict=True, reason="standard nets keep about 30% IBP-certified accuracy on this set: "
                   "points far from both midlines are certified even without robust training")
def test_standard_training_certifies_almost_nothing(gap_pair):
    assert gap_pair[0] <= 0.1


def test_noise_training_improves_smoothed_accuracy():
    dist = SmoothingDistribution.gaussian(0.25)
    sizes = [2, 32, 32, 2]
    train_set, test_set = make_rings_dataset(400, seed=0), make_rings_dataset(200, seed=100)
    std = train_standard(init_network(sizes, 0), train_set, TrainConfig(epochs=150, seed=0))
    noisy = train_noise(init_network(sizes, 0), train_set, TrainConfig(epochs=150, seed=0, noise=dist))

    def smoothed_acc(net):
        return np.mean([np.argmax(sample_counts(net, s.x, dist, 500, seed=i)) == s.y
                        for i, s in enumerate(test_set)])

    assert smoothed_acc(noisy) > smoothed_acc(std)
