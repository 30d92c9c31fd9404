import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import binom

from certkit.core import Network
from certkit.smoothing import (
    ABSTAIN,
    SmoothingDistribution,
    binom_lower_confidence,
    certify,
    certify_gaussian_l2,
    certify_laplace_l1,
    convert_l2_to_linf,
    normal_cdf,
    normal_ppf,
    predict_smooth,
    sample_counts,
)
from suite import normal_ppf_bisect


def constant_net(cls=0, classes=3, dim=2):
    b = np.zeros(classes)
    b[cls] = 1.0
    return Network.from_weights([np.zeros((classes, dim))], [b])


def halfspace_net(w, b):
    """Class 0 iff w.x - b > 0."""
    w = np.asarray(w, dtype=float)
    return Network.from_weights([np.vstack([w, -w])], [[-b, b]])


def erf_cdf(x):
    return 0.5 * (1 + math.erf(x / math.sqrt(2)))


# ------------------------------------------------------------ quantiles


@pytest.mark.parametrize("p", [1e-10, 1e-4, 0.01, 0.3, 0.5, 0.7, 0.9, 0.999, 1 - 1e-8])
def test_normal_ppf_matches_erf_bisection(p):
    assert normal_ppf(p) == pytest.approx(normal_ppf_bisect(p), abs=1e-9)


def test_normal_cdf_inverts_ppf():
    for p in np.linspace(0.01, 0.99, 50):
        assert normal_cdf(normal_ppf(p)) == pytest.approx(p, abs=1e-12)


# ------------------------------------------------------------ confidence bounds


def test_cp_zero_successes():
    assert binom_lower_confidence(0, 50, 0.001) == 0.0


def test_cp_all_successes_closed_form():
    assert binom_lower_confidence(100, 100, 0.001) == pytest.approx(0.001 ** (1 / 100), abs=1e-12)
    assert binom_lower_confidence(100, 100, 0.001) == pytest.approx(0.93325, abs=1e-5)


@pytest.mark.parametrize("k,n", [(900, 1000), (55, 100), (9990, 10000), (1, 20), (7, 7)])
def test_cp_tail_equals_alpha(k, n):
    p = binom_lower_confidence(k, n, 0.001)
    # P[Bin(n, p) >= k] == alpha at the bound
    assert binom.sf(k - 1, n, p) == pytest.approx(0.001, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 2000), st.floats(0.0, 1.0), st.sampled_from([0.001, 0.01, 0.05]))
def test_cp_below_empirical_rate(n, frac, alpha):
    k = int(round(frac * n))
    assert binom_lower_confidence(k, n, alpha) <= k / n + 1e-15


# ------------------------------------------------------------ radii


def test_gaussian_radius_at_half_is_zero():
    assert certify_gaussian_l2(0.5, 1.0) == 0.0


def test_gaussian_radius_example():
    r = certify_gaussian_l2(0.999, 0.5)
    assert r == pytest.approx(0.5 * normal_ppf_bisect(0.999), abs=1e-9)
    assert r == pytest.approx(1.5451, abs=1e-4)


def _np_radius(pA, sigma):
    """Solve Phi(Phi^-1(pA) - r/sigma) = 1/2 for r by bisection."""
    q = normal_ppf_bisect(pA)
    lo, hi = 0.0, 100.0 * sigma
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if erf_cdf(q - mid / sigma) > 0.5:
            lo = mid
        else:
            hi = mid
    return lo


@pytest.mark.parametrize("pA", [0.51, 0.6, 0.75, 0.9, 0.99, 0.999, 0.99999])
@pytest.mark.parametrize("sigma", [0.12, 0.5, 1.0])
def test_gaussian_radius_matches_neyman_pearson(pA, sigma):
    assert certify_gaussian_l2(pA, sigma) == pytest.approx(_np_radius(pA, sigma), abs=1e-6)


def test_radius_rejects_invalid_probability():
    with pytest.raises(ValueError):
        certify_gaussian_l2(1.2, 1.0)
    with pytest.raises(ValueError):
        certify_laplace_l1(-0.1, 1.0)


def _laplace_cdf(x, lam):
    return 0.5 * math.exp(x / lam) if x < 0 else 1 - 0.5 * math.exp(-x / lam)


def _laplace_shift_radius(pA, lam):
    """Largest single-coordinate shift keeping the worst-case set above 1/2.

    The worst set of mass pA is a lower half-line (-inf, t]; after shifting
    by delta its mass is F(t - delta).
    """
    lo, hi = -100 * lam, 100 * lam
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if _laplace_cdf(mid, lam) < pA else (lo, mid)
    t = lo
    lo, hi = 0.0, 200 * lam
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if _laplace_cdf(t - mid, lam) > 0.5 else (lo, mid)
    return lo


def test_laplace_radius_example():
    assert certify_laplace_l1(0.75, 1.0) == pytest.approx(math.log(2), abs=1e-12)
    assert certify_laplace_l1(0.5, 1.0) == 0.0


@pytest.mark.parametrize("pA", [0.55, 0.75, 0.9, 0.999])
@pytest.mark.parametrize("lam", [0.25, 1.0])
def test_laplace_radius_matches_shift_oracle(pA, lam):
    assert certify_laplace_l1(pA, lam) == pytest.approx(_laplace_shift_radius(pA, lam), abs=1e-6)


def test_radii_monotone_in_probability():
    grid = np.linspace(0.5, 0.9999, 100)
    lap = [certify_laplace_l1(p, 1.0) for p in grid]
    gau = [certify_gaussian_l2(p, 1.0) for p in grid]
    assert all(np.diff(lap) > 0) and all(np.diff(gau) > 0)


@pytest.mark.parametrize("r,d,expected", [(1.0, 1, 1.0), (1.0, 4, 0.5), (1.5451, 784, 0.05518)])
def test_l2_to_linf(r, d, expected):
    assert convert_l2_to_linf(r, d) == pytest.approx(expected, abs=1e-5)


# ------------------------------------------------------------ sampling


def test_constant_classifier_counts():
    assert sample_counts(constant_net(1), [0.5, 0.5], SmoothingDistribution.gaussian(1.0), 500).tolist() == [0, 500, 0]


def test_single_sample_is_one_hot():
    c = sample_counts(constant_net(2), [0.5, 0.5], SmoothingDistribution.laplace(0.3), 1)
    assert c.sum() == 1 and c.max() == 1


@pytest.mark.parametrize("sigma", [0.25, 1.0])
def test_halfspace_counts_match_projection(sigma):
    w, b = np.array([1.0, -2.0]), 0.1
    x0 = np.array([0.6, 0.1])
    net = halfspace_net(w, b)
    n = 100_000
    c = sample_counts(net, x0, SmoothingDistribution.gaussian(sigma), n, seed=3)
    p = erf_cdf((w @ x0 - b) / (sigma * np.linalg.norm(w)))
    assert abs(c[0] / n - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_sampling_deterministic():
    net = halfspace_net([1.0, 1.0], 1.0)
    d = SmoothingDistribution.gaussian(0.5)
    assert np.array_equal(sample_counts(net, [0.4, 0.7], d, 3000, seed=9),
                          sample_counts(net, [0.4, 0.7], d, 3000, seed=9))


def test_batching_does_not_change_counts():
    net = halfspace_net([1.0, 1.0], 1.0)
    d = SmoothingDistribution.gaussian(0.5)
    a = sample_counts(net, [0.4, 0.7], d, 3000, seed=9, batch_size=3000)
    b = sample_counts(net, [0.4, 0.7], d, 3000, seed=9, batch_size=700)
    assert np.array_equal(a, b)


def test_distribution_requires_positive_scale():
    with pytest.raises(ValueError):
        SmoothingDistribution.gaussian(0.0)


# ------------------------------------------------------------ prediction / certification


def test_constant_classifier_never_abstains_at_log2_samples():
    n = math.ceil(math.log2(1 / 0.001))
    for seed in range(5):
        assert predict_smooth(constant_net(2), [0.1, 0.2], SmoothingDistribution.gaussian(1.0), n, 0.001, seed) == 2


def test_balanced_counts_abstain():
    # halfspace through x0: each class wins half the time in expectation
    net = halfspace_net([1.0, 0.0], 0.5)
    abstains = sum(
        predict_smooth(net, [0.5, 0.5], SmoothingDistribution.gaussian(1.0), 1000, 0.001, seed) == ABSTAIN
        for seed in range(100)
    )
    assert abstains >= 97


def test_certify_constant_classifier():
    cert = certify(constant_net(0), [0.5, 0.5], SmoothingDistribution.gaussian(0.5), n0=100, n=100, alpha=0.001)
    assert cert.predicted == 0
    assert cert.pA_lower == pytest.approx(0.001 ** (1 / 100), abs=1e-12)
    assert cert.radius_l2 == pytest.approx(0.5 * normal_ppf_bisect(0.001 ** (1 / 100)), abs=1e-9)
    assert cert.radius_linf == cert.radius_l2 / math.sqrt(2)


def test_certify_laplace_radii():
    cert = certify(constant_net(1, dim=4), [0.5] * 4, SmoothingDistribution.laplace(1.0), n0=50, n=1000)
    assert cert.radius_l1 == pytest.approx(certify_laplace_l1(cert.pA_lower, 1.0))
    assert cert.radius_linf == pytest.approx(cert.radius_l2 / 2)


def test_certify_abstains_with_zero_radii():
    net = halfspace_net([1.0, 0.0], 0.5)
    cert = certify(net, [0.5, 0.5], SmoothingDistribution.gaussian(1.0), n0=100, n=1000)
    assert cert.abstained
    assert cert.radius_l2 == cert.radius_l1 == cert.radius_linf == 0.0


def test_certify_deterministic():
    net = halfspace_net([1.0, 0.5], 0.2)
    d = SmoothingDistribution.gaussian(0.5)
    assert certify(net, [0.6, 0.4], d, 200, 2000, seed=4) == certify(net, [0.6, 0.4], d, 200, 2000, seed=4)


def test_certify_records_other_class():
    cert = certify(constant_net(2), [0.5, 0.5], SmoothingDistribution.gaussian(1.0), 100, 100)
    assert cert.predicted == 2


def test_uniform_noise_has_no_radius():
    with pytest.raises(ValueError):
        certify(constant_net(0), [0.5, 0.5], SmoothingDistribution.uniform(0.5), 10, 10)


def test_small_coverage_run():
    # true p = 0.9 for sigma = 1; certified radius should rarely exceed Phi^-1(0.9)
    w = np.array([1.0, 0.0])
    q = normal_ppf_bisect(0.9)
    net = halfspace_net(w, 0.0)
    truth = q
    over = sum(certify(net, [q, 0.0], SmoothingDistribution.gaussian(1.0), 100, 2000, 0.01, seed=s).radius_l2 > truth
               for s in range(100))
    assert over <= 5
