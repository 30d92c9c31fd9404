"""Randomized smoothing: Monte-Carlo counts, exact binomial bounds, certified radii."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .core import Network, forward

ABSTAIN = -1


class NoiseKind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    LAPLACE = "laplace"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class SmoothingDistribution:
    """Additive i.i.d. per-coordinate noise.

    `scale` is the standard deviation for Gaussian noise, the Laplace scale
    parameter, or the half-width of the uniform support.
    """

    kind: NoiseKind
    scale: float

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        if not self.scale > 0:
            raise ValueError(f"noise scale must be positive, got {self.scale}")

    @classmethod
    def gaussian(cls, sigma: float):
        return cls(NoiseKind.GAUSSIAN, sigma)

    @classmethod
    def laplace(cls, lam: float):
        return cls(NoiseKind.LAPLACE, lam)

    @classmethod
    def uniform(cls, half_width: float):
        return cls(NoiseKind.UNIFORM, half_width)

    def sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        if self.kind is NoiseKind.GAUSSIAN:
            return rng.normal(0.0, self.scale, size=shape)
        if self.kind is NoiseKind.LAPLACE:
            return rng.laplace(0.0, self.scale, size=shape)
        return rng.uniform(-self.scale, self.scale, size=shape)


@dataclass(frozen=True)
class SmoothCertificate:
    predicted: int  # ABSTAIN (-1) when the test cannot separate the top class
    pA_lower: float
    radius_l2: float
    radius_l1: float
    radius_linf: float
    n0: int
    n: int
    alpha: float

    @property
    def abstained(self) -> bool:
        return self.predicted == ABSTAIN

    def radius(self, norm) -> float:
        return {"l2": self.radius_l2, "l1": self.radius_l1, "linf": self.radius_linf}[str(getattr(norm, "value", norm))]


# ------------------------------------------------------------ normal quantile


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


# Acklam's rational approximation coefficients
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)


def normal_ppf(p: float) -> float:
    """Inverse standard normal CDF (rational approximation plus one Newton step)."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability must lie in [0, 1], got {p}")
    if p == 0.0:
        return -math.inf
    if p == 1.0:
        return math.inf
    lo = 0.02425
    if p < lo:
        q = math.sqrt(-2 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1)
    elif p <= 1 - lo:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1)
    else:
        q = math.sqrt(-2 * math.log1p(-p))
        x = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1)
    # Newton step on Phi(x) = p; for upper-tail p work with the complement for accuracy
    dens = math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
    if dens > 0:
        if p > 0.5:
            err = (1.0 - p) - 0.5 * math.erfc(x / math.sqrt(2.0))
            x = x - err / dens
        else:
            x = x - (normal_cdf(x) - p) / dens
    return x


# ------------------------------------------------------------ binomial tails


def _log_binom_coeffs(n: int) -> np.ndarray:
    i = np.arange(1, n + 1, dtype=np.float64)
    logs = np.concatenate([[0.0], np.cumsum(np.log(i))])  # log i!
    return logs[n] - logs - logs[::-1]


def binom_log_sf(k: int, n: int, p: float, _coeffs: np.ndarray | None = None) -> float:
    """log P[Bin(n, p) >= k], summed in log space."""
    if k <= 0:
        return 0.0
    if k > n:
        return -math.inf
    if p <= 0.0:
        return -math.inf
    if p >= 1.0:
        return 0.0
    coeffs = _log_binom_coeffs(n) if _coeffs is None else _coeffs
    i = np.arange(k, n + 1, dtype=np.float64)
    terms = coeffs[k:] + i * math.log(p) + (n - i) * math.log1p(-p)
    m = terms.max()
    return float(m + math.log(np.exp(terms - m).sum()))


def binom_lower_confidence(k: int, n: int, alpha: float) -> float:
    """Exact one-sided Clopper-Pearson lower bound at confidence ``1 - alpha``.

    Returns the p at which ``P[Bin(n, p) >= k] = alpha``, found by bisection.
    """
    if not 0 <= k <= n:
        raise ValueError(f"need 0 <= k <= n, got k={k}, n={n}")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if k == 0:
        return 0.0
    if k == n:
        return alpha ** (1.0 / n)
    coeffs = _log_binom_coeffs(n)
    target = math.log(alpha)
    lo, hi = 0.0, k / n
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if binom_log_sf(k, n, mid, coeffs) < target:
            lo = mid
        else:
            hi = mid
    return lo


# ------------------------------------------------------------ radii


def _check_p(p: float) -> None:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"pA_lower must lie in [0, 1], got {p}")


def certify_gaussian_l2(pA_lower: float, sigma: float) -> float:
    _check_p(pA_lower)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if pA_lower <= 0.5:
        return 0.0
    return sigma * normal_ppf(pA_lower)


def certify_laplace_l1(pA_lower: float, lam: float) -> float:
    _check_p(pA_lower)
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if pA_lower <= 0.5:
        return 0.0
    return -lam * math.log(2.0 * (1.0 - pA_lower))


def convert_l2_to_linf(radius_l2: float, d: int) -> float:
    if d < 1:
        raise ValueError("dimension must be >= 1")
    return radius_l2 / math.sqrt(d)


# ------------------------------------------------------------ sampling


def sample_counts(net: Network, x0, dist: SmoothingDistribution, n: int, seed=0,
                  batch_size: int = 10_000) -> np.ndarray:
    """Class histogram of the base network's predictions at ``x0 + noise``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    x0 = np.asarray(x0, dtype=np.float64)
    rng = np.random.default_rng(seed)
    counts = np.zeros(net.num_classes, dtype=np.int64)
    remaining = n
    while remaining:
        b = min(batch_size, remaining)
        X = x0 + dist.sample(rng, (b, x0.shape[0]))
        counts += np.bincount(np.argmax(forward(net, X), axis=1), minlength=net.num_classes)
        remaining -= b
    return counts


def _top(counts) -> tuple[int, int]:
    top = int(np.argmax(counts))
    return top, int(counts[top])


def predict_smooth(net: Network, x0, dist: SmoothingDistribution, n: int, alpha: float,
                   seed=0) -> int:
    """Smoothed prediction, or ABSTAIN unless the top class beats 1/2 at level alpha.

    The test is one-sided: reject ``p <= 1/2`` when ``P[Bin(n, 1/2) >= k] <= alpha``.
    """
    counts = sample_counts(net, x0, dist, n, seed)
    top, k = _top(counts)
    if binom_log_sf(k, n, 0.5) <= math.log(alpha):
        return top
    return ABSTAIN


def _radii(pA: float, dist: SmoothingDistribution, d: int):
    if dist.kind is NoiseKind.GAUSSIAN:
        r2 = certify_gaussian_l2(pA, dist.scale)
        # the unit l1 ball sits inside the unit l2 ball
        return r2, r2, convert_l2_to_linf(r2, d)
    if dist.kind is NoiseKind.LAPLACE:
        r1 = certify_laplace_l1(pA, dist.scale)
        r2 = r1 / math.sqrt(d)
        return r2, r1, convert_l2_to_linf(r2, d)
    raise ValueError("no certified radius is available for uniform noise")


def certify(net: Network, x0, dist: SmoothingDistribution, n0: int = 1000, n: int = 100_000,
            alpha: float = 0.001, seed=0) -> SmoothCertificate:
    """Select the top class with `n0` samples, then bound its probability with `n` fresh ones."""
    if n0 < 1 or n < 1:
        raise ValueError("sample counts must be positive")
    if dist.kind is NoiseKind.UNIFORM:
        raise ValueError("no certified radius is available for uniform noise")
    x0 = np.asarray(x0, dtype=np.float64)
    select_seq, estimate_seq = np.random.SeedSequence(seed).spawn(2)
    candidate, _ = _top(sample_counts(net, x0, dist, n0, select_seq))
    k = int(sample_counts(net, x0, dist, n, estimate_seq)[candidate])
    pA = binom_lower_confidence(k, n, alpha)
    if pA <= 0.5:
        return SmoothCertificate(ABSTAIN, pA, 0.0, 0.0, 0.0, n0, n, alpha)
    r2, r1, rinf = _radii(pA, dist, x0.shape[0])
    return SmoothCertificate(candidate, pA, r2, r1, rinf, n0, n, alpha)
