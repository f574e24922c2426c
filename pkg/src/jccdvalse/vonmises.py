"""Directional-statistics utilities: Bessel-function ratios of the von Mises
distribution and their inverse.

For theta ~ VM(mu, kappa) the circular moments are
E[e^{j m theta}] = e^{j m mu} * I_m(kappa) / I_0(kappa); the order-1 magnitude
A(kappa) = I_1/I_0 links concentration to mean resultant length.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ive

__all__ = ["bessel_ratio", "mean_ratio", "concentration_from_ratio", "circular_moment"]

# above this concentration the scaled Bessels lose accuracy; the Gaussian
# limit exp(-m^2/(2k)) matches ive to ~1e-11 at the switch point
_GAUSSIAN_LIMIT_KAPPA = 1e8
_BISECT_HI = 1e6
_BISECT_STEPS = 80
_RATIO_MAX = 1.0 - 1e-16


def bessel_ratio(orders, kappa: float) -> np.ndarray:
    """I_orders(kappa)/I_0(kappa), stable for any kappa >= 0 and integer orders."""
    orders = np.asarray(orders, dtype=float)
    if kappa <= 0.0:
        return (orders == 0).astype(float)
    if kappa > _GAUSSIAN_LIMIT_KAPPA:
        return np.exp(-(orders ** 2) / (2.0 * kappa))
    return ive(orders, kappa) / ive(0.0, kappa)


def mean_ratio(kappa) -> np.ndarray:
    """A(kappa) = I_1(kappa)/I_0(kappa), vectorized."""
    kappa = np.asarray(kappa, dtype=float)
    out = np.empty_like(kappa)
    small = kappa <= _GAUSSIAN_LIMIT_KAPPA
    k_small = np.where(small, kappa, 1.0)
    out_small = ive(1.0, k_small) / ive(0.0, k_small)
    out = np.where(small, out_small, np.exp(-0.5 / np.maximum(kappa, 1.0)))
    return np.where(kappa <= 0.0, 0.0, out)


def concentration_from_ratio(ratio):
    """Inverse of A(kappa) by bisection on [0, 1e6] to 1e-9 relative.

    The bracket is seeded by the rational approximation
    kappa ~ r(2 - r^2)/(1 - r^2) (correct in both limits, error well under
    25% in between); ratios beyond A(1e6) use the asymptote
    kappa ~ 1/(2(1-ratio)).  Inputs are clipped to [0, 1-1e-16].
    """
    scalar = np.isscalar(ratio)
    r = np.clip(np.asarray(ratio, dtype=float), 0.0, _RATIO_MAX)
    out = np.zeros_like(r)
    hi_ratio = float(mean_ratio(_BISECT_HI))
    asymptotic = r >= hi_ratio
    out[asymptotic] = 1.0 / (2.0 * (1.0 - r[asymptotic]))
    todo = (~asymptotic) & (r > 0.0)
    if np.any(todo):
        target = r[todo]
        seed = target * (2.0 - target ** 2) / np.maximum(1.0 - target ** 2, 1e-300)
        lo = np.clip(seed / 1.3, 0.0, _BISECT_HI)
        hi = np.clip(seed * 1.3, 0.0, _BISECT_HI)
        # widen any bracket that misses the root
        miss_lo = mean_ratio(lo) > target
        lo[miss_lo] = 0.0
        miss_hi = mean_ratio(hi) < target
        hi[miss_hi] = _BISECT_HI
        for _ in range(_BISECT_STEPS):
            mid = 0.5 * (lo + hi)
            below = mean_ratio(mid) < target
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all((hi - lo) <= 1e-9 * np.maximum(lo, 1e-30)):
                break
        out[todo] = 0.5 * (lo + hi)
    return float(out) if scalar else out


def circular_moment(orders, mu: float, kappa: float) -> np.ndarray:
    """E[e^{j m theta}] for theta ~ VM(mu, kappa), per order m."""
    orders = np.asarray(orders, dtype=float)
    return bessel_ratio(orders, kappa) * np.exp(1j * orders * mu)
