"""Univariate and bivariate normal probabilities.

Phi2 follows Genz's Gauss-Legendre scheme for bivariate normal probabilities
(the algorithm behind scipy's mvndst BVNU), vectorized over numpy arrays so a
whole dataset of pair terms is evaluated in one call.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from exceptions import GaussianDomainError

# Smallest probability passed to a logarithm.
PROB_FLOOR = 1e-300

# 10-point Gauss-Legendre abscissae on (-1, 0) and weights; mirrored to 20 nodes.
_GL_X = np.array([
    -0.9931285991850949, -0.9639719272779138, -0.9122344282513259,
    -0.8391169718222188, -0.7463319064601508, -0.6360536807265150,
    -0.5108670019508271, -0.3737060887154196, -0.2277858511416451,
    -0.07652652113349733,
])
_GL_W = np.array([
    0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
    0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
    0.1316886384491766, 0.1420961093183821, 0.1491729864726037,
    0.1527533871307259,
])
_TWOPI = 2.0 * math.pi
_HIGH_CORRELATION = 0.925


def phi(z):
    """Standard normal density."""
    z = np.asarray(z, dtype=float)
    return np.exp(-0.5 * z * z) / math.sqrt(_TWOPI)


def Phi(z):
    """Standard normal CDF."""
    return ndtr(z)


def _bvn_low(h, k, r):
    # Integrates over asin(r) for moderate correlation; h, k are upper limits.
    H, K = -h, -k
    hk = H * K
    hs = (H * H + K * K) / 2.0
    asr = np.arcsin(r)
    total = np.zeros_like(h)
    for x, w in zip(_GL_X, _GL_W):
        for node in (x, -x):
            sn = np.sin(asr * (node + 1.0) / 2.0)
            total += w * np.exp((sn * hk - hs) / (1.0 - sn * sn))
    return total * asr / (2.0 * _TWOPI) + ndtr(h) * ndtr(k)


def _bvn_high(h, k, r):
    H, K = -h, -k
    negative = r < 0
    K = np.where(negative, -K, K)
    hk = H * K
    a_sq = (1.0 - r) * (1.0 + r)
    a = np.sqrt(a_sq)
    b_sq = (H - K) ** 2
    c = (4.0 - hk) / 8.0
    d = (12.0 - hk) / 16.0

    bvn = a * np.exp(-(b_sq / a_sq + hk) / 2.0) * (
        1.0 - c * (b_sq - a_sq) * (1.0 - d * b_sq / 5.0) / 3.0 + c * d * a_sq * a_sq / 5.0
    )
    b = np.sqrt(b_sq)
    tail = (
        np.exp(-hk / 2.0) * math.sqrt(_TWOPI) * ndtr(-b / a) * b
        * (1.0 - c * b_sq * (1.0 - d * b_sq / 5.0) / 3.0)
    )
    bvn = bvn - np.where(hk > -160.0, tail, 0.0)

    half = a / 2.0
    for x, w in zip(_GL_X, _GL_W):
        xs = (half * (x + 1.0)) ** 2
        rs = np.sqrt(1.0 - xs)
        bvn += half * w * (
            np.exp(-b_sq / (2.0 * xs) - hk / (1.0 + rs)) / rs
            - np.exp(-(b_sq / xs + hk) / 2.0) * (1.0 + c * xs * (1.0 + d * xs))
        )
        xs = a_sq * (-x + 1.0) ** 2 / 4.0
        rs = np.sqrt(1.0 - xs)
        bvn += half * w * np.exp(-(b_sq / xs + hk) / 2.0) * (
            np.exp(-hk * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs
            - (1.0 + c * xs * (1.0 + d * xs))
        )
    bvn = -bvn / _TWOPI

    positive_result = bvn + ndtr(-np.maximum(H, K))
    negative_result = -bvn + np.maximum(0.0, ndtr(-H) - ndtr(-K))
    return np.where(negative, negative_result, positive_result)


def Phi2(h, k, rho):
    """P(Z1 <= h, Z2 <= k) for standard normals with correlation rho.

    Accepts scalars or broadcastable arrays; infinite limits are allowed.
    """
    h, k, rho = np.broadcast_arrays(
        np.asarray(h, dtype=float), np.asarray(k, dtype=float), np.asarray(rho, dtype=float)
    )
    scalar = h.ndim == 0
    shape = h.shape
    h, k, rho = (np.atleast_1d(v).ravel() for v in (h, k, rho))

    if np.any(np.isnan(h)) or np.any(np.isnan(k)):
        raise GaussianDomainError("bivariate normal limits must not be NaN")
    if not np.all(np.abs(rho) < 1.0):
        worst = float(np.nanmax(np.abs(rho))) if not np.any(np.isnan(rho)) else float("nan")
        raise GaussianDomainError(f"correlation must lie in (-1, 1), got |rho| = {worst}")

    out = np.zeros(h.shape)
    finite = np.isfinite(h) & np.isfinite(k)
    low = finite & (np.abs(rho) < _HIGH_CORRELATION)
    high = finite & ~low

    with np.errstate(over="ignore", under="ignore", divide="ignore", invalid="ignore"):
        if np.any(low):
            out[low] = _bvn_low(h[low], k[low], rho[low])
        if np.any(high):
            out[high] = _bvn_high(h[high], k[high], rho[high])

    # Infinite limits reduce to univariate probabilities.
    out = np.where(np.isposinf(h), ndtr(k), out)
    out = np.where(np.isposinf(k), ndtr(h), out)
    out = np.where(np.isneginf(h) | np.isneginf(k), 0.0, out)
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if scalar else out.reshape(shape)


def rect_prob_array(lower1, upper1, lower2, upper2, rho):
    """Vectorized rectangle probability P(l1 < Z1 <= u1, l2 < Z2 <= u2), floored at PROB_FLOOR."""
    lower1, upper1, lower2, upper2, rho = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (lower1, upper1, lower2, upper2, rho))
    )
    # Stacking the four corners into one call keeps the quadrature loop shared.
    corners = Phi2(
        np.concatenate([upper1.ravel(), lower1.ravel(), upper1.ravel(), lower1.ravel()]),
        np.concatenate([upper2.ravel(), upper2.ravel(), lower2.ravel(), lower2.ravel()]),
        np.tile(rho.ravel(), 4),
    ).reshape(4, -1)
    prob = corners[0] - corners[1] - corners[2] + corners[3]
    return np.clip(prob, PROB_FLOOR, 1.0).reshape(upper1.shape)


@dataclass(frozen=True)
class Rect2:
    """A 2-D rectangle with standardized bounds and the pair correlation."""
    lower1: float
    upper1: float
    lower2: float
    upper2: float
    rho: float

    def __post_init__(self):
        if not (self.lower1 < self.upper1 and self.lower2 < self.upper2):
            raise GaussianDomainError(
                f"rectangle bounds must satisfy lower < upper, got "
                f"({self.lower1}, {self.upper1}] x ({self.lower2}, {self.upper2}]"
            )
        if not abs(self.rho) < 1.0:
            raise GaussianDomainError(f"correlation must lie in (-1, 1), got {self.rho}")


def rect_prob(rect: Rect2) -> float:
    """Probability of a rectangle, clamped to [PROB_FLOOR, 1]."""
    return float(rect_prob_array(rect.lower1, rect.upper1, rect.lower2, rect.upper2, rect.rho))
