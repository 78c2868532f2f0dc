"""Exponentially scaled modified Bessel functions of the first kind."""
from __future__ import annotations

import math

import numpy as np

SERIES_LIMIT = 30.0
_TOL = 1e-17


def _series_scaled(alpha: float, x: np.ndarray) -> np.ndarray:
    """sum_m (x/2)^(2m+alpha) / (m! Gamma(m+alpha+1)) * exp(-x), for x > 0."""
    half = 0.5 * x
    term = np.exp(alpha * np.log(half) - x - math.lgamma(alpha + 1.0))
    total = term.copy()
    q = half * half
    m = 0
    while True:
        m += 1
        term = term * q / (m * (m + alpha))
        total += term
        if np.all(np.abs(term) <= _TOL * np.abs(total)) or m > 500:
            return total


def _asymptotic_scaled(alpha: float, x: np.ndarray) -> np.ndarray:
    """Large-argument expansion, truncated at its smallest term."""
    mu = 4.0 * alpha * alpha
    total = np.ones_like(x)
    term = np.ones_like(x)
    idx = np.arange(x.size)  # entries still accumulating
    for k in range(1, 200):
        xs, ts = x[idx], term[idx]
        nxt = -ts * (mu - (2 * k - 1) ** 2) / (k * 8.0 * xs)
        keep = np.abs(nxt) < np.abs(ts)
        idx, nxt = idx[keep], nxt[keep]
        term[idx] = nxt
        total[idx] += nxt
        idx = idx[np.abs(nxt) > _TOL * np.abs(total[idx])]
        if not idx.size:
            break
    return total / np.sqrt(2.0 * np.pi * x)


def bessel_i_scaled(alpha: float, x):
    """I_alpha(x) * exp(-x) for alpha > -1 and x >= 0."""
    if not alpha > -1:
        raise ValueError("order must exceed -1")
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0):
        raise ValueError("argument must be non-negative")
    flat = np.atleast_1d(xa).ravel()
    out = np.empty_like(flat)
    zero = flat == 0
    out[zero] = 1.0 if alpha == 0 else (0.0 if alpha > 0 else np.inf)
    small = (~zero) & (flat <= SERIES_LIMIT)
    large = flat > SERIES_LIMIT
    if np.any(small):
        out[small] = _series_scaled(alpha, flat[small])
    if np.any(large):
        out[large] = _asymptotic_scaled(alpha, flat[large])
    out = out.reshape(xa.shape)
    return float(out) if out.ndim == 0 else out


def bessel_ratio(alpha: float, kappa: float, rho):
    """I_alpha(kappa rho) / I_alpha(kappa), overflow-free for large kappa."""
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    rho = np.asarray(rho, dtype=float)
    num = bessel_i_scaled(alpha, kappa * rho)
    den = bessel_i_scaled(alpha, kappa)
    out = num / den * np.exp(kappa * (rho - 1.0))
    out = np.where(rho == 1.0, 1.0, out)
    return float(out) if out.ndim == 0 else out


def bessel_ratio_with_derivative(alpha: float, kappa: float, rho):
    """I_a(kappa rho)/I_a(kappa) and its rho-derivative, using I_a' = I_{a+1} + (a/x) I_a."""
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    rho = np.asarray(rho, dtype=float)
    x = kappa * rho
    scale = np.exp(kappa * (rho - 1.0)) / bessel_i_scaled(alpha, kappa)
    ia = np.asarray(bessel_i_scaled(alpha, x))
    ia1 = np.asarray(bessel_i_scaled(alpha + 1.0, x))
    safe = np.where(x > 0, x, 1.0)
    deriv = ia1 + np.where(x > 0, alpha / safe * ia, 0.0)
    ratio = np.where(rho == 1.0, 1.0, ia * scale)
    return ratio, kappa * deriv * scale


def bessel_ratio_derivative(alpha: float, kappa: float, rho):
    """d/drho of I_alpha(kappa rho) / I_alpha(kappa)."""
    out = bessel_ratio_with_derivative(alpha, kappa, rho)[1]
    return float(out) if np.ndim(out) == 0 else out
