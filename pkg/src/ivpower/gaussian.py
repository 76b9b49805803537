"""Gaussian numerical primitives.

Univariate and bivariate standard-normal CDFs, the Gaussian copula, the
inverse normal CDF, Gauss quadrature helpers, and seeded RNG streams.
Everything is vectorized over numpy arrays and pure (no module state
beyond cached quadrature nodes).
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import ndtr, ndtri

__all__ = [
    "norm_cdf",
    "norm_pdf",
    "norm_ppf",
    "binorm_cdf",
    "gaussian_copula",
    "normal_quadrature",
    "rng_stream",
]

# |rho| beyond this is treated as the comonotone/countermonotone limit
RHO_CLAMP = 1.0 - 1e-10
# quadrature switches to the dense rule past this (boundary layer near |rho|=1)
_RHO_DENSE = 0.925
_NODES_LOW = 24
_NODES_HIGH = 160


def norm_cdf(z):
    """Standard normal CDF, accurate to ~1e-16. Accepts arrays, +-inf."""
    return ndtr(z)


def norm_pdf(z):
    z = np.asarray(z, dtype=float)
    return np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)


def norm_ppf(p):
    """Inverse standard normal CDF on the open interval (0,1)."""
    p_arr = np.asarray(p, dtype=float)
    if np.any(p_arr <= 0.0) or np.any(p_arr >= 1.0):
        raise ValueError("norm_ppf requires 0 < p < 1")
    return ndtri(p)


@lru_cache(maxsize=8)
def _leggauss(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def _binorm_finite(h, k, rho, n_nodes):
    # single-integral reduction: Phi2(h,k;r) = Phi(h)Phi(k)
    #   + (1/2pi) * int_0^{asin r} exp(-(h^2+k^2-2hk sin t)/(2 cos^2 t)) dt
    theta = np.arcsin(rho)
    x, w = _leggauss(n_nodes)
    # map nodes from [-1,1] to [0, theta]; sign of theta rides along
    t = 0.5 * theta[..., None] * (x + 1.0)
    sin_t = np.sin(t)
    cos2_t = 1.0 - sin_t * sin_t
    hh = h[..., None]
    kk = k[..., None]
    expo = -(hh * hh + kk * kk - 2.0 * hh * kk * sin_t) / (2.0 * cos2_t)
    integral = 0.5 * theta * np.einsum("...j,j->...", np.exp(expo), w)
    return ndtr(h) * ndtr(k) + integral / (2.0 * np.pi)


def binorm_cdf(a, b, rho):
    """Bivariate standard normal CDF Pr[A <= a, B <= b] with corr(A,B)=rho.

    Parameters
    ----------
    a, b : array_like
        Evaluation points; +-inf sentinels reduce to the marginal CDF.
    rho : array_like
        Correlation(s), |rho| < 1. Values within 1e-10 of +-1 use the
        comonotone / countermonotone limit formulas.

    Returns
    -------
    ndarray or float
        Joint probability, absolute error below 1e-10.
    """
    a, b, rho = np.broadcast_arrays(
        np.asarray(a, dtype=float), np.asarray(b, dtype=float), np.asarray(rho, dtype=float)
    )
    if np.any(np.abs(rho) >= 1.0):
        raise ValueError("binorm_cdf requires |rho| < 1")
    scalar = a.ndim == 0
    a, b, rho = np.atleast_1d(a), np.atleast_1d(b), np.atleast_1d(rho)

    out = np.empty(a.shape, dtype=float)
    pa, pb = ndtr(a), ndtr(b)

    neg_inf = (a == -np.inf) | (b == -np.inf)
    a_inf = np.isposinf(a)
    b_inf = np.isposinf(b)
    at_limit = np.abs(rho) > RHO_CLAMP
    plain = ~(neg_inf | a_inf | b_inf | at_limit)

    out[neg_inf] = 0.0
    # marginal reductions (either argument at +inf)
    both_inf = a_inf & b_inf
    out[a_inf & ~neg_inf] = pb[a_inf & ~neg_inf]
    out[b_inf & ~neg_inf] = pa[b_inf & ~neg_inf]
    out[both_inf] = 1.0
    # Frechet limits near |rho|=1
    lim = at_limit & ~(neg_inf | a_inf | b_inf)
    if np.any(lim):
        hi = lim & (rho > 0)
        lo = lim & (rho < 0)
        out[hi] = np.minimum(pa[hi], pb[hi])
        out[lo] = np.maximum(pa[lo] + pb[lo] - 1.0, 0.0)

    if np.any(plain):
        r = rho[plain]
        dense = np.abs(r) > _RHO_DENSE
        vals = np.empty(r.shape, dtype=float)
        if np.any(~dense):
            vals[~dense] = _binorm_finite(a[plain][~dense], b[plain][~dense], r[~dense], _NODES_LOW)
        if np.any(dense):
            vals[dense] = _binorm_finite(a[plain][dense], b[plain][dense], r[dense], _NODES_HIGH)
        out[plain] = vals

    np.clip(out, 0.0, 1.0, out=out)
    return float(out[0]) if scalar else out


def gaussian_copula(u1, u2, rho):
    """Gaussian copula C(u1, u2; rho) with exact boundary behavior.

    C(u, 0) = 0, C(u, 1) = u, and |rho| at the clamp threshold returns
    the Frechet upper/lower bound.
    """
    u1, u2, rho = np.broadcast_arrays(
        np.asarray(u1, dtype=float), np.asarray(u2, dtype=float), np.asarray(rho, dtype=float)
    )
    if np.any((u1 < 0) | (u1 > 1) | (u2 < 0) | (u2 > 1)):
        raise ValueError("copula arguments must lie in [0,1]")
    scalar = u1.ndim == 0
    u1, u2, rho = np.atleast_1d(u1), np.atleast_1d(u2), np.atleast_1d(rho)

    out = np.empty(u1.shape, dtype=float)
    boundary = (u1 <= 0.0) | (u2 <= 0.0) | (u1 >= 1.0) | (u2 >= 1.0)
    if np.any(boundary):
        out[boundary] = np.minimum(u1[boundary], u2[boundary])
        zero = boundary & ((u1 <= 0.0) | (u2 <= 0.0))
        out[zero] = 0.0
    interior = ~boundary
    if np.any(interior):
        out[interior] = binorm_cdf(ndtri(u1[interior]), ndtri(u2[interior]), rho[interior])
    return float(out[0]) if scalar else out


def normal_quadrature(mean=0.0, sd=1.0, order=64):
    """Gauss-Hermite nodes and weights for E[f(X)], X ~ N(mean, sd^2)."""
    t, w = np.polynomial.hermite.hermgauss(order)
    return mean + sd * np.sqrt(2.0) * t, w / np.sqrt(np.pi)


def rng_stream(seed, stream_id=0):
    """Independent, reproducible generator for (seed, stream_id)."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(stream_id,))
    return np.random.default_rng(ss)
