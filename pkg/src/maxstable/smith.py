"""Closed-form bivariate Gaussian extreme value (Smith) model.

The dependence between two sites separated by h is governed by the
Mahalanobis scale a = sqrt(h' Sigma^{-1} h) of the Gaussian storm
profile covariance Sigma.  This module provides the bivariate CDF, its
log density and first-order partials, the extremal coefficient
theta(a) = 2*Phi(a/2), and the pairwise conditional distribution with
conditional return levels.

All functions operate on unit-Frechet-scale values and are vectorised
over numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr

from .gev import GevParams, from_frechet, gev_return_level

#: Below this the complete-dependence closed forms are used.
A_COMPLETE = 1e-10
#: Above this Phi(a/2) is 1 to double precision; independence closed forms.
A_INDEP = 38.0

_SQRT_2PI = np.sqrt(2.0 * np.pi)


def _phi(x):
    """Standard normal density."""
    return np.exp(-0.5 * x * x) / _SQRT_2PI


@dataclass(frozen=True)
class CovMatrix:
    """Storm-profile covariance (sigma_1^2, sigma_12, sigma_2^2)."""

    s11: float
    s12: float
    s22: float

    def __post_init__(self):
        if self.s11 <= 0 or self.s22 <= 0 or self.det <= 0:
            raise ValueError(
                f"covariance ({self.s11}, {self.s12}, {self.s22}) is not positive definite"
            )

    @property
    def det(self):
        return self.s11 * self.s22 - self.s12 ** 2

    def inverse(self):
        """Explicit 2x2 inverse as a (2, 2) array."""
        d = self.det
        return np.array([[self.s22, -self.s12], [-self.s12, self.s11]]) / d

    def as_matrix(self):
        return np.array([[self.s11, self.s12], [self.s12, self.s22]])


def mahalanobis_a(h, cov: CovMatrix):
    """Dependence scale a(h) = sqrt(h' Sigma^{-1} h).

    `h` may be a single 2-vector or an (n, 2) array of separations.
    """
    h = np.asarray(h, dtype=float)
    q = cov.inverse()
    hh = np.atleast_2d(h)
    a2 = (
        q[0, 0] * hh[:, 0] ** 2
        + 2.0 * q[0, 1] * hh[:, 0] * hh[:, 1]
        + q[1, 1] * hh[:, 1] ** 2
    )
    a = np.sqrt(np.maximum(a2, 0.0))
    return float(a[0]) if h.ndim == 1 else a


def _check_positive(name, value):
    if np.any(np.asarray(value) <= 0):
        raise ValueError(f"{name} must be strictly positive")


def dependence_terms(z_i, z_j, a):
    """Return (w, v) with w = a/2 + log(z_j/z_i)/a and v = a - w."""
    w = 0.5 * a + np.log(z_j / z_i) / a
    return w, a - w


def bivariate_cdf(z_i, z_j, a):
    """Bivariate Smith CDF Pr(Z_i <= z_i, Z_j <= z_j) at dependence scale a."""
    z_i, z_j = np.asarray(z_i, float), np.asarray(z_j, float)
    _check_positive("z", z_i)
    _check_positive("z", z_j)
    if np.any(np.asarray(a) < 0):
        raise ValueError("dependence scale a must be nonnegative")
    a_arr = np.broadcast_to(np.asarray(a, float), np.broadcast_shapes(z_i.shape, z_j.shape, np.shape(a)))
    z_i, z_j = np.broadcast_to(z_i, a_arr.shape), np.broadcast_to(z_j, a_arr.shape)
    out = np.empty(a_arr.shape)

    complete = a_arr < A_COMPLETE
    indep = a_arr > A_INDEP
    mid = ~complete & ~indep
    if np.any(complete):
        out[complete] = np.exp(-1.0 / np.minimum(z_i[complete], z_j[complete]))
    if np.any(indep):
        out[indep] = np.exp(-1.0 / z_i[indep] - 1.0 / z_j[indep])
    if np.any(mid):
        w, v = dependence_terms(z_i[mid], z_j[mid], a_arr[mid])
        out[mid] = np.exp(-ndtr(w) / z_i[mid] - ndtr(v) / z_j[mid])
    return float(out) if out.ndim == 0 else out


def _density_blocks(z_i, z_j, a):
    """The A (exponent), B, C, D blocks of the bivariate density."""
    w, v = dependence_terms(z_i, z_j, a)
    pw, pv = ndtr(w), ndtr(v)
    dw, dv = _phi(w), _phi(v)
    expo = -pw / z_i - pv / z_j
    b = pw / z_i ** 2 + dw / (a * z_i ** 2) - dv / (a * z_i * z_j)
    c = pv / z_j ** 2 + dv / (a * z_j ** 2) - dw / (a * z_i * z_j)
    d = v * dw / (a ** 2 * z_i ** 2 * z_j) + w * dv / (a ** 2 * z_i * z_j ** 2)
    return expo, b, c, d


def bivariate_log_density(z_i, z_j, a):
    """Log of the bivariate Smith density at dependence scale a > 0."""
    z_i, z_j = np.asarray(z_i, float), np.asarray(z_j, float)
    _check_positive("z", z_i)
    _check_positive("z", z_j)
    if np.any(np.asarray(a) <= 0):
        raise ValueError("density requires a > 0 (degenerate at complete dependence)")
    a_arr = np.broadcast_to(
        np.asarray(a, float), np.broadcast_shapes(z_i.shape, z_j.shape, np.shape(a))
    )
    z_i, z_j = np.broadcast_to(z_i, a_arr.shape), np.broadcast_to(z_j, a_arr.shape)
    out = np.empty(a_arr.shape)
    indep = a_arr > A_INDEP
    if np.any(indep):
        zi, zj = z_i[indep], z_j[indep]
        out[indep] = -2.0 * np.log(zi) - 1.0 / zi - 2.0 * np.log(zj) - 1.0 / zj
    mid = ~indep
    if np.any(mid):
        expo, b, c, d = _density_blocks(z_i[mid], z_j[mid], a_arr[mid])
        # b*c + d > 0 in exact arithmetic; cancellation at extreme z can
        # underflow it to 0, where log -> -inf is the honest answer
        with np.errstate(divide="ignore"):
            out[mid] = expo + np.log(b * c + d)
    return float(out) if out.ndim == 0 else out


def cdf_partial_zi(z_i, z_j, a):
    """First-order partial dF/dz_i of the bivariate CDF."""
    z_i, z_j = np.asarray(z_i, float), np.asarray(z_j, float)
    _check_positive("z", z_i)
    _check_positive("z", z_j)
    if np.any(np.asarray(a) <= 0):
        raise ValueError("cdf_partial_zi requires a > 0")
    a_arr = np.broadcast_to(
        np.asarray(a, float), np.broadcast_shapes(z_i.shape, z_j.shape, np.shape(a))
    )
    z_i, z_j = np.broadcast_to(z_i, a_arr.shape), np.broadcast_to(z_j, a_arr.shape)
    out = np.empty(a_arr.shape)
    indep = a_arr > A_INDEP
    if np.any(indep):
        zi, zj = z_i[indep], z_j[indep]
        out[indep] = np.exp(-1.0 / zi - 1.0 / zj) / zi ** 2
    mid = ~indep
    if np.any(mid):
        expo, b, _, _ = _density_blocks(z_i[mid], z_j[mid], a_arr[mid])
        out[mid] = np.exp(expo) * b
    return float(out) if out.ndim == 0 else out


def extremal_coefficient(a):
    """Pairwise extremal coefficient theta(a) = 2*Phi(a/2), in [1, 2]."""
    a = np.asarray(a, dtype=float)
    if np.any(a < 0):
        raise ValueError("dependence scale a must be nonnegative")
    out = 2.0 * ndtr(a / 2.0)
    return float(out) if out.ndim == 0 else out


def inverse_extremal_coefficient(theta):
    """Dependence scale a solving 2*Phi(a/2) = theta, for theta in (1, 2)."""
    from scipy.special import ndtri

    theta = np.asarray(theta, dtype=float)
    if np.any((theta <= 1.0) | (theta >= 2.0)):
        raise ValueError("theta must lie strictly inside (1, 2) for inversion")
    out = 2.0 * ndtri(theta / 2.0)
    return float(out) if out.ndim == 0 else out


def conditional_cdf(z, z_i, a):
    """Pr(Z_j <= z | Z_i = z_i) under the bivariate Smith model."""
    num = cdf_partial_zi(z_i, z, a)
    marginal = np.exp(-1.0 / np.asarray(z_i, float)) / np.asarray(z_i, float) ** 2
    out = np.clip(num / marginal, 0.0, 1.0)
    return float(out) if np.ndim(out) == 0 else out


def conditional_return_level(z_i, T, a, p_j: GevParams):
    """T-block conditional return level at a site, given Z_i = z_i elsewhere.

    Root-finds the Frechet-scale level z* with conditional CDF 1 - 1/T and
    maps it back to data units via the GEV parameters of the target site.
    """
    if T <= 1:
        raise ValueError(f"return period must exceed 1, got {T}")
    if a > A_INDEP:
        return gev_return_level(p_j, T)
    target = 1.0 - 1.0 / T

    def g(z):
        return conditional_cdf(z, z_i, a) - target

    lo, hi = 1e-6, 1e8
    if g(lo) > 0 or g(hi) < 0:
        raise ValueError("conditional return level root not bracketed on [1e-6, 1e8]")
    z_star = brentq(g, lo, hi, rtol=1e-10, xtol=1e-12)
    return from_frechet(z_star, p_j)
