"""Analytic first-order derivatives of the pairwise log-density.

The per-pair log-likelihood term is

    log f = A + log(B*C + D) + E,

where A is the bivariate exponent, B, C, D the density blocks and E the
log Jacobian of the GEV -> Frechet change of variables.  The dependence
parameters enter only through a = sqrt(h' Sigma^{-1} h); the marginal
regression coefficients enter through (z_i, z_j) and E.  This module
evaluates the chain rule exactly, vectorised over pair terms, and also
provides the finite-difference fallback used to self-check the analytic
path.

Derivative bookkeeping (w = a/2 + log(z_j/z_i)/a, v = a - w):

    dw/dz_i = -1/(a z_i)    dv/dz_i = +1/(a z_i)
    dw/dz_j = +1/(a z_j)    dv/dz_j = -1/(a z_j)
    dw/da   = v/a           dv/da   = w/a
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr

from .gev import SHAPE_EPS
from .smith import A_INDEP, _phi, dependence_terms

#: Central finite-difference step scale: cube root of machine epsilon.
FD_STEP = float(np.cbrt(np.finfo(float).eps))


def density_partials(z_i, z_j, a):
    """Partials of the Smith log-density g = A + log(B*C + D).

    Returns (dg_dzi, dg_dzj, dg_da) for strictly positive inputs.  Above
    the independence cutoff the density factorises and dg_da = 0.
    """
    z_i = np.asarray(z_i, float)
    z_j = np.asarray(z_j, float)
    a = np.broadcast_to(
        np.asarray(a, float), np.broadcast_shapes(z_i.shape, z_j.shape, np.shape(a))
    )
    z_i, z_j = np.broadcast_to(z_i, a.shape), np.broadcast_to(z_j, a.shape)
    dg_dzi = np.empty(a.shape)
    dg_dzj = np.empty(a.shape)
    dg_da = np.zeros(a.shape)

    indep = a > A_INDEP
    if np.any(indep):
        dg_dzi[indep] = -2.0 / z_i[indep] + 1.0 / z_i[indep] ** 2
        dg_dzj[indep] = -2.0 / z_j[indep] + 1.0 / z_j[indep] ** 2

    mid = ~indep
    if np.any(mid):
        zi, zj, am = z_i[mid], z_j[mid], a[mid]
        w, v = dependence_terms(zi, zj, am)
        pw, pv = ndtr(w), ndtr(v)
        dw, dv = _phi(w), _phi(v)
        a2, a3 = am ** 2, am ** 3
        zi2, zi3 = zi ** 2, zi ** 3
        zj2, zj3 = zj ** 2, zj ** 3
        wv1 = 1.0 + w * v

        b = pw / zi2 + dw / (am * zi2) - dv / (am * zi * zj)
        c = pv / zj2 + dv / (am * zj2) - dw / (am * zi * zj)
        d = v * dw / (a2 * zi2 * zj) + w * dv / (a2 * zi * zj2)
        g = b * c + d

        db_dzi = (
            -2.0 * pw / zi3
            - 3.0 * dw / (am * zi3)
            + w * dw / (a2 * zi3)
            + dv / (am * zi2 * zj)
            + v * dv / (a2 * zi2 * zj)
        )
        dc_dzi = (
            dv / (am * zi * zj2)
            - v * dv / (a2 * zi * zj2)
            - w * dw / (a2 * zi2 * zj)
            + dw / (am * zi2 * zj)
        )
        dd_dzi = (dw * wv1 / (am * zi3) - 2.0 * v * dw / zi3) / (a2 * zj) + (
            -dv * wv1 / (am * zi2) - w * dv / zi2
        ) / (a2 * zj2)

        dc_dzj = (
            -2.0 * pv / zj3
            - 3.0 * dv / (am * zj3)
            + v * dv / (a2 * zj3)
            + dw / (am * zj2 * zi)
            + w * dw / (a2 * zj2 * zi)
        )
        # db_dzj mirrors dc_dzi under (w, z_i) <-> (v, z_j)
        db_dzj = (
            dw / (am * zj * zi2)
            - w * dw / (a2 * zj * zi2)
            - v * dv / (a2 * zi * zj2)
            + dv / (am * zi * zj2)
        )
        dd_dzj = (dv * wv1 / (am * zj3) - 2.0 * w * dv / zj3) / (a2 * zi) + (
            -dw * wv1 / (am * zj2) - v * dw / zj2
        ) / (a2 * zi2)

        da_exp = -dw * v / (am * zi) - dv * w / (am * zj)
        db_da = dw * v / (am * zi2) - dw * wv1 / (a2 * zi2) + dv * wv1 / (a2 * zi * zj)
        dc_da = dv * w / (am * zj2) - dv * wv1 / (a2 * zj2) + dw * wv1 / (a2 * zi * zj)
        dd_da = dw * (w - 2.0 * v - w * v ** 2) / (a3 * zi2 * zj) + dv * (
            v - 2.0 * w - v * w ** 2
        ) / (a3 * zi * zj2)

        # g underflowing to 0 at extreme z yields non-finite partials,
        # matching the -inf log-density there
        with np.errstate(divide="ignore", invalid="ignore"):
            dg_dzi[mid] = b + (c * db_dzi + b * dc_dzi + dd_dzi) / g
            dg_dzj[mid] = c + (c * db_dzj + b * dc_dzj + dd_dzj) / g
            dg_da[mid] = da_exp + (c * db_da + b * dc_da + dd_da) / g

    if dg_dzi.ndim == 0:
        return float(dg_dzi), float(dg_dzj), float(dg_da)
    return dg_dzi, dg_dzj, dg_da


def mahalanobis_gradient(h, cov):
    """da/d(sigma_1^2, sigma_12, sigma_2^2) per separation.

    With q = Sigma^{-1} h, the quadratic form Q = h' Sigma^{-1} h has
    dQ/dSigma = -q q', hence per packed component (the off-diagonal
    appears twice):

        dQ/ds11 = -q_1^2,  dQ/ds12 = -2 q_1 q_2,  dQ/ds22 = -q_2^2,

    and da/ds = dQ/ds / (2a).  `h` is an (n, 2) array; returns (n, 3).
    """
    h = np.atleast_2d(np.asarray(h, dtype=float))
    qmat = cov.inverse()
    q = h @ qmat
    a = np.sqrt(np.einsum("ij,ij->i", q, h))
    grad = np.empty((h.shape[0], 3))
    grad[:, 0] = -q[:, 0] ** 2
    grad[:, 1] = -2.0 * q[:, 0] * q[:, 1]
    grad[:, 2] = -q[:, 1] ** 2
    grad /= (2.0 * a)[:, None]
    return grad


def margin_chain(y, mu, scale, shape):
    """Chain-rule factors of the Frechet transform and the log Jacobian.

    For each observation, returns a dict with

      z          Frechet-scale value (caller guarantees support)
      dz_dmu     dz / d(mu)
      dz_deta    dz / d(log scale)   (exponential scale link)
      dz_dxi     dz / d(xi)
      dE_dmu, dE_deta, dE_dxi   partials of the per-site log-Jacobian term

    Gumbel-limit formulas are substituted where |xi| < SHAPE_EPS.
    """
    y = np.asarray(y, float)
    mu, scale, shape = np.broadcast_arrays(
        np.asarray(mu, float), np.asarray(scale, float), np.asarray(shape, float)
    )
    x = (y - mu) / scale
    u = 1.0 + shape * x
    small = np.abs(shape) < SHAPE_EPS
    safe_shape = np.where(small, 1.0, shape)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        z = np.where(small, np.exp(x), np.where(u > 0, u, np.nan) ** (1.0 / safe_shape))
        log_z = np.where(small, x, np.log(np.where(u > 0, u, np.nan)) / safe_shape)
        z_pow = np.where(small, z, z / np.where(u > 0, u, np.nan))  # z**(1 - xi)

        dz_dmu = -z_pow / scale
        dz_deta = -z_pow * x
        dz_dxi_gen = (z_pow * x - z * log_z) / safe_shape
        dz_dxi = np.where(small, -0.5 * z * x * x, dz_dxi_gen)

        dE_dmu = (shape - 1.0) / (scale * np.where(u > 0, u, np.nan))
        dE_deta = (shape - 1.0) * x / np.where(u > 0, u, np.nan) - 1.0
        dE_dxi_gen = ((1.0 - shape) * x / np.where(u > 0, u, np.nan) - log_z) / safe_shape
        dE_dxi = np.where(small, -0.5 * x * x - x, dE_dxi_gen)
    return {
        "z": z,
        "dz_dmu": dz_dmu,
        "dz_deta": dz_deta,
        "dz_dxi": dz_dxi,
        "dE_dmu": dE_dmu,
        "dE_deta": dE_deta,
        "dE_dxi": dE_dxi,
    }


def central_difference(fun, x, rel_step=FD_STEP):
    """Central finite-difference gradient with step rel_step*max(1, |x_k|)."""
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for k in range(x.size):
        step = rel_step * max(1.0, abs(x[k]))
        xp, xm = x.copy(), x.copy()
        xp[k] += step
        xm[k] -= step
        grad[k] = (fun(xp) - fun(xm)) / (2.0 * step)
    return grad
