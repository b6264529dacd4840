"""Generalised extreme value (GEV) marginal machinery.

Provides the GEV distribution function and quantiles, the bijection
between GEV and unit-Frechet scales together with its Jacobian, return
levels and a univariate maximum-likelihood fitter used for starting
values.

All scalar operations are pure functions; the vectorised helpers accept
numpy arrays broadcast against each other and propagate NaN (missing
observations).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

#: Below this |shape| the Gumbel-limit formulas are used, avoiding
#: catastrophic cancellation in the (1 + xi*x)**(1/xi) branch.
SHAPE_EPS = 1e-6

EULER_GAMMA = 0.5772156649015329


class SupportViolation(ValueError):
    """Raised when an observation falls outside the GEV support."""


@dataclass(frozen=True)
class GevParams:
    """GEV location/scale/shape triple, in data units."""

    mu: float
    scale: float
    shape: float

    def __post_init__(self):
        if not np.isfinite(self.mu) or not np.isfinite(self.scale) or not np.isfinite(self.shape):
            raise ValueError("GEV parameters must be finite")
        if self.scale <= 0:
            raise ValueError(f"GEV scale must be positive, got {self.scale}")


# ---------------------------------------------------------------------------
# vectorised primitives (used by the likelihood layer)
# ---------------------------------------------------------------------------

def support_argument(y, mu, scale, shape):
    """Return u = 1 + shape*(y - mu)/scale, the quantity that must stay positive."""
    return 1.0 + shape * (y - mu) / scale


def frechet_transform(y, mu, scale, shape):
    """Map GEV-scale values to the unit-Frechet scale, elementwise.

    Returns (z, u) where u = 1 + shape*(y - mu)/scale.  Entries with
    u <= 0 (support violations) yield z = NaN; callers decide how to
    penalise them.  NaN inputs propagate.
    """
    y = np.asarray(y, dtype=float)
    mu, scale, shape = np.broadcast_arrays(
        np.asarray(mu, float), np.asarray(scale, float), np.asarray(shape, float)
    )
    x = (y - mu) / scale
    u = 1.0 + shape * x
    small = np.abs(shape) < SHAPE_EPS
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        z_gev = np.where(u > 0, u, np.nan) ** np.where(small, 1.0, 1.0 / shape)
        z_gum = np.exp(x)
    z = np.where(small, z_gum, z_gev)
    z = np.where(u > 0, z, np.nan)
    return z, u


def inverse_frechet_transform(z, mu, scale, shape):
    """Map unit-Frechet values back to the GEV scale, elementwise."""
    z = np.asarray(z, dtype=float)
    mu, scale, shape = np.broadcast_arrays(
        np.asarray(mu, float), np.asarray(scale, float), np.asarray(shape, float)
    )
    small = np.abs(shape) < SHAPE_EPS
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        safe_shape = np.where(small, 1.0, shape)
        y_gev = mu + scale * (z ** safe_shape - 1.0) / safe_shape
        y_gum = mu + scale * np.log(z)
    return np.where(small, y_gum, y_gev)


def gev_nll(sample, mu, scale, shape):
    """Negative log-likelihood of an i.i.d. GEV sample (inf if infeasible)."""
    if scale <= 0:
        return np.inf
    x = (np.asarray(sample, float) - mu) / scale
    if abs(shape) < SHAPE_EPS:
        return sample.size * np.log(scale) + np.sum(x + np.exp(-x))
    u = 1.0 + shape * x
    if np.any(u <= 0):
        return np.inf
    lu = np.log(u)
    return sample.size * np.log(scale) + (1.0 + 1.0 / shape) * np.sum(lu) + np.sum(
        np.exp(-lu / shape)
    )


# ---------------------------------------------------------------------------
# scalar operations
# ---------------------------------------------------------------------------

def gev_cdf(y, p: GevParams):
    """GEV distribution function at y."""
    if not np.isfinite(y):
        raise ValueError(f"non-finite argument to gev_cdf: {y}")
    x = (y - p.mu) / p.scale
    if abs(p.shape) < SHAPE_EPS:
        return float(np.exp(-np.exp(-x)))
    u = 1.0 + p.shape * x
    if u <= 0:
        # below the lower endpoint (xi > 0) or above the upper one (xi < 0)
        return 0.0 if p.shape > 0 else 1.0
    return float(np.exp(-u ** (-1.0 / p.shape)))


def gev_quantile(prob, p: GevParams):
    """Quantile function of the GEV distribution."""
    if not 0.0 < prob < 1.0:
        raise ValueError(f"probability must be in (0, 1), got {prob}")
    t = -np.log(prob)
    if abs(p.shape) < SHAPE_EPS:
        return float(p.mu - p.scale * np.log(t))
    return float(p.mu + p.scale * (t ** (-p.shape) - 1.0) / p.shape)


def to_frechet(y, p: GevParams):
    """GEV -> unit-Frechet bijection: z = (1 + xi*(y - mu)/lambda)**(1/xi)."""
    z, u = frechet_transform(y, p.mu, p.scale, p.shape)
    if np.any(u <= 0):
        raise SupportViolation(
            f"observation {y} outside GEV support (1 + xi*(y-mu)/lambda = {u})"
        )
    return float(z)


def from_frechet(z, p: GevParams):
    """Inverse of :func:`to_frechet` (unit-Frechet scale back to data units)."""
    if z <= 0:
        raise ValueError(f"Frechet-scale value must be positive, got {z}")
    return float(inverse_frechet_transform(z, p.mu, p.scale, p.shape))


def pair_log_jacobian(y_i, y_j, p_i: GevParams, p_j: GevParams):
    """Log absolute Jacobian of the bivariate GEV -> Frechet change of variables."""
    total = 0.0
    for y, p in ((y_i, p_i), (y_j, p_j)):
        u = support_argument(y, p.mu, p.scale, p.shape)
        if u <= 0:
            raise SupportViolation(f"observation {y} outside GEV support")
        if abs(p.shape) < SHAPE_EPS:
            total += -np.log(p.scale) + (y - p.mu) / p.scale * (1.0 - p.shape)
        else:
            total += -np.log(p.scale) + (1.0 / p.shape - 1.0) * np.log(u)
    return float(total)


def gev_return_level(p: GevParams, T):
    """The (1 - 1/T) quantile: the level exceeded once per T blocks on average."""
    if T <= 1:
        raise ValueError(f"return period must exceed 1, got {T}")
    return gev_quantile(1.0 - 1.0 / T, p)


def fit_gev_univariate(sample) -> GevParams:
    """Maximum-likelihood GEV fit of an i.i.d. sample.

    Moment-based Gumbel initialisation followed by Nelder-Mead refinement
    of (mu, log scale, shape).  Used for exploratory per-site fits and
    starting values.
    """
    sample = np.asarray(sample, dtype=float)
    sample = sample[np.isfinite(sample)]
    if sample.size < 10:
        raise ValueError(f"need at least 10 finite observations, got {sample.size}")
    sd = sample.std(ddof=1)
    if sd == 0:
        raise ValueError("degenerate sample: zero variance")

    scale0 = sd * np.sqrt(6.0) / np.pi
    mu0 = sample.mean() - EULER_GAMMA * scale0

    def objective(theta):
        mu, log_scale, shape = theta
        return gev_nll(sample, mu, np.exp(log_scale), shape)

    best = None
    for shape0 in (0.1, -0.1, 0.4):
        res = minimize(
            objective,
            x0=np.array([mu0, np.log(scale0), shape0]),
            method="Nelder-Mead",
            options={"maxiter": 2000, "xatol": 1e-10, "fatol": 1e-10},
        )
        if best is None or res.fun < best.fun:
            best = res
    mu, log_scale, shape = best.x
    return GevParams(mu=float(mu), scale=float(np.exp(log_scale)), shape=float(shape))
