"""Pairwise composite negative log-likelihood over a block-maxima panel.

Assembles, for a dataset of K sites and N blocks, the sum over all
distinct site pairs and blocks of the bivariate Smith log-density plus
the GEV -> Frechet log Jacobian.  Marginal GEV parameters follow linear
regression models on site covariates (identity links for location and
shape, exponential for scale); the dependence block is the storm
covariance, optimised through its Cholesky factor with log diagonal so
positive definiteness never needs explicit constraints.

Missing observations are handled by pairwise deletion: a (block, i, j)
term enters iff both observations are present.  Support-violating
observations contribute a smooth penalty that keeps the surface finite
and sloped back toward feasibility.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gev import SHAPE_EPS, frechet_transform
from .scores import density_partials, mahalanobis_gradient, margin_chain
from .smith import CovMatrix, mahalanobis_a, bivariate_log_density

COVARIATES = ("lon", "lat", "alt")

#: Base penalty for a support-violating pair term.
SUPPORT_PENALTY = 1e4


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


@dataclass
class DataSet:
    """Station metadata plus an N x K panel of block maxima (NaN = missing)."""

    ids: list
    coords: np.ndarray
    alt: np.ndarray
    years: np.ndarray
    maxima: np.ndarray

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float)
        self.alt = np.asarray(self.alt, dtype=float)
        self.years = np.asarray(self.years)
        self.maxima = np.asarray(self.maxima, dtype=float)
        k = len(self.ids)
        if k < 2:
            raise DataError(f"need at least 2 sites, got {k}")
        if len(set(self.ids)) != k:
            raise DataError("site ids must be unique")
        if self.coords.shape != (k, 2):
            raise DataError(f"coords must be ({k}, 2), got {self.coords.shape}")
        if self.alt.shape != (k,):
            raise DataError(f"alt must be ({k},), got {self.alt.shape}")
        if self.maxima.ndim != 2 or self.maxima.shape[1] != k:
            raise DataError(f"maxima must be (N, {k}), got {self.maxima.shape}")
        if self.maxima.shape[0] != self.years.shape[0]:
            raise DataError("years and maxima row counts differ")
        observed = np.isfinite(self.maxima)
        if np.any(observed.sum(axis=0) == 0):
            empty = [self.ids[i] for i in np.flatnonzero(observed.sum(axis=0) == 0)]
            raise DataError(f"sites with no observations: {empty}")

    @property
    def n_sites(self):
        return len(self.ids)

    @property
    def n_blocks(self):
        return self.maxima.shape[0]


@dataclass(frozen=True)
class ModelSpec:
    """Formulas per GEV parameter plus the (always 3-parameter) dependence block.

    Formulas are sums of terms from {1, lon, lat, alt}, e.g. "1 + lat + alt".
    With frechet_margins=True the margins are treated as known unit Frechet
    and only the dependence block is estimated.
    """

    loc: str = "1"
    scale: str = "1"
    shape: str = "1"
    frechet_margins: bool = False
    sigma_init: tuple = None


def parse_formula(formula):
    """Split a formula like '1 + lat + alt' into its term names."""
    terms = [t.strip() for t in formula.split("+")]
    if any(not t for t in terms):
        raise DataError(f"malformed formula: {formula!r}")
    for t in terms:
        if t != "1" and t not in COVARIATES:
            raise DataError(f"unknown covariate {t!r} in formula {formula!r}")
    if terms[0] != "1":
        raise DataError(f"formula must start with an intercept term: {formula!r}")
    if len(set(terms)) != len(terms):
        raise DataError(f"duplicate terms in formula {formula!r}")
    return terms


@dataclass
class Design:
    """A standardized K x p design matrix with its de-standardization map."""

    terms: list
    matrix: np.ndarray
    centers: np.ndarray
    scales: np.ndarray

    @property
    def n_coef(self):
        return self.matrix.shape[1]

    def row(self, lon, lat, alt):
        """Standardized design row(s) for arbitrary locations."""
        raw = {"lon": np.asarray(lon, float), "lat": np.asarray(lat, float),
               "alt": np.asarray(alt, float)}
        cols = []
        for k, t in enumerate(self.terms):
            if t == "1":
                cols.append(np.ones_like(raw["lon"]))
            else:
                cols.append((raw[t] - self.centers[k]) / self.scales[k])
        return np.stack(cols, axis=-1)

    def to_original_scale(self, beta, cov=None):
        """Map standardized-coefficient estimates (and covariance) to raw covariates."""
        p = self.n_coef
        t = np.eye(p)
        for k in range(1, p):
            t[k, k] = 1.0 / self.scales[k]
            t[0, k] = -self.centers[k] / self.scales[k]
        beta_orig = t @ np.asarray(beta, float)
        if cov is None:
            return beta_orig
        return beta_orig, t @ cov @ t.T


def _build_one_design(terms, dataset: DataSet) -> Design:
    cols, centers, scales = [], [], []
    for t in terms:
        if t == "1":
            col = np.ones(dataset.n_sites)
            c, s = 0.0, 1.0
        else:
            raw = {"lon": dataset.coords[:, 0], "lat": dataset.coords[:, 1],
                   "alt": dataset.alt}[t]
            c = raw.mean()
            s = raw.std(ddof=0)
            if s == 0.0:
                s = 1.0
            col = (raw - c) / s
        cols.append(col)
        centers.append(c)
        scales.append(s)
    matrix = np.column_stack(cols)
    if np.linalg.matrix_rank(matrix) < matrix.shape[1]:
        raise DataError(f"rank-deficient design for terms {terms}")
    return Design(terms=list(terms), matrix=matrix,
                  centers=np.array(centers), scales=np.array(scales))


def build_design(model: ModelSpec, dataset: DataSet):
    """Design matrices (loc, scale, shape) for a model over the dataset's sites."""
    return (
        _build_one_design(parse_formula(model.loc), dataset),
        _build_one_design(parse_formula(model.scale), dataset),
        _build_one_design(parse_formula(model.shape), dataset),
    )


# ---------------------------------------------------------------------------
# parameter packing
# ---------------------------------------------------------------------------

def sigma_to_unconstrained(s11, s12, s22):
    """Map (sigma_1^2, sigma_12, sigma_2^2) to (log L11, L21, log L22)."""
    l11 = np.sqrt(s11)
    l21 = s12 / l11
    l22sq = s22 - l21 ** 2
    if l22sq <= 0:
        raise ValueError("covariance is not positive definite")
    return np.array([np.log(l11), l21, 0.5 * np.log(l22sq)])


def sigma_from_unconstrained(c):
    """Inverse of :func:`sigma_to_unconstrained`; always positive definite."""
    l11, l21, l22 = np.exp(c[0]), c[1], np.exp(c[2])
    return np.array([l11 ** 2, l11 * l21, l21 ** 2 + l22 ** 2])


def sigma_unconstrained_jacobian(c):
    """d(s11, s12, s22)/d(c1, c2, c3) as a 3 x 3 array."""
    l11, l21, l22 = np.exp(c[0]), c[1], np.exp(c[2])
    return np.array([
        [2.0 * l11 ** 2, 0.0, 0.0],
        [l11 * l21, l11, 0.0],
        [0.0, 2.0 * l21, 2.0 * l22 ** 2],
    ])


class PairwiseProblem:
    """Precomputed structure for repeated composite-likelihood evaluation.

    The packed parameter vector is psi = (sigma block, beta_mu, beta_lambda,
    beta_xi); the "natural" form carries (sigma_1^2, sigma_12, sigma_2^2)
    directly while the unconstrained form used by optimizers replaces the
    sigma block with the log-diagonal Cholesky coordinates.
    """

    def __init__(self, dataset: DataSet, model: ModelSpec):
        self.dataset = dataset
        self.model = model
        self.design_mu, self.design_scale, self.design_xi = build_design(model, dataset)

        k = dataset.n_sites
        pi, pj = np.triu_indices(k, 1)
        self.pair_i, self.pair_j = pi, pj
        self.h = dataset.coords[pj] - dataset.coords[pi]
        if np.any(np.all(self.h == 0.0, axis=1)):
            raise DataError("coincident site coordinates: pairwise density degenerates")

        observed = np.isfinite(dataset.maxima)
        both = observed[:, pi] & observed[:, pj]
        self.term_n, self.term_p = np.nonzero(both)

        if model.frechet_margins:
            self.n_coef = (0, 0, 0)
        else:
            self.n_coef = (
                self.design_mu.n_coef,
                self.design_scale.n_coef,
                self.design_xi.n_coef,
            )
        self.dim = 3 + sum(self.n_coef)
        self.param_names = self._param_names()

    def _param_names(self):
        names = ["sigma11", "sigma12", "sigma22"]
        if not self.model.frechet_margins:
            for prefix, design in (("loc", self.design_mu),
                                   ("scale", self.design_scale),
                                   ("shape", self.design_xi)):
                names += [f"{prefix}:{t}" for t in design.terms]
        return names

    # -- packing ----------------------------------------------------------

    def split(self, psi):
        """Split a packed vector into (sigma, beta_mu, beta_scale, beta_xi)."""
        psi = np.asarray(psi, dtype=float)
        if psi.shape != (self.dim,):
            raise ValueError(f"expected parameter vector of length {self.dim}")
        p1, p2, p3 = self.n_coef
        return (psi[:3], psi[3:3 + p1], psi[3 + p1:3 + p1 + p2], psi[3 + p1 + p2:])

    def to_unconstrained(self, psi):
        theta = np.array(psi, dtype=float)
        theta[:3] = sigma_to_unconstrained(*psi[:3])
        return theta

    def to_natural(self, theta):
        psi = np.array(theta, dtype=float)
        psi[:3] = sigma_from_unconstrained(theta[:3])
        return psi

    def initial_margins(self):
        """Fixed unit-Frechet margins used when frechet_margins is set."""
        k = self.dataset.n_sites
        return np.ones(k), np.ones(k), np.ones(k)

    def margins(self, psi):
        """Per-site (mu, scale, xi) implied by the packed vector."""
        if self.model.frechet_margins:
            return self.initial_margins()
        _, b_mu, b_scale, b_xi = self.split(psi)
        mu = self.design_mu.matrix @ b_mu
        scale = np.exp(self.design_scale.matrix @ b_scale)
        xi = self.design_xi.matrix @ b_xi
        return mu, scale, xi

    # -- evaluation --------------------------------------------------------

    def _site_quantities(self, psi):
        mu, scale, xi = self.margins(psi)
        y = self.dataset.maxima
        z, u = frechet_transform(y, mu, scale, xi)
        small = np.abs(xi) < SHAPE_EPS
        with np.errstate(invalid="ignore", divide="ignore"):
            x = (y - mu) / scale
            log_jac = np.where(
                small,
                -np.log(scale) + x * (1.0 - xi),
                -np.log(scale) + (1.0 / np.where(small, 1.0, xi) - 1.0)
                * np.log(np.where(u > 0, u, np.nan)),
            )
        return mu, scale, xi, z, u, log_jac

    def nll(self, psi):
        """Composite negative log-likelihood at a natural-form packed vector."""
        return self._evaluate(psi, want_scores=False)["nll"]

    def nll_unconstrained(self, theta):
        return self.nll(self.to_natural(theta))

    def gradient_unconstrained(self, theta):
        res = self._evaluate(self.to_natural(theta), want_scores=True)
        grad = res["gradient"].copy()
        # the optimizer may probe support-violating points whose gradient is
        # non-finite; propagate those values silently, the line search backs off
        with np.errstate(invalid="ignore"):
            grad[:3] = sigma_unconstrained_jacobian(theta[:3]).T @ grad[:3]
        return grad

    def gradient(self, psi):
        """Gradient of the NLL in the natural parameterization."""
        return self._evaluate(psi, want_scores=True)["gradient"]

    def score_matrix(self, psi):
        """Per-term scores of the composite log-likelihood, (n_terms, dim).

        Rows follow the fixed (block outer, pair inner lexicographic)
        enumeration; support-violating terms carry the penalty gradient.
        """
        return self._evaluate(psi, want_scores=True)["scores"]

    def estimate_J(self, psi):
        """Outer-product estimate of the score variance, summed per (block, pair)."""
        s = self.score_matrix(psi)
        return s.T @ s

    def estimate_J_by_block(self, psi):
        """Alternative grouping: outer products of per-block total scores."""
        s = self._evaluate(psi, want_scores=True)["scores"]
        n_blocks = self.dataset.n_blocks
        totals = np.zeros((n_blocks, self.dim))
        np.add.at(totals, self.term_n, s)
        return totals.T @ totals

    def _evaluate(self, psi, want_scores):
        psi = np.asarray(psi, dtype=float)
        sigma = psi[:3]
        if sigma[0] <= 0 or sigma[2] <= 0 or sigma[0] * sigma[2] - sigma[1] ** 2 <= 0:
            # non-PD sigma only reachable through natural-form probing
            return {"nll": 1e12, "gradient": np.zeros(self.dim),
                    "scores": np.zeros((0, self.dim)), "n_violations": 0}
        cov = CovMatrix(*sigma)
        mu, scale, xi, z, u, log_jac = self._site_quantities(psi)

        a = mahalanobis_a(self.h, cov)
        tn, tp = self.term_n, self.term_p
        si = self.pair_i[tp]
        sj = self.pair_j[tp]

        ok = (u[tn, si] > 0) & (u[tn, sj] > 0)
        bad = ~ok
        gn, gp = tn[ok], tp[ok]
        gi, gj = si[ok], sj[ok]

        zi, zj = z[gn, gi], z[gn, gj]
        a_t = a[gp]
        log_f = bivariate_log_density(zi, zj, a_t) + log_jac[gn, gi] + log_jac[gn, gj]

        # smooth penalty for support-violating terms
        viol = np.maximum(0.0, -u[tn[bad], si[bad]]) + np.maximum(
            0.0, -u[tn[bad], sj[bad]]
        )
        penalty = SUPPORT_PENALTY * (1.0 + viol ** 2)
        nll = -np.sum(log_f) + np.sum(penalty)
        out = {"nll": float(nll), "n_violations": int(bad.sum())}
        if not want_scores:
            return out

        scores = np.zeros((tn.size, self.dim))
        dg_dzi, dg_dzj, dg_da = density_partials(zi, zj, a_t)
        da_dsigma = mahalanobis_gradient(self.h, cov)
        scores[np.flatnonzero(ok), :3] = dg_da[:, None] * da_dsigma[gp]

        if not self.model.frechet_margins:
            mc = margin_chain(self.dataset.maxima, mu, scale, xi)
            p1, p2, p3 = self.n_coef
            offsets = (3, 3 + p1, 3 + p1 + p2)
            blocks = (
                (self.design_mu, "dz_dmu", "dE_dmu"),
                (self.design_scale, "dz_deta", "dE_deta"),
                (self.design_xi, "dz_dxi", "dE_dxi"),
            )
            rows_ok = np.flatnonzero(ok)
            for offset, (design, dz_key, de_key) in zip(offsets, blocks):
                dz, de = mc[dz_key], mc[de_key]
                contrib_i = (dg_dzi * dz[gn, gi] + de[gn, gi])[:, None] * design.matrix[gi]
                contrib_j = (dg_dzj * dz[gn, gj] + de[gn, gj])[:, None] * design.matrix[gj]
                scores[rows_ok, offset:offset + design.n_coef] = contrib_i + contrib_j

            # penalty gradient pushes violating terms back toward feasibility:
            # d(penalty)/d(theta) = 2e4 * viol * d(viol)/d(theta), viol = sum (-u)+
            if np.any(bad):
                rows_bad = np.flatnonzero(bad)
                x = (self.dataset.maxima - mu) / scale
                du = {"dmu": -xi / scale * np.ones_like(x), "deta": -xi * x, "dxi": x}
                for offset, (design, dz_key, _) in zip(offsets, blocks):
                    key = "d" + dz_key.split("_d")[1]
                    for rb, n_, i_, j_, v_ in zip(
                        rows_bad, tn[bad], si[bad], sj[bad], viol
                    ):
                        g = np.zeros(design.n_coef)
                        for s_ in (i_, j_):
                            if u[n_, s_] <= 0:
                                g -= du[key][n_, s_] * design.matrix[s_]
                        # score of the log-likelihood term = -d(penalty)/d(theta)
                        scores[rb, offset:offset + design.n_coef] = (
                            -2.0 * SUPPORT_PENALTY * v_ * g
                        )

        out["scores"] = scores
        out["gradient"] = -scores.sum(axis=0)
        return out


# ---------------------------------------------------------------------------
# spec-level convenience wrappers
# ---------------------------------------------------------------------------

def pairwise_nll(psi, dataset: DataSet, model: ModelSpec):
    """Composite negative log-likelihood of a packed natural parameter vector."""
    return PairwiseProblem(dataset, model).nll(psi)


def pairwise_gradient(psi, dataset: DataSet, model: ModelSpec, method="analytic"):
    """Gradient of :func:`pairwise_nll` (analytic or central finite differences)."""
    problem = PairwiseProblem(dataset, model)
    if method == "analytic":
        return problem.gradient(psi)
    if method == "fd":
        from .scores import central_difference

        return central_difference(problem.nll, np.asarray(psi, float))
    raise ValueError(f"unknown gradient method {method!r}")
