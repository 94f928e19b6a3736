"""Semi-supervised EM for the Bayesian GMM.

Labelled rows contribute one-hot responsibilities, unlabelled rows soft ones. The
M-step is the weighted conjugate update; the E-step and the objective use the MAP
point estimate (mean m_n, covariance S_n / (v_n + D + 2), Dirichlet-mode mixing),
which is the setting in which EM is guaranteed not to decrease the objective.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp, xlogy
from scipy.stats import invwishart, multivariate_normal

from .gmm import (GmmPosterior, NiwPrior, fit_supervised, fit_weighted, one_hot,
                  predict_posterior, robust_cholesky)


@dataclass(frozen=True)
class Responsibilities:
    matrix: np.ndarray        # (n + m, K): labelled rows first
    n_labelled: int

    @property
    def unlabelled(self) -> np.ndarray:
        return self.matrix[self.n_labelled:]

    @property
    def effective_counts(self) -> np.ndarray:
        """r_k: soft counts from the unlabelled rows only."""
        return self.unlabelled.sum(axis=0)

    @property
    def total_counts(self) -> np.ndarray:
        return self.matrix.sum(axis=0)


@dataclass
class EmResult:
    posterior: GmmPosterior
    converged: bool
    n_iter: int
    objective_trace: list = field(default_factory=list)
    responsibilities: Responsibilities = None


def _gauss_logpdf(X, mean, cov) -> np.ndarray:
    L = robust_cholesky(cov)
    z = np.linalg.solve(L, (X - mean).T)
    D = mean.size
    return (-0.5 * np.sum(z * z, axis=0) - np.sum(np.log(np.diag(L)))
            - 0.5 * D * np.log(2 * np.pi))


def map_log_joint(X, posterior: GmmPosterior) -> np.ndarray:
    """log lambda_k + log N(x | mu_k, Sigma_k) at the MAP point: shape (n, K)."""
    X = np.asarray(X, dtype=float).reshape(-1, posterior.D)
    covs = posterior.map_covariances()
    lam = posterior.map_mixing()
    out = np.empty((X.shape[0], posterior.K))
    with np.errstate(divide="ignore"):
        log_lam = np.log(lam)
    for k in range(posterior.K):
        out[:, k] = _gauss_logpdf(X, posterior.means[k], covs[k]) + log_lam[k]
    return out


def e_step(pool_features, labelled_features, labelled_labels, posterior: GmmPosterior,
           plugin: bool = True) -> Responsibilities:
    """Responsibilities for labelled (one-hot) then unlabelled rows.

    ``plugin=True`` scores unlabelled rows with the MAP Gaussian mixture; otherwise
    with the Student-t class posterior of :func:`gmm.predict_posterior`.
    """
    Xu = np.asarray(pool_features, dtype=float).reshape(-1, posterior.D)
    R_l = one_hot(labelled_labels, posterior.K)
    if len(Xu) == 0:
        R_u = np.empty((0, posterior.K))
    elif plugin:
        lj = map_log_joint(Xu, posterior)
        R_u = np.exp(lj - logsumexp(lj, axis=1, keepdims=True))
    else:
        R_u = np.atleast_2d(predict_posterior(Xu, posterior))
    return Responsibilities(np.vstack([R_l, R_u]), len(R_l))


def log_prior(posterior: GmmPosterior, prior: NiwPrior) -> float:
    """log NIW(mu_k, Sigma_k) summed over classes plus log Dir(lambda) at the MAP point."""
    covs = posterior.map_covariances()
    total = 0.0
    for k in range(posterior.K):
        total += invwishart.logpdf(covs[k], df=prior.v0, scale=prior.S0)
        total += multivariate_normal.logpdf(posterior.means[k], prior.m0, covs[k] / prior.kappa0)
    lam = posterior.map_mixing()
    a = posterior.alpha
    # xlogy keeps 0 * log 0 = 0 when alpha_k = 1 and a weight collapses
    total += gammaln(a.sum()) - gammaln(a).sum() + xlogy(a - 1.0, lam).sum()
    return float(total)


def _objective_terms(Xl, yl, Xu, posterior: GmmPosterior, prior: NiwPrior):
    """Objective value plus the unlabelled log joint, which the next E-step reuses."""
    val = log_prior(posterior, prior)
    lj_u = map_log_joint(Xu, posterior) if len(Xu) else np.empty((0, posterior.K))
    if len(Xu):
        val += logsumexp(lj_u, axis=1).sum()
    if len(Xl):
        lj = map_log_joint(Xl, posterior)
        val += lj[np.arange(len(yl)), np.asarray(yl) - 1].sum()
    return float(val), lj_u


def objective(Xl, yl, Xu, posterior: GmmPosterior, prior: NiwPrior) -> float:
    """Log joint density of labelled data, unlabelled data (labels summed out) and parameters."""
    return _objective_terms(Xl, yl, Xu, posterior, prior)[0]


def em_fit(labelled_features, labelled_labels, pool_features, prior: NiwPrior, alpha=None,
           K: int = None, tol: float = 1e-6, max_iter: int = 100) -> EmResult:
    """Start from the supervised fit, then alternate E and M steps.

    Stops when the relative objective change drops below ``tol``; otherwise returns
    the last iterate with ``converged=False``.
    """
    Xl = np.asarray(labelled_features, dtype=float).reshape(-1, prior.D)
    yl = np.asarray(labelled_labels, dtype=int)
    Xu = np.asarray(pool_features, dtype=float).reshape(-1, prior.D)
    if len(yl) == 0:
        raise ValueError("EM needs at least one labelled point")
    post = fit_supervised(Xl, yl, prior, alpha, K)
    X = np.vstack([Xl, Xu])
    R_l = one_hot(yl, post.K)
    value, lj_u = _objective_terms(Xl, yl, Xu, post, prior)
    trace = [value]
    if len(Xu) == 0:
        return EmResult(post, True, 0, trace, Responsibilities(R_l, len(R_l)))
    converged = False
    it = 0
    resp = None
    for it in range(1, max_iter + 1):
        # E-step from the log joint already computed for the objective
        R_u = np.exp(lj_u - logsumexp(lj_u, axis=1, keepdims=True))
        resp = Responsibilities(np.vstack([R_l, R_u]), len(R_l))
        post = fit_weighted(X, resp.matrix, prior, post.alpha)
        value, lj_u = _objective_terms(Xl, yl, Xu, post, prior)
        trace.append(value)
        if abs(trace[-1] - trace[-2]) <= tol * abs(trace[-2]):
            converged = True
            break
    return EmResult(post, converged, it, trace, resp)
