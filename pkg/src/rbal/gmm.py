"""Supervised Bayesian Gaussian mixture classifier.

Each class has a normal-inverse-Wishart posterior over its mean and covariance
and the mixing proportions a Dirichlet posterior. Class-conditional predictives
are multivariate Student-t; class posteriors follow from Bayes' rule with the
Dirichlet-multinomial class prior ``(n_k + alpha_k) / (n + alpha_0)``.

Counts may be real-valued (responsibility-weighted), which is how the EM module
reuses :func:`fit_weighted`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import gammaln, logsumexp


class NumericalError(ArithmeticError):
    pass


@dataclass(frozen=True)
class NiwPrior:
    m0: np.ndarray
    kappa0: float
    v0: float
    S0: np.ndarray

    def __post_init__(self):
        m0 = np.atleast_1d(np.asarray(self.m0, dtype=float))
        S0 = np.atleast_2d(np.asarray(self.S0, dtype=float))
        D = m0.size
        if S0.shape != (D, D):
            raise ValueError("S0 must be D x D")
        if self.kappa0 <= 0:
            raise ValueError("kappa0 must be positive")
        if self.v0 <= D - 1:
            raise ValueError("v0 must exceed D - 1")
        try:
            np.linalg.cholesky(S0)
        except np.linalg.LinAlgError:
            raise ValueError("S0 must be positive-definite") from None
        object.__setattr__(self, "m0", m0)
        object.__setattr__(self, "S0", S0)
        object.__setattr__(self, "kappa0", float(self.kappa0))
        object.__setattr__(self, "v0", float(self.v0))

    @property
    def D(self) -> int:
        return self.m0.size

    @classmethod
    def default(cls, D: int) -> "NiwPrior":
        # v0 = D + 2 with S0 = (v0 - D - 1) I gives E[Sigma] = I: zero-mean, unit-variance classes.
        v0 = D + 2.0
        return cls(np.zeros(D), 1.0, v0, (v0 - D - 1.0) * np.eye(D))


@dataclass(frozen=True)
class GmmPosterior:
    means: np.ndarray      # (K, D)  m_n
    kappas: np.ndarray     # (K,)
    dofs: np.ndarray       # (K,)    v_n
    scatters: np.ndarray   # (K, D, D) S_n
    alpha: np.ndarray      # (K,)
    counts: np.ndarray     # (K,)    n_k (or effective N_k)

    @property
    def K(self) -> int:
        return self.means.shape[0]

    @property
    def D(self) -> int:
        return self.means.shape[1]

    def class_prior(self) -> np.ndarray:
        """Posterior predictive class probabilities (n_k + alpha_k) / (n + alpha_0)."""
        a = self.counts + self.alpha
        return a / a.sum()

    def map_covariances(self) -> np.ndarray:
        """Joint NIW mode of each covariance: S_n / (v_n + D + 2)."""
        return self.scatters / (self.dofs + self.D + 2.0)[:, None, None]

    def map_mixing(self) -> np.ndarray:
        """Dirichlet mode (alpha_k + N_k - 1) / (alpha_0 + N - K)."""
        num = np.maximum(self.alpha + self.counts - 1.0, 0.0)
        return num / num.sum()

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist()
                for k in ("means", "kappas", "dofs", "scatters", "alpha", "counts")}

    @classmethod
    def from_dict(cls, doc: dict) -> "GmmPosterior":
        return cls(**{k: np.asarray(doc[k], dtype=float)
                      for k in ("means", "kappas", "dofs", "scatters", "alpha", "counts")})


def _default_alpha(K: int, alpha) -> np.ndarray:
    a = np.ones(K) if alpha is None else np.broadcast_to(np.asarray(alpha, dtype=float), (K,)).copy()
    if np.any(a <= 0):
        raise ValueError("Dirichlet concentrations must be positive")
    return a


def fit_weighted(X: np.ndarray, weights: np.ndarray, prior: NiwPrior, alpha=None) -> GmmPosterior:
    """Conjugate update with per-point class weights ``weights`` of shape (n, K).

    Equivalent to S_n = S0 + sum r x x^T + k0 m0 m0^T - k_n m_n m_n^T, evaluated in
    the centred form for accuracy.
    """
    X = np.asarray(X, dtype=float).reshape(-1, prior.D)
    R = np.asarray(weights, dtype=float)
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    K = R.shape[1]
    N = R.sum(axis=0)
    kappas = prior.kappa0 + N
    dofs = prior.v0 + N
    sums = R.T @ X
    means = (prior.kappa0 * prior.m0 + sums) / kappas[:, None]
    scatters = np.empty((K, prior.D, prior.D))
    for k in range(K):
        if N[k] <= 0:
            scatters[k] = prior.S0
            continue
        xbar = sums[k] / N[k]
        Z = X - xbar
        Sc = (Z * R[:, k:k + 1]).T @ Z
        dm = (xbar - prior.m0)[:, None]
        S = prior.S0 + Sc + (prior.kappa0 * N[k] / kappas[k]) * (dm @ dm.T)
        scatters[k] = 0.5 * (S + S.T)
    return GmmPosterior(means, kappas, dofs, scatters, _default_alpha(K, alpha), N)


def one_hot(labels, K: int) -> np.ndarray:
    y = np.asarray(labels, dtype=int)
    R = np.zeros((y.size, K))
    R[np.arange(y.size), y - 1] = 1.0
    return R


def fit_supervised(X, labels, prior: NiwPrior, alpha=None, K: Optional[int] = None) -> GmmPosterior:
    """Posterior from labelled data (labels in ``1..K``); empty classes keep the prior."""
    y = np.asarray(labels, dtype=int)
    if K is None:
        K = int(y.max())
    if y.size and (y.min() < 1 or y.max() > K):
        raise ValueError(f"labels must lie in 1..{K}")
    return fit_weighted(X, one_hot(y, K), prior, alpha)


def prior_posterior(prior: NiwPrior, K: int, alpha=None) -> GmmPosterior:
    return fit_weighted(np.empty((0, prior.D)), np.empty((0, K)), prior, alpha)


def robust_cholesky(S: np.ndarray) -> np.ndarray:
    """Cholesky factor; on failure retry with jitter 1e-9 * trace / D (growing tenfold)."""
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        pass
    D = S.shape[0]
    jitter = 1e-9 * max(np.trace(S) / D, np.finfo(float).tiny)
    for _ in range(8):
        try:
            return np.linalg.cholesky(S + jitter * np.eye(D))
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalError("scale matrix is not positive-definite even after jitter")


def mvt_logpdf(X: np.ndarray, loc: np.ndarray, shape: np.ndarray, dof: float) -> np.ndarray:
    """Multivariate Student-t log density at the rows of ``X``."""
    X = np.atleast_2d(X)
    D = loc.size
    L = robust_cholesky(shape)
    z = np.linalg.solve(L, (X - loc).T)  # triangular, small D
    maha = np.sum(z * z, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return (gammaln(0.5 * (dof + D)) - gammaln(0.5 * dof)
            - 0.5 * D * np.log(dof * np.pi) - 0.5 * logdet
            - 0.5 * (dof + D) * np.log1p(maha / dof))


def student_t_params(posterior: GmmPosterior, k: int):
    """(loc, shape, dof) of the class-``k`` (0-based) predictive."""
    D = posterior.D
    dof = posterior.dofs[k] - D + 1.0
    kap = posterior.kappas[k]
    shape = (kap + 1.0) / (kap * dof) * posterior.scatters[k]
    return posterior.means[k], shape, dof


def class_log_densities(X, posterior: GmmPosterior) -> np.ndarray:
    """log p(x | y = k, D_l) for every row and class: shape (n, K)."""
    X = np.asarray(X, dtype=float)
    X = X.reshape(-1, posterior.D)
    out = np.empty((X.shape[0], posterior.K))
    for k in range(posterior.K):
        out[:, k] = mvt_logpdf(X, *student_t_params(posterior, k))
    return out


def predictive_log_density(x, label: int, posterior: GmmPosterior) -> float:
    """Student-t predictive log density of a single point for class ``label`` (1..K)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (posterior.D,):
        raise ValueError(f"expected a feature vector of length {posterior.D}")
    return float(mvt_logpdf(x[None], *student_t_params(posterior, label - 1))[0])


def predict_posterior(X, posterior: GmmPosterior) -> np.ndarray:
    """Class posterior p(y = k | x, D_l); (K,) for one point, (n, K) for a batch."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    if X.shape[-1] != posterior.D:
        raise ValueError(f"expected features of dimension {posterior.D}")
    logp = class_log_densities(X, posterior) + np.log(posterior.class_prior())
    logp -= logsumexp(logp, axis=1, keepdims=True)
    p = np.exp(logp)
    return p[0] if single else p
