"""Multiclass relevance vector machines with a multinomial probit link.

Two trainers share the same EM updates (MAP weights, truncated-Gaussian
auxiliary means, Gamma-posterior scales):

* :func:`train_mrvm1` grows the relevance set from empty using sparsity and
  quality factors, with one scale per sample shared by all classes;
* :func:`train_mrvm2` starts from every labelled sample and prunes those whose
  scales blow up for every class.

Expectations over the probit noise ``u ~ N(0, 1)`` use Gauss-Hermite quadrature.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.linalg import cho_factor, cho_solve
from scipy.linalg.lapack import dpotrf, dpotri, dpotrs
from scipy.spatial.distance import cdist
from scipy.special import log_ndtr, ndtr

LOG_SQRT_2PI = 0.5 * np.log(2 * np.pi)


class NumericalError(ArithmeticError):
    pass


class EmptyRelevanceSetError(RuntimeError):
    pass


@dataclass(frozen=True)
class KernelConfig:
    gamma: float
    kind: str = "rbf"

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.kind != "rbf":
            raise ValueError(f"unsupported kernel {self.kind!r}")

    @classmethod
    def for_dimension(cls, D: int) -> "KernelConfig":
        return cls(gamma=1.0 / D)


@dataclass(frozen=True)
class TrainHyper:
    tau: float = 1e-6
    nu: float = 1e-6
    max_iter: int = 500
    conv_tol: float = 1e-4
    stable_iters: int = 3
    quad_nodes: int = 30
    prune_threshold: float = 1e5
    scale_moment: str = "second"   # "second": E[w^2] = w^2 + var(w); "point": w^2 only

    def __post_init__(self):
        for name in ("tau", "nu", "max_iter", "conv_tol", "quad_nodes", "prune_threshold"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.scale_moment not in ("second", "point", "mackay"):
            raise ValueError("scale_moment must be 'second', 'point' or 'mackay'")


@dataclass(frozen=True)
class MrvmModel:
    active_samples: np.ndarray   # (n*, D)
    weights: np.ndarray          # (n*, K)
    scales: np.ndarray           # (n*, K) or (n*, 1) when shared
    kernel: KernelConfig
    K: int
    active_index: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    discriminative: bool = True
    converged: bool = True
    n_iter: int = 0
    quad_nodes: int = 30

    @property
    def n_active(self) -> int:
        return self.active_samples.shape[0]

    def to_dict(self) -> dict:
        return {
            "kernel": {"kind": self.kernel.kind, "gamma": self.kernel.gamma},
            "K": self.K,
            "active_samples": self.active_samples.tolist(),
            "active_index": self.active_index.tolist(),
            "weights": self.weights.tolist(),
            "scales": self.scales.tolist(),
            "discriminative": self.discriminative,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "quad_nodes": self.quad_nodes,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MrvmModel":
        K = int(doc["K"])
        return cls(
            active_samples=np.asarray(doc["active_samples"], dtype=float).reshape(len(doc["active_samples"]), -1),
            weights=np.asarray(doc["weights"], dtype=float).reshape(-1, K),
            scales=np.asarray(doc["scales"], dtype=float),
            kernel=KernelConfig(**doc["kernel"]),
            K=K,
            active_index=np.asarray(doc.get("active_index", []), dtype=int),
            discriminative=bool(doc.get("discriminative", True)),
            converged=bool(doc.get("converged", True)),
            n_iter=int(doc.get("n_iter", 0)),
            quad_nodes=int(doc.get("quad_nodes", 30)),
        )


def kernel_gram(rows, cols, kernel: KernelConfig) -> np.ndarray:
    A = np.atleast_2d(np.asarray(rows, dtype=float))
    B = np.atleast_2d(np.asarray(cols, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise ValueError("rows and cols differ in dimension")
    return np.exp(-kernel.gamma * cdist(A, B, "sqeuclidean"))


_GH_CACHE: dict = {}


def gauss_hermite(n: int):
    """Nodes and log-weights for E[g(u)], u ~ N(0, 1)."""
    if n not in _GH_CACHE:
        x, w = hermgauss(n)
        _GH_CACHE[n] = (np.sqrt(2.0) * x, np.log(w) - 0.5 * np.log(np.pi))
    return _GH_CACHE[n]


def _lse0(a):
    """log-sum-exp over the leading axis; the hot loops call this thousands of times."""
    top = a.max(axis=0)
    top = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        return top + np.log(np.exp(a - top).sum(axis=0))


def _log_cdf(z):
    """log Phi(z); plain log(ndtr) is twice as fast as log_ndtr and exact enough above -5."""
    with np.errstate(divide="ignore"):
        out = np.log(ndtr(z))
    low = z < -5.0
    if low.any():
        out[low] = log_ndtr(z[low])
    return out


def _log_norm_pdf(z):
    return -0.5 * z * z - LOG_SQRT_2PI


def probit_probs_from_scores(M: np.ndarray, quad_nodes: int = 30, normalize: bool = True) -> np.ndarray:
    """P(y = k) = E_u[prod_{j != k} Phi(u + m_k - m_j)] for each row of scores ``M`` (n, K)."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    u, logw = gauss_hermite(quad_nodes)
    n, K = M.shape
    if K == 1:
        return np.ones((n, 1))
    kk, jj = np.nonzero(~np.eye(K, dtype=bool))                # off-diagonal pairs, grouped by k
    lphi = _log_cdf(u[:, None, None] + (M[:, kk] - M[:, jj])[None])   # (G, n, K(K-1))
    inner = lphi.reshape(len(u), n, K, K - 1).sum(axis=3)    # (G, n, K)
    P = np.exp(_lse0(inner + logw[:, None, None]))
    if normalize:
        P = P / P.sum(axis=1, keepdims=True)
    return P


def probit_class_probs(model: MrvmModel, X, quad_nodes: Optional[int] = None,
                       normalize: bool = True) -> np.ndarray:
    """Class probabilities for one point ``(D,)`` or a batch ``(m, D)``."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    Xb = np.atleast_2d(X)
    if model.n_active == 0:
        P = np.full((len(Xb), model.K), 1.0 / model.K)
    else:
        M = kernel_gram(Xb, model.active_samples, model.kernel) @ model.weights
        P = probit_probs_from_scores(M, quad_nodes or model.quad_nodes, normalize)
    return P[0] if single else P


def mrvm_predict(model: MrvmModel, X) -> np.ndarray:
    return probit_class_probs(model, X)


def mrvm_predict_labels(model: MrvmModel, X) -> np.ndarray:
    """Hard labels (1-based): the class with the largest auxiliary mean."""
    Xb = np.atleast_2d(np.asarray(X, dtype=float))
    if model.n_active == 0:
        return np.ones(len(Xb), dtype=int)
    M = kernel_gram(Xb, model.active_samples, model.kernel) @ model.weights
    return np.argmax(M, axis=1) + 1


# -- EM pieces ----------------------------------------------------------------

def _aux_shift_log(c, logw):
    """Log-space shift for rows whose normaliser underflows in direct space."""
    lphi = _log_cdf(c)
    total = lphi.sum(axis=2)                                   # (G, n): log prod_{l != j}
    log_den = _lse0(total + logw[:, None])
    log_num = _lse0(total[:, :, None] - lphi + _log_norm_pdf(c) + logw[:, None, None])
    return np.exp(log_num - log_den[:, None])


def update_auxiliaries(M: np.ndarray, labels, quad_nodes: int = 30) -> np.ndarray:
    """Means of the cone-truncated Gaussian over auxiliaries given scores ``M`` (n, K).

    For the true class j and every other class k:
        f_k = m_k - E[phi(u + m_j - m_k) prod_{l != j,k} Phi(u + m_j - m_l)]
                    / E[prod_{l != j} Phi(u + m_j - m_l)]
    and f_j = m_j - sum_{k != j} (f_k - m_k).
    """
    M = np.asarray(M, dtype=float)
    y = np.asarray(labels, dtype=int) - 1
    n, K = M.shape
    rows = np.arange(n)
    u, logw = gauss_hermite(quad_nodes)
    mj = M[rows, y]
    # column indices of the K-1 classes other than the true one
    other = np.arange(K - 1)[None, :] + (np.arange(K - 1)[None, :] >= y[:, None])
    d = (mj[:, None] - np.take_along_axis(M, other, axis=1)).T        # (K-1, n)
    c = d[:, None, :] + u[None, :, None]                               # (K-1, G, n)
    cdf = ndtr(c)
    # leave-one-out products over the other classes: prefix pass then suffix pass
    excl = np.empty_like(cdf)
    run = np.ones(c.shape[1:])
    for i in range(K - 1):
        excl[i] = run
        run = run * cdf[i]
    run = np.ones(c.shape[1:])
    for i in range(K - 2, -1, -1):
        excl[i] *= run
        run = run * cdf[i]
    w = np.exp(logw)
    den = w @ run                                              # run now holds the full product
    num = np.einsum("g,kgn->nk", w, excl * np.exp(-0.5 * c * c)) * np.exp(-LOG_SQRT_2PI)
    # below this the dropped underflowed terms could matter relative to den
    bad = den < 1e-250
    with np.errstate(divide="ignore", invalid="ignore"):
        shift = num / den[:, None]
    if bad.any():
        shift[bad] = _aux_shift_log(c[:, :, bad].transpose(1, 2, 0), logw)
    F = M.copy()
    F[rows[:, None], other] -= shift
    F[rows, y] = mj + shift.sum(axis=1)
    return F


def _solve_spd(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve A X = B for symmetric PD A, with ridge jitter 1e-8 * mean diagonal on failure."""
    try:
        return cho_solve(cho_factor(A, lower=True, check_finite=False), B, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    ridge = 1e-8 * max(np.mean(np.diag(A)), 1e-300)
    for _ in range(6):
        try:
            return cho_solve(cho_factor(A + ridge * np.eye(len(A)), lower=True, check_finite=False), B,
                             check_finite=False)
        except np.linalg.LinAlgError:
            ridge *= 100.0
    raise NumericalError("linear system is singular even after ridge jitter")


def _spd_solve_with_diag(A: np.ndarray, b: np.ndarray):
    """Solve A x = b and return diag(A^-1) for symmetric PD ``A``, sharing one Cholesky factor."""
    L, info = dpotrf(A, lower=1, clean=0)
    if info == 0:
        x, info = dpotrs(L, b, lower=1)
        inv, info2 = dpotri(L, lower=1)
        if info == 0 and info2 == 0:
            return x, np.diagonal(inv).copy()
    sol = _solve_spd(A, np.column_stack([b, np.eye(len(A))]))
    return sol[:, 0], np.diag(sol[:, 1:]).copy()


def update_weights(Kstar: np.ndarray, F: np.ndarray, scales: np.ndarray, return_var: bool = False):
    """w_k = (K* K*^T + diag(alpha_k))^{-1} K* f_k for each class; ``Kstar`` is (n*, n).

    With ``return_var`` also returns the posterior weight variances (diagonal of
    the inverse system matrix), shape (n*, K).
    """
    G = Kstar @ Kstar.T
    B = Kstar @ F                                              # (n*, K)
    n, K = B.shape
    scales = np.asarray(scales, dtype=float).reshape(n, -1)
    W = np.empty_like(B)
    V = np.empty_like(B)
    extra = np.eye(n) if return_var else np.empty((n, 0))
    if scales.shape[1] == 1:                                   # shared: one system for all classes
        sol = _solve_spd(G + np.diag(scales[:, 0]), np.hstack([B, extra]))
        W[:] = sol[:, :K]
        if return_var:
            V[:] = np.diag(sol[:, K:])[:, None]
    elif return_var:
        diag = np.arange(n)
        for k in range(K):
            A = G.copy()
            A[diag, diag] += scales[:, k]
            W[:, k], V[:, k] = _spd_solve_with_diag(A, B[:, k])
    else:
        for k in range(K):
            sol = _solve_spd(G + np.diag(scales[:, k]), np.column_stack([B[:, k], extra]))
            W[:, k] = sol[:, 0]
            if return_var:
                V[:, k] = np.diag(sol[:, 1:])
    return (W, V) if return_var else W


def update_scales(W2: np.ndarray, tau: float, nu: float) -> np.ndarray:
    """Gamma-posterior mean (2 tau + 1) / (E[w^2] + 2 nu) given a second moment ``W2``."""
    return (2.0 * tau + 1.0) / (W2 + 2.0 * nu)


@dataclass
class MrvmState:
    weights: np.ndarray      # (n*, K)
    auxiliaries: np.ndarray  # (n, K)
    scales: np.ndarray       # (n*, K)


def mrvm_em_step(state: MrvmState, gram: np.ndarray, labels, hyper: TrainHyper = None) -> MrvmState:
    """One pass: weights from current auxiliaries and scales, then auxiliaries, then scales.

    ``gram`` is K* with shape (n*, n): active samples against all training points.
    The scale update uses E[w^2] = w^2 + var(w) unless ``hyper.scale_moment == "point"``,
    in which case the bare w^2 is used.
    """
    hyper = hyper or TrainHyper()
    W, V = update_weights(gram, state.auxiliaries, state.scales, return_var=True)
    F = update_auxiliaries(gram.T @ W, labels, hyper.quad_nodes)
    if hyper.scale_moment == "point":
        A = update_scales(W * W, hyper.tau, hyper.nu)
    elif hyper.scale_moment == "second":
        A = update_scales(W * W + V, hyper.tau, hyper.nu)
    else:
        gamma = np.clip(1.0 - state.scales * V, 0.0, 1.0)
        A = (2.0 * hyper.tau + gamma) / (W * W + 2.0 * hyper.nu)
    return MrvmState(W, F, A)


# -- sparsity / quality factors (shared scales) ------------------------------

def sparsity_quality(Phi: np.ndarray, F: np.ndarray, active, alphas):
    """s_i, q_{k,i} and theta_i for every column of ``Phi`` (n, N) at once.

    ``active`` lists member columns with shared scales ``alphas``. Uses
    Sigma = (A + Phi_A^T Phi_A)^{-1}; members are corrected to exclude themselves.
    """
    active = np.asarray(active, dtype=int)
    alphas = np.asarray(alphas, dtype=float)
    K = F.shape[1]
    PtP = np.einsum("ij,ij->j", Phi, Phi)
    PtF = Phi.T @ F                                            # (N, K)
    if active.size:
        PA = Phi[:, active]
        Sigma_inv = np.diag(alphas) + PA.T @ PA
        PtPA = Phi.T @ PA                                      # (N, n*)
        Z = _solve_spd(Sigma_inv, PtPA.T)                      # (n*, N)
        S = PtP - np.einsum("ij,ji->i", PtPA, Z)
        Q = PtF - Z.T @ (PA.T @ F)
    else:
        S, Q = PtP.copy(), PtF.copy()
    s, q = S.copy(), Q.copy()
    if active.size:
        a = alphas
        denom = a - S[active]
        s[active] = a * S[active] / denom
        q[active] = (a / denom)[:, None] * Q[active]
    theta = np.sum(q * q, axis=1) - K * s
    return s, q, theta


def theta_contributions(Phi: np.ndarray, F: np.ndarray, active, alphas, candidate: int):
    """Dense evaluation for one candidate: builds C_{-i} = I + sum_{j != i} alpha_j^{-1} phi_j phi_j^T."""
    active = np.asarray(active, dtype=int)
    alphas = np.asarray(alphas, dtype=float)
    n = Phi.shape[0]
    C = np.eye(n)
    for j, a in zip(active, alphas):
        if j != candidate:
            C += np.outer(Phi[:, j], Phi[:, j]) / a
    phi = Phi[:, candidate]
    Ci_phi = np.linalg.solve(C, phi)
    s = float(phi @ Ci_phi)
    q = F.T @ Ci_phi
    theta = float(np.sum(q * q) - F.shape[1] * s)
    return s, q, theta


# -- trainers -----------------------------------------------------------------

def _init_auxiliaries(labels, K: int) -> np.ndarray:
    y = np.asarray(labels, dtype=int)
    F = np.zeros((y.size, K))
    F[np.arange(y.size), y - 1] = 1.0
    return F


def _check_inputs(X, labels, K):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(labels, dtype=int)
    if len(y) < 1 or len(X) != len(y):
        raise ValueError("need at least one labelled point with matching features")
    K = int(y.max()) if K is None else int(K)
    if y.min() < 1 or y.max() > K:
        raise ValueError(f"labels must lie in 1..{K}")
    return X, y, K


def _w_change(W_old, W_new) -> float:
    if W_old is None or W_old.shape != W_new.shape:
        return np.inf
    ref = max(np.linalg.norm(W_old), 1e-12)
    return float(np.linalg.norm(W_new - W_old) / ref)


def _degenerate(X, K, kernel, hyper, n_iter=0) -> MrvmModel:
    D = X.shape[1]
    return MrvmModel(np.empty((0, D)), np.empty((0, K)), np.empty((0, 1)), kernel, K,
                     np.empty(0, dtype=int), discriminative=False, converged=False,
                     n_iter=n_iter, quad_nodes=hyper.quad_nodes)


def train_mrvm1(X, labels, kernel: Optional[KernelConfig] = None, hyper: TrainHyper = TrainHyper(),
                K: Optional[int] = None) -> MrvmModel:
    """Constructive training with shared per-sample scales.

    Each iteration refreshes weights and auxiliaries, re-estimates every member
    with theta > 0 (alpha = K s^2 / theta), then takes one structural step: drop
    the member with the lowest theta <= 0 if there is one, else admit the
    best-scoring non-member with theta > 0. Samples may re-enter. One step per
    iteration keeps the active set from oscillating between large and small sets.
    If nothing has theta > 0 at the start, a non-discriminative (uniform) model
    is returned.
    """
    X, y, K = _check_inputs(X, labels, K)
    kernel = kernel or KernelConfig.for_dimension(X.shape[1])
    Phi = kernel_gram(X, X, kernel)
    F = _init_auxiliaries(y, K)
    s0, _, theta = sparsity_quality(Phi, F, [], [])
    if not np.any(theta > 0):
        return _degenerate(X, K, kernel, hyper)
    first = int(np.argmax(theta))
    active = [first]
    alphas = {first: K * s0[first] ** 2 / theta[first]}

    W_prev, stable, prev_set = None, 0, None
    converged = False
    it = 0
    for it in range(1, hyper.max_iter + 1):
        act = np.array(active)
        a = np.array([alphas[i] for i in active])
        W = update_weights(Phi[:, act].T, F, a)
        F = update_auxiliaries(Phi[:, act] @ W, y, hyper.quad_nodes)
        change = _w_change(W_prev, W)
        W_prev = W

        s, _, theta = sparsity_quality(Phi, F, act, a)
        for i in active:
            if theta[i] > 0:
                alphas[i] = K * s[i] ** 2 / theta[i]
        keep = list(active)
        bad = [i for i in active if theta[i] <= 0]
        if bad:
            worst = min(bad, key=lambda i: theta[i])
            keep.remove(worst)
            alphas.pop(worst)
        else:
            free = np.ones(len(y), dtype=bool)
            free[keep] = False
            outside = np.nonzero(free)[0]
            if outside.size:
                best = outside[np.argmax(theta[outside])]
                if theta[best] > 0:
                    keep.append(int(best))
                    alphas[int(best)] = K * s[best] ** 2 / theta[best]
        active = sorted(keep)
        cur_set = tuple(active)
        stable = stable + 1 if cur_set == prev_set else 0
        prev_set = cur_set
        if change < hyper.conv_tol and stable >= hyper.stable_iters:
            converged = True
            break

    act = np.array(active)
    a = np.array([alphas[i] for i in active])
    W = update_weights(Phi[:, act].T, F, a)
    return MrvmModel(X[act].copy(), W, a[:, None].copy(), kernel, K, act,
                     discriminative=True, converged=converged, n_iter=it, quad_nodes=hyper.quad_nodes)


def train_mrvm2(X, labels, kernel: Optional[KernelConfig] = None, hyper: TrainHyper = TrainHyper(),
                K: Optional[int] = None) -> MrvmModel:
    """Top-down training: start from all samples, prune those with every scale above threshold."""
    X, y, K = _check_inputs(X, labels, K)
    kernel = kernel or KernelConfig.for_dimension(X.shape[1])
    Phi = kernel_gram(X, X, kernel)
    n = len(y)
    active = np.arange(n)
    state = MrvmState(np.zeros((n, K)), _init_auxiliaries(y, K), np.ones((n, K)))
    W_prev, stable = None, 0
    converged = False
    it = 0
    for it in range(1, hyper.max_iter + 1):
        state = mrvm_em_step(state, Phi[active], y, hyper)
        change = _w_change(W_prev, state.weights)
        prune = np.all(state.scales > hyper.prune_threshold, axis=1)
        if prune.all():
            raise EmptyRelevanceSetError("empty relevance set: every sample was pruned")
        if prune.any():
            active = active[~prune]
            state = MrvmState(state.weights[~prune], state.auxiliaries, state.scales[~prune])
            stable = 0
            W_prev = None
        else:
            stable += 1
            W_prev = state.weights
        if change < hyper.conv_tol and stable >= hyper.stable_iters:
            converged = True
            break
    W = update_weights(Phi[active], state.auxiliaries, state.scales)
    return MrvmModel(X[active].copy(), W, state.scales.copy(), kernel, K, active,
                     discriminative=True, converged=converged, n_iter=it, quad_nodes=hyper.quad_nodes)
