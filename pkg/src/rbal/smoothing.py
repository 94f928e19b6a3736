"""Forward-backward smoothing of latent health states between two inspections.

The chain runs over times a..b. States at a and b are known (inspected), the
intermediate states a+1..b-1 are hidden with observation likelihoods from the
classifier, and transitions depend on the action taken at each step.
Messages are kept in log space so long intervals cannot underflow.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .decision import DecisionProcess
from .gmm import GmmPosterior, class_log_densities


class EvidenceConflictError(ValueError):
    def __init__(self, t: int, message: str = ""):
        self.t = t
        super().__init__(message or f"evidence conflict at step {t}: every state has zero probability")


@dataclass(frozen=True)
class SmoothingInterval:
    y_a: int
    y_b: int
    observations: np.ndarray  # (b - a - 1, D)
    decisions: np.ndarray     # (b - a,)

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=float)
        if obs.ndim == 1:
            obs = obs.reshape(0, 1) if obs.size == 0 else obs[None]
        d = np.asarray(self.decisions, dtype=int).reshape(-1)
        if d.size < 1:
            raise ValueError("an interval needs b > a (at least one decision)")
        if len(obs) != d.size - 1:
            raise ValueError("need exactly one more decision than intermediate observations")
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "decisions", d)

    @property
    def length(self) -> int:
        return self.decisions.size


def _log(a):
    with np.errstate(divide="ignore"):
        return np.log(a)


def smooth_log_likelihoods(y_a: int, y_b: int, log_lik: np.ndarray, decisions,
                           transitions: np.ndarray, t0: int = 0) -> np.ndarray:
    """Smoothed marginals given per-step log likelihoods ``log_lik`` of shape (m, K).

    ``t0`` offsets the step index reported in an :class:`EvidenceConflictError`
    (the first intermediate step is ``t0 + 1``).
    """
    log_lik = np.asarray(log_lik, dtype=float)
    d = np.asarray(decisions, dtype=int)
    m = len(log_lik)
    K = transitions.shape[1]
    if d.size != m + 1:
        raise ValueError("need exactly one more decision than intermediate observations")
    if m == 0:
        return np.empty((0, K))
    logT = _log(transitions)

    fwd = np.empty((m, K))
    prev = np.full(K, -np.inf)
    prev[y_a - 1] = 0.0
    with np.errstate(invalid="ignore"):
        for i in range(m):
            cur = logsumexp(prev[:, None] + logT[d[i]], axis=0) + log_lik[i]
            top = cur.max()
            prev = cur - top if np.isfinite(top) else cur
            fwd[i] = prev

        bwd = np.empty((m, K))
        # last intermediate step: one transition into the inspected state, no likelihood at b
        nxt = logT[d[m]][:, y_b - 1].copy()
        bwd[m - 1] = nxt
        for i in range(m - 2, -1, -1):
            cur = logsumexp(logT[d[i + 1]] + (log_lik[i + 1] + nxt)[None, :], axis=1)
            top = cur.max()
            nxt = cur - top if np.isfinite(top) else cur
            bwd[i] = nxt

    joint = fwd + bwd
    out = np.empty_like(joint)
    for i in range(m):
        z = logsumexp(joint[i]) if np.any(np.isfinite(joint[i])) else -np.inf
        if not np.isfinite(z):
            raise EvidenceConflictError(t0 + i + 1)
        out[i] = np.exp(joint[i] - z)
    return out


def smooth_interval(interval: SmoothingInterval, classifier: GmmPosterior,
                    process: DecisionProcess, t0: int = 0) -> np.ndarray:
    """Marginals p(y_t | y_a, y_b, x_{a+1:b-1}, d_{a:b-1}) for each intermediate step."""
    if classifier.K != process.K:
        raise ValueError("classifier and decision process disagree on K")
    if interval.observations.shape[0]:
        log_lik = class_log_densities(interval.observations, classifier)
    else:
        log_lik = np.empty((0, process.K))
    return smooth_log_likelihoods(interval.y_a, interval.y_b, log_lik,
                                  interval.decisions, process.transitions, t0)


def pseudo_labels(marginals) -> np.ndarray:
    """MAP label (1-based) per marginal; ties go to the lowest class."""
    M = np.asarray(marginals, dtype=float)
    if M.size == 0:
        return np.empty(0, dtype=int)
    return np.argmax(M, axis=1) + 1
