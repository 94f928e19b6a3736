"""Risk-based active learning over a streamed pool, plus the random-querying baseline.

Per pool observation: predict the class posterior, compute EVPI, inspect when
EVPI exceeds the inspection cost, and act (perfect-information action when
inspected, MEU otherwise). After every inspection the classifier is retrained
from scratch and the held-out test metrics are recomputed.

Classifier variants:

``gmm``         supervised Bayesian GMM on the labelled set
``gmm_em``      the same, refined by semi-supervised EM over the pool seen so far
``gmm_smooth``  supervised GMM on labelled plus smoothed pseudo-labelled points
``mrvm1``       constructive multiclass RVM
``mrvm2``       pruning multiclass RVM
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .datasets import Dataset, LabelledSet, UnlabelledPool
from .decision import (DO_NOTHING, DecisionProcess, evpi, optimal_action, perfect_info_policy,
                       scripted_decisions)
from .em import em_fit
from .gmm import NiwPrior, class_log_densities, fit_supervised, predict_posterior
from .metrics import class_proportions, decision_accuracy, macro_f1
from .mrvm import KernelConfig, TrainHyper, probit_class_probs, train_mrvm1, train_mrvm2
from .smoothing import EvidenceConflictError, pseudo_labels, smooth_log_likelihoods

CLASSIFIERS = ("gmm", "gmm_em", "gmm_smooth", "mrvm1", "mrvm2")
UNDAMAGED = 1
PREDICT_CHUNK = 64   # pool rows predicted ahead; a retrain discards the rest


class CampaignError(RuntimeError):
    def __init__(self, step: int, cause: Exception):
        self.step = step
        self.cause = cause
        super().__init__(f"campaign aborted at pool step {step}: {type(cause).__name__}: {cause}")


@dataclass(frozen=True)
class AgentConfig:
    classifier: str
    process: DecisionProcess
    decision_mode: str = "agent"
    name: Optional[str] = None
    prior: Optional[NiwPrior] = None
    alpha: float = 1.0
    em_tol: float = 1e-6
    em_max_iter: int = 100
    mrvm: TrainHyper = field(default_factory=TrainHyper)
    gamma: Optional[float] = None

    def __post_init__(self):
        if self.classifier not in CLASSIFIERS:
            raise ValueError(f"unknown classifier {self.classifier!r}; choose from {CLASSIFIERS}")
        if self.decision_mode not in ("agent", "scripted"):
            raise ValueError("decision_mode must be 'agent' or 'scripted'")

    @property
    def label(self) -> str:
        return self.name or self.classifier


@dataclass
class CampaignResult:
    agent: str
    time_index: np.ndarray        # (n_steps,) dataset time index of each pool step
    posteriors: np.ndarray        # (n_steps, K)
    evpi: np.ndarray              # (n_steps,)
    queried: np.ndarray           # (n_steps,) bool
    actions: np.ndarray           # (n_steps,)
    accuracy_trajectory: list     # length query_count + 1
    f1_trajectory: list
    class_prop_trajectory: list   # (query_count + 1, K)
    labelled_features: np.ndarray
    labelled_labels: np.ndarray
    smoothing_conflicts: int = 0
    nondiscriminative_fits: int = 0

    @property
    def n_steps(self) -> int:
        return len(self.queried)

    @property
    def query_positions(self) -> np.ndarray:
        return np.nonzero(self.queried)[0]

    @property
    def query_count(self) -> int:
        return int(self.queried.sum())


# -- classifier adapters ------------------------------------------------------

class _Learner:
    def __init__(self, agent: AgentConfig, D: int, K: int):
        self.agent = agent
        self.K = K
        self.prior = agent.prior or NiwPrior.default(D)
        self.kernel = KernelConfig(agent.gamma) if agent.gamma else KernelConfig.for_dimension(D)
        self.nondiscriminative = 0

    def fit(self, X, y, unlabelled=None):
        a = self.agent
        if a.classifier in ("gmm", "gmm_smooth"):
            return fit_supervised(X, y, self.prior, a.alpha, self.K)
        if a.classifier == "gmm_em":
            if unlabelled is None or len(unlabelled) == 0:
                return fit_supervised(X, y, self.prior, a.alpha, self.K)
            return em_fit(X, y, unlabelled, self.prior, a.alpha, self.K, a.em_tol, a.em_max_iter).posterior
        trainer = train_mrvm1 if a.classifier == "mrvm1" else train_mrvm2
        model = trainer(X, y, self.kernel, a.mrvm, self.K)
        if not model.discriminative:
            self.nondiscriminative += 1
        return model

    def predict(self, model, X) -> np.ndarray:
        if len(X) == 0:
            return np.empty((0, self.K))
        if self.agent.classifier.startswith("gmm"):
            return np.atleast_2d(predict_posterior(X, model))
        return np.atleast_2d(probit_class_probs(model, X))


def evaluate(posteriors: np.ndarray, truth: np.ndarray, process: DecisionProcess):
    """(decision accuracy, macro-f1) of a batch of predicted posteriors."""
    chosen, _ = optimal_action(posteriors, process)
    best = perfect_info_policy(truth, process)
    predicted = np.argmax(posteriors, axis=1) + 1
    return decision_accuracy(chosen, best), macro_f1(predicted, truth, process.K)


def _run(labelled: LabelledSet, pool: UnlabelledPool, test: Dataset, agent: AgentConfig,
         forced: Optional[np.ndarray]) -> CampaignResult:
    proc = agent.process
    K = proc.K
    if labelled.K != K or pool.K != K:
        raise ValueError("dataset and decision process disagree on K")
    if len(labelled) == 0:
        raise ValueError("labelled set must be nonempty")
    D = labelled.features.shape[1]
    learner = _Learner(agent, D, K)
    Xp = pool.features
    n = len(pool)
    smooth = agent.classifier == "gmm_smooth"
    em = agent.classifier == "gmm_em"

    Xl = [labelled.features]
    yl = [labelled.labels]
    pseudo_X: list = []
    pseudo_y: list = []
    seen_unlabelled = np.zeros(n, dtype=bool)
    conflicts = 0

    scripted = None
    if agent.decision_mode == "scripted":
        # leading entry covers the virtual undamaged start -> first pool step
        scripted = scripted_decisions(pool.hidden_labels(), proc, initial=UNDAMAGED)

    def train(step):
        X = np.vstack(Xl + pseudo_X) if pseudo_X else np.vstack(Xl)
        y = np.concatenate(yl + pseudo_y) if pseudo_y else np.concatenate(yl)
        try:
            return learner.fit(X, y, Xp[seen_unlabelled] if em else None)
        except Exception as exc:  # surface with step context
            raise CampaignError(step, exc) from exc

    model = train(-1)
    P = np.empty((n, K))
    ready = 0
    acc, f1 = evaluate(learner.predict(model, test.features), test.labels, proc)
    acc_traj, f1_traj = [acc], [f1]
    prop_traj = [class_proportions(np.concatenate(yl), K)]

    posts = np.empty((n, K))
    values = np.empty(n)
    queried = np.zeros(n, dtype=bool)
    actions = np.zeros(n, dtype=int)
    last_a, last_y = -1, UNDAMAGED   # virtual inspection before the stream

    for t in range(n):
        if t >= ready:
            ready = min(t + PREDICT_CHUNK, n)
            P[t:ready] = learner.predict(model, Xp[t:ready])
        p = P[t]
        posts[t] = p
        v = evpi(p, proc)
        values[t] = v
        ask = forced[t] if forced is not None else v > proc.inspection_cost
        if not ask:
            actions[t], _ = optimal_action(p, proc)
            seen_unlabelled[t] = True
            continue

        y = pool.reveal(t)
        queried[t] = True
        actions[t] = perfect_info_policy(y, proc)
        if smooth:
            if scripted is not None:
                d = scripted[last_a + 1:t + 1]
            else:
                d = np.concatenate([[DO_NOTHING if last_a < 0 else actions[last_a]], actions[last_a + 1:t]])
            obs = Xp[last_a + 1:t]
            try:
                ll = class_log_densities(obs, model) if len(obs) else np.empty((0, K))
                marg = smooth_log_likelihoods(last_y, y, ll, d, proc.transitions, t0=last_a)
                if len(obs):
                    pseudo_X.append(obs)
                    pseudo_y.append(pseudo_labels(marg))
            except EvidenceConflictError:
                conflicts += 1
        Xl.append(Xp[t:t + 1])
        yl.append(np.array([y]))
        last_a, last_y = t, y

        model = train(t)
        ready = t + 1
        acc, f1 = evaluate(learner.predict(model, test.features), test.labels, proc)
        acc_traj.append(acc)
        f1_traj.append(f1)
        prop_traj.append(class_proportions(np.concatenate(yl), K))

    return CampaignResult(
        agent=agent.label,
        time_index=np.asarray(pool.time_index),
        posteriors=posts,
        evpi=values,
        queried=queried,
        actions=actions,
        accuracy_trajectory=acc_traj,
        f1_trajectory=f1_traj,
        class_prop_trajectory=prop_traj,
        labelled_features=np.vstack(Xl),
        labelled_labels=np.concatenate(yl),
        smoothing_conflicts=conflicts,
        nondiscriminative_fits=learner.nondiscriminative,
    )


def run_campaign(labelled: LabelledSet, pool: UnlabelledPool, test: Dataset, agent: AgentConfig,
                 seed: int = 0) -> CampaignResult:
    """EVPI-guided campaign. Deterministic: ``seed`` is accepted for interface symmetry
    with the baseline; no step of the EVPI loop is random."""
    return _run(labelled, pool, test, agent, None)


def run_random_baseline(labelled: LabelledSet, pool: UnlabelledPool, test: Dataset, agent: AgentConfig,
                        n_queries: int, seed: int) -> CampaignResult:
    """Inspect ``n_queries`` pool positions chosen uniformly without replacement."""
    n = len(pool)
    if not 0 <= n_queries <= n:
        raise ValueError(f"n_queries={n_queries} must lie in 0..{n} (pool size)")
    rng = np.random.default_rng(seed)
    forced = np.zeros(n, dtype=bool)
    forced[rng.choice(n, size=n_queries, replace=False)] = True
    res = _run(labelled, pool, test, agent, forced)
    res.agent = f"{agent.label}_random"
    return res
